import math

import numpy as np
import pytest
from scipy import integrate

from nlfem import (BallNorm, Kernel, KernelError, KernelKind, default_scaling,
                   evaluate, exact_moment_integrals, second_moment_indices)

ALL_KINDS = [(KernelKind.CONSTANT, 1), (KernelKind.RATIONAL, 1),
             (KernelKind.CONSTANT, 2), (KernelKind.RATIONAL, 2)]


def test_default_scalings():
    assert default_scaling(KernelKind.CONSTANT, 1) == pytest.approx(1.5)
    assert default_scaling(KernelKind.RATIONAL, 1) == pytest.approx(1.0)
    assert default_scaling(KernelKind.CONSTANT, 2) == pytest.approx(4 / math.pi)
    assert default_scaling(KernelKind.RATIONAL, 2) == pytest.approx(3 / math.pi)


def test_evaluate_1d_constant():
    k = Kernel.make(KernelKind.CONSTANT, 1, 0.02)
    assert evaluate(k, [0.0], [0.01]) == pytest.approx(3 / (2 * 0.02**3))
    assert evaluate(k, [0.0], [0.02 * 1.01]) == 0.0


def test_evaluate_2d_rational():
    k = Kernel.make(KernelKind.RATIONAL, 2, 0.1)
    val = evaluate(k, [0.0, 0.0], [0.05, 0.0])
    assert val == pytest.approx((3 / math.pi) / (0.1**3 * 0.05))
    assert val == pytest.approx(19098.59, rel=1e-4)


def test_evaluate_symmetric():
    k = Kernel.make(KernelKind.RATIONAL, 2, 0.3)
    x, y = np.array([0.1, 0.2]), np.array([0.25, 0.05])
    assert evaluate(k, x, y) == evaluate(k, y, x)


def test_rational_singularity_rejected():
    k = Kernel.make(KernelKind.RATIONAL, 1, 0.1)
    with pytest.raises(KernelError, match="singular"):
        evaluate(k, [0.4], [0.4])


def test_support_boundary():
    k = Kernel.make(KernelKind.CONSTANT, 2, 0.1)
    assert evaluate(k, [0.0, 0.0], [0.1, 0.0]) > 0.0  # closed ball
    assert evaluate(k, [0.0, 0.0], [0.1 + 1e-12, 0.0]) == 0.0


def _oracle_moments(kernel: Kernel) -> np.ndarray:
    """Adaptive-quadrature reference for the second-moment integrals."""
    d = kernel.horizon
    if kernel.dim == 1:
        val, _ = integrate.quad(lambda s: float(kernel.strength(abs(s))) * s * s,
                                -d, d, points=[0.0], limit=200)
        return np.array([val])
    out = []
    for beta in second_moment_indices(2):
        def f(theta, r):
            s = np.array([r * math.cos(theta), r * math.sin(theta)])
            return (float(kernel.strength(r)) * s[0] ** beta[0]
                    * s[1] ** beta[1] * r)
        val, _ = integrate.dblquad(f, 0.0, d, 0.0, 2 * math.pi,
                                   epsabs=1e-13, epsrel=1e-13)
        out.append(val)
    return np.array(out)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("kind,dim", ALL_KINDS)
def test_moments_match_quadrature_oracle(kind, dim):
    kernel = Kernel.make(kind, dim, 0.07)
    got = exact_moment_integrals(kernel)
    ref = _oracle_moments(kernel)
    assert np.allclose(got, ref, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("kind,dim", ALL_KINDS)
def test_default_scaling_normalizes_diagonal_moments(kind, dim):
    kernel = Kernel.make(kind, dim, 0.3)
    g = exact_moment_integrals(kernel)
    diag = [g[0]] if dim == 1 else [g[0], g[2]]
    assert np.allclose(diag, 1.0, rtol=1e-13)


def test_moment_closed_forms():
    z = 1.5
    k = Kernel(KernelKind.CONSTANT, 1, 0.02, z)
    assert exact_moment_integrals(k)[0] == pytest.approx(2 * z / 3, rel=1e-14)
    k = Kernel(KernelKind.RATIONAL, 2, 0.1, 3 / math.pi)
    g = exact_moment_integrals(k)
    assert g[0] == pytest.approx(1.0, rel=1e-14)
    assert g[1] == 0.0


def test_moments_independent_of_horizon():
    for d in (0.01, 0.3):
        k = Kernel.make(KernelKind.RATIONAL, 2, d)
        assert np.allclose(exact_moment_integrals(k), [1.0, 0.0, 1.0])


def test_max_norm_moments_numeric():
    k = Kernel.make(KernelKind.CONSTANT, 2, 0.1, ball_norm=BallNorm.MAX)
    g = exact_moment_integrals(k)
    # square support: diagonal moment is scaling * 4/3, off-diagonal vanishes
    assert g[0] == pytest.approx(4 * (4 / math.pi) / 3, rel=1e-8)
    assert g[2] == pytest.approx(g[0], rel=1e-8)
    assert abs(g[1]) < 1e-10


def test_invalid_kernel_parameters():
    with pytest.raises(KernelError):
        Kernel(KernelKind.CONSTANT, 3, 0.1, 1.0)
    with pytest.raises(KernelError):
        Kernel(KernelKind.CONSTANT, 1, -0.1, 1.0)
    with pytest.raises(KernelError):
        Kernel(KernelKind.CONSTANT, 1, 0.1, 0.0)
