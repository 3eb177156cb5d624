"""Nonlocal interaction kernels and their exact second-moment integrals.

Two kernel families are supported on balls of radius ``horizon``: a constant
profile scaling/horizon^(d+2) and a rational profile scaling/(horizon^(d+1) r).
With the default scaling constants the diagonal second moments over a full
Euclidean ball equal one, which is exactly the normalization that makes the
nonlocal operator converge to the classical Laplacian as the horizon shrinks.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import KernelError
from .geometry import BallNorm


class KernelKind(enum.Enum):
    CONSTANT = "constant"
    RATIONAL = "rational"


_DEFAULT_SCALING = {
    (KernelKind.CONSTANT, 1): 1.5,
    (KernelKind.RATIONAL, 1): 1.0,
    (KernelKind.CONSTANT, 2): 4.0 / math.pi,
    (KernelKind.RATIONAL, 2): 3.0 / math.pi,
}


def default_scaling(kind: KernelKind, dim: int) -> float:
    """Scaling constant that normalizes the diagonal second moments to one."""
    try:
        return _DEFAULT_SCALING[(kind, dim)]
    except KeyError:
        raise KernelError(f"no default scaling for kind={kind}, dim={dim}") from None


@dataclass(frozen=True)
class Kernel:
    kind: KernelKind
    dim: int
    horizon: float
    scaling: float
    ball_norm: BallNorm = BallNorm.EUCLIDEAN

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise KernelError(f"unsupported dimension {self.dim}")
        if not self.horizon > 0:
            raise KernelError(f"horizon must be positive, got {self.horizon}")
        if not self.scaling > 0:
            raise KernelError(f"scaling must be positive, got {self.scaling}")

    @classmethod
    def make(cls, kind: KernelKind, dim: int, horizon: float,
             scaling: float | None = None,
             ball_norm: BallNorm = BallNorm.EUCLIDEAN) -> "Kernel":
        if scaling is None:
            scaling = default_scaling(kind, dim)
        return cls(kind, dim, horizon, scaling, ball_norm)

    def strength(self, r: np.ndarray) -> np.ndarray:
        """Kernel value as a function of ball-norm distance r, 0 < r <= horizon.

        No support check; callers guarantee r is inside the ball.
        """
        r = np.asarray(r, dtype=float)
        if self.kind is KernelKind.CONSTANT:
            return np.full_like(r, self.scaling / self.horizon ** (self.dim + 2))
        return self.scaling / (self.horizon ** (self.dim + 1) * r)


def evaluate(kernel: Kernel, x, y) -> float:
    """Kernel value at a point pair; zero outside the ball, symmetric in (x, y)."""
    dx = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    r = float(kernel.ball_norm.length(dx))
    if r > kernel.horizon:
        return 0.0
    if kernel.kind is KernelKind.RATIONAL and r < 1e-14 * kernel.horizon:
        raise KernelError("singular evaluation: rational kernel at coincident points")
    return float(kernel.strength(r))


def second_moment_indices(dim: int) -> list[tuple[int, ...]]:
    """Multi-indices of total degree two, in fixed order."""
    if dim == 1:
        return [(2,)]
    return [(2, 0), (1, 1), (0, 2)]


def exact_moment_integrals(kernel: Kernel) -> np.ndarray:
    """Integrals of kernel * (y-x)^beta over the full ball, |beta| = 2.

    Independent of the center.  Euclidean balls use closed forms; max-norm
    balls fall back to numerical quadrature.
    """
    return _moment_integrals_cached(kernel).copy()


@lru_cache(maxsize=None)
def _moment_integrals_cached(kernel: Kernel) -> np.ndarray:
    z = kernel.scaling
    if kernel.ball_norm is BallNorm.EUCLIDEAN:
        if kernel.dim == 1:
            g = 2.0 * z / 3.0 if kernel.kind is KernelKind.CONSTANT else z
            return np.array([g])
        diag = z * math.pi / 4.0 if kernel.kind is KernelKind.CONSTANT else z * math.pi / 3.0
        return np.array([diag, 0.0, diag])
    if kernel.dim == 1:
        # 1D max-norm ball coincides with the Euclidean one.
        g = 2.0 * z / 3.0 if kernel.kind is KernelKind.CONSTANT else z
        return np.array([g])
    return _square_moments_numeric(kernel)


def _square_moments_numeric(kernel: Kernel) -> np.ndarray:
    from scipy import integrate

    d = kernel.horizon

    def integrand(beta):
        def f(s2, s1):
            r = max(abs(s1), abs(s2))
            if r == 0.0:
                return 0.0
            return float(kernel.strength(r)) * s1 ** beta[0] * s2 ** beta[1]

        return f

    out = []
    for beta in second_moment_indices(2):
        val, _ = integrate.dblquad(integrand(beta), -d, d, -d, d,
                                   epsabs=1e-12, epsrel=1e-12)
        out.append(val)
    return np.array(out)
