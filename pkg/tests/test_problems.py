import math

import numpy as np
import pytest

from nlfem import (BoxDomain, ConfigError, build_uniform_mesh_1d,
                   build_uniform_mesh_2d, case_linear_1d, case_sin_1d,
                   case_sin_2d, get_case)


def test_sin_1d_values():
    case = case_sin_1d()
    assert case.source(np.array([[0.25]]))[0] == pytest.approx(4 * math.pi**2)
    assert case.solution(np.array([[0.0]]))[0] == pytest.approx(0.0, abs=1e-15)
    d = 0.02
    assert case.boundary(np.array([[-d]]))[0] == pytest.approx(math.sin(-2 * math.pi * d))
    assert case.gradient(np.array([[0.0]]))[0, 0] == pytest.approx(2 * math.pi)


def test_linear_1d_values():
    case = case_linear_1d()
    pts = np.array([[0.3], [1.02], [-0.02]])
    assert np.allclose(case.source(pts), 0.0)
    assert case.boundary(np.array([[1.02]]))[0] == pytest.approx(1.02)
    assert np.allclose(case.gradient(pts)[:, 0], 1.0)


def test_sin_2d_values():
    case = case_sin_2d()
    p = np.array([[0.25, 0.25]])
    assert case.source(p)[0] == pytest.approx(8 * math.pi**2)
    edge = np.array([[0.0, 0.3], [1.0, 0.7]])
    assert np.allclose(case.solution(edge), 0.0, atol=1e-12)
    assert np.allclose(case.gradient(p), 0.0, atol=1e-12)


@pytest.mark.parametrize("name", ["sin1d", "linear1d", "sin2d"])
def test_source_is_negative_laplacian(name):
    case = get_case(name)
    rng = np.random.default_rng(123)
    pts = rng.uniform(0.05, 0.95, size=(100, case.dim))
    step = 1e-4
    lap = np.zeros(len(pts))
    for axis in range(case.dim):
        e = np.zeros(case.dim)
        e[axis] = step
        lap += (case.solution(pts + e) - 2 * case.solution(pts)
                + case.solution(pts - e)) / step**2
    scale = np.abs(case.source(pts)).max()
    assert np.abs(-lap - case.source(pts)).max() <= 1e-5 * max(scale, 1.0)


@pytest.mark.parametrize("name,builder,h,delta", [
    ("sin1d", build_uniform_mesh_1d, 0.125, 0.25),
    ("sin2d", build_uniform_mesh_2d, 0.25, 0.25),
])
def test_boundary_data_equals_solution_on_constraint_nodes(name, builder, h, delta):
    case = get_case(name)
    mesh = builder(h, BoxDomain.unit(case.dim, delta))
    pts = mesh.nodes[mesh.constraint_nodes]
    assert np.array_equal(case.boundary(pts), case.solution(pts))


def test_unknown_case_rejected():
    with pytest.raises(ConfigError, match="unknown case"):
        get_case("cubic3d")
