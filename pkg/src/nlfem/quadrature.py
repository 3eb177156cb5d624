"""Optimization-based quadrature rules over interaction balls.

Inner integrals of the nonlocal bilinear form are evaluated on a regular
point grid spread over the whole ball around each outer quadrature point,
never element by element.  The weights are the minimal-Euclidean-norm
solution of exactness constraints for the functions kernel * (y-x)^beta
with |beta| = 2, obtained from the normal equations of the constraint
system with a pseudoinverse fallback.

Near the layer boundary the ball sticks out of the meshed region.  There
the grid is first intersected with the region grown by the configured
extension, weights are solved on that extended set against the full-ball
moments, and points falling outside the meshed region are then discarded
together with their weights.  Solving before restricting is deliberate:
with extension equal to the horizon every near-boundary point keeps its
full-ball weight, which is what restores second-order accuracy.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .exceptions import QuadratureError
from .geometry import BallNorm, BoxDomain
from .kernels import Kernel, exact_moment_integrals

_RANK_CUTOFF = 1e-12
_RESIDUAL_TOL = 1e-12


@dataclass(frozen=True)
class InnerGridSpec:
    """Regular grid over the ball: ``points_per_radius`` points per horizon length."""

    points_per_radius: int
    dim: int

    def __post_init__(self):
        if self.points_per_radius < 1:
            raise QuadratureError("points_per_radius must be at least 1")
        if self.dim not in (1, 2):
            raise QuadratureError(f"unsupported dimension {self.dim}")

    def spacing(self, horizon: float) -> float:
        return horizon / self.points_per_radius

    @property
    def grid_size(self) -> int:
        return (2 * self.points_per_radius) ** self.dim


@dataclass
class OffsetSet:
    """Grid offsets relative to the ball center plus an inclusion mask."""

    offsets: np.ndarray  # (n, d), the full symmetric grid
    included: np.ndarray  # (n,) bool

    @property
    def active(self) -> np.ndarray:
        return self.offsets[self.included]


@dataclass
class InnerQuadratureRule:
    """Inner rule: offsets relative to the center, weights, and diagnostics.

    ``strengths`` caches the kernel value at each offset.  ``residual`` is the
    constraint defect of the solve that produced the weights (for truncated
    rules: of the extended-set solve, before the final discard).
    """

    offsets: np.ndarray
    weights: np.ndarray
    strengths: np.ndarray
    residual: float
    truncated: bool = False

    def __post_init__(self):
        if not np.all(np.isfinite(self.weights)):
            raise QuadratureError("non-finite quadrature weights")

    @property
    def size(self) -> int:
        return len(self.weights)

    def dump_csv(self, path) -> None:
        dim = self.offsets.shape[1]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(f"offset_{'xy'[k]}" for k in range(dim)) + ",weight\n")
            for off, w in zip(self.offsets, self.weights):
                fh.write(",".join(repr(float(c)) for c in off) + f",{float(w)!r}\n")


def generate_offsets(spec: InnerGridSpec, horizon: float) -> OffsetSet:
    """Symmetric grid of (2n)^d offsets, components at odd multiples of spacing/2."""
    n = spec.points_per_radius
    half = 0.5 * spec.spacing(horizon)
    ks = np.concatenate([np.arange(-n, 0), np.arange(1, n + 1)])
    axis = (2 * ks - np.sign(ks)) * half
    if spec.dim == 1:
        offs = axis.reshape(-1, 1)
    else:
        a, b = np.meshgrid(axis, axis, indexing="ij")
        offs = np.stack([a.ravel(), b.ravel()], axis=1)
    return OffsetSet(offsets=offs, included=np.ones(len(offs), dtype=bool))


def filter_to_ball(offsets: OffsetSet, horizon: float, ball_norm: BallNorm) -> OffsetSet:
    """Restrict the inclusion mask to the closed ball of radius horizon."""
    dist = ball_norm.length(offsets.offsets)
    included = offsets.included & (dist <= horizon)
    if not included.any():
        raise QuadratureError("no quadrature points fall inside the ball")
    return OffsetSet(offsets=offsets.offsets, included=included)


def _monomials(offsets: np.ndarray, dim: int) -> np.ndarray:
    """(y-x)^beta for each |beta| = 2 row and each offset column."""
    if dim == 1:
        return (offsets[:, 0] ** 2)[None, :]
    rows = [offsets[:, 0] ** 2, offsets[:, 0] * offsets[:, 1], offsets[:, 1] ** 2]
    return np.stack(rows, axis=0)


def constraint_matrix(kernel: Kernel, center, points) -> np.ndarray:
    """Constraint matrix: one row per second-order multi-index.

    Entry (a, j) is kernel(center, x_j) * (x_j - center)^beta_a.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    offs = pts - np.asarray(center, dtype=float).reshape(1, -1)
    return _constraint_matrix_from_offsets(kernel, offs)


def _constraint_matrix_from_offsets(kernel: Kernel, offs: np.ndarray) -> np.ndarray:
    r = kernel.ball_norm.length(offs)
    if np.any(r < 1e-14 * kernel.horizon):
        raise QuadratureError("singular constraint: quadrature point coincides with the center")
    return kernel.strength(r)[None, :] * _monomials(offs, kernel.dim)


def solve_weights(B: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimal-norm weights satisfying B w = g, with the achieved residual.

    Solves through the normal matrix B B^T; singular values below
    1e-12 * sigma_max are truncated, which handles redundant constraints.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    g = np.asarray(g, dtype=float).ravel()
    S = B @ B.T
    U, s, Vt = np.linalg.svd(S)
    if s[0] <= 0.0:
        raise QuadratureError("degenerate constraints: zero constraint matrix")
    keep = s > _RANK_CUTOFF * s[0]
    if not keep.any():
        raise QuadratureError("degenerate constraints: all singular values below cutoff")
    w = B.T @ (Vt.T[:, keep] @ ((U[:, keep].T @ g) / s[keep]))
    residual = float(np.linalg.norm(B @ w - g))
    return w, residual


def _check_residual(residual: float, g: np.ndarray) -> None:
    if residual > _RESIDUAL_TOL * max(float(np.linalg.norm(g)), 1e-300):
        raise QuadratureError(
            f"inner rule constraint residual {residual:.3e} exceeds tolerance"
        )


class RuleCache:
    """Thread-safe cache of inner rules keyed by kernel, grid, and truncation mask."""

    def __init__(self):
        self._data: dict = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get_or_build(self, key, builder):
        with self._lock:
            if key in self._data:
                self.hits += 1
                return self._data[key]
        value = builder()
        with self._lock:
            # First writer wins; builders are deterministic so the value is
            # identical regardless of which thread got here first.
            if key in self._data:
                self.hits += 1
            else:
                self._data[key] = value
                self.misses += 1
            return self._data[key]

    def clear(self):
        with self._lock:
            self._data.clear()
            self.hits = 0
            self.misses = 0


_default_cache = RuleCache()


def default_cache() -> RuleCache:
    return _default_cache


def full_ball_rule(kernel: Kernel, spec: InnerGridSpec,
                   cache: RuleCache | None = None) -> InnerQuadratureRule:
    """Rule for a ball entirely inside the region; computed once and reused."""
    if spec.dim != kernel.dim:
        raise QuadratureError("grid spec dimension does not match kernel dimension")
    cache = cache or _default_cache
    key = ("full", kernel, spec.points_per_radius)
    return cache.get_or_build(key, lambda: _build_full_rule(kernel, spec))


def _build_full_rule(kernel: Kernel, spec: InnerGridSpec) -> InnerQuadratureRule:
    offs = filter_to_ball(generate_offsets(spec, kernel.horizon),
                          kernel.horizon, kernel.ball_norm).active
    B = _constraint_matrix_from_offsets(kernel, offs)
    g = exact_moment_integrals(kernel)
    w, residual = solve_weights(B, g)
    _check_residual(residual, g)
    return InnerQuadratureRule(
        offsets=offs, weights=w,
        strengths=kernel.strength(kernel.ball_norm.length(offs)),
        residual=residual, truncated=False,
    )


def truncated_ball_rule(kernel: Kernel, center, domain: BoxDomain,
                        spec: InnerGridSpec,
                        cache: RuleCache | None = None) -> InnerQuadratureRule:
    """Rule for a ball clipped by the meshed region boundary.

    Grid points are kept if they fall in the region extended by
    ``domain.extension``; weights are solved on that set against the
    full-ball moments; points outside the meshed region are then dropped
    along with their weights.  Centers inside the box get the shared
    full-ball rule unchanged.
    """
    cache = cache or _default_cache
    center = np.asarray(center, dtype=float)
    if domain.contains_box(center):
        return full_ball_rule(kernel, spec, cache)
    full = full_ball_rule(kernel, spec, cache)
    pts = center + full.offsets
    in_extended = domain.contains_extended(pts)
    if not in_extended.any():
        raise QuadratureError("no inner quadrature points inside the extended region")
    in_meshed = domain.contains_meshed(pts)
    retained = in_extended & in_meshed
    if not retained.any():
        raise QuadratureError("no inner quadrature points retained inside the meshed region")

    if in_extended.all():
        weights, residual = full.weights, full.residual
    else:
        sub_weights, residual = solve_weights_on_subset(
            kernel, spec, full.offsets, in_extended, cache)
        weights = np.zeros(full.size)
        weights[in_extended] = sub_weights

    return InnerQuadratureRule(
        offsets=full.offsets[retained],
        weights=weights[retained],
        strengths=full.strengths[retained],
        residual=residual,
        truncated=True,
    )


def solve_weights_on_subset(kernel: Kernel, spec: InnerGridSpec,
                            offsets: np.ndarray, mask: np.ndarray,
                            cache: RuleCache | None = None) -> tuple[np.ndarray, float]:
    """Cached minimal-norm solve on a masked offset subset, full-ball moments.

    Keyed by the inclusion mask; on perturbed meshes near the boundary only
    a small number of distinct masks occur, so identical systems are never
    re-solved.
    """
    cache = cache or _default_cache
    key = ("trunc", kernel, spec.points_per_radius, mask.tobytes())

    def build():
        B = _constraint_matrix_from_offsets(kernel, offsets[mask])
        g = exact_moment_integrals(kernel)
        w, residual = solve_weights(B, g)
        _check_residual(residual, g)
        return w, residual

    return cache.get_or_build(key, build)


def closed_form_weights_1d_constant(points_per_radius: int, horizon: float) -> np.ndarray:
    """Analytic full-ball weights for the 1D constant kernel.

    Returned in the same ascending-offset order as generate_offsets.  This is
    the corrected closed form 20*h*n*(2k - sgn k)^2 / (7 - 40 n^2 + 48 n^4);
    see the README for the derivation check at n = 1 (both weights 4h/3).
    """
    n = points_per_radius
    if n < 1:
        raise QuadratureError("points_per_radius must be at least 1")
    ks = np.concatenate([np.arange(-n, 0), np.arange(1, n + 1)])
    num = 20.0 * horizon * n * (2 * ks - np.sign(ks)) ** 2
    den = 7.0 - 40.0 * n**2 + 48.0 * n**4
    return num / den
