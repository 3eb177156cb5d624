"""Manufactured solutions for convergence studies.

Each case bundles a closed-form local solution, the matching source term
(minus its Laplacian), the Dirichlet layer data (the solution itself), and
the gradient used in H1 errors.  All callables take (n, d) point arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import ConfigError

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ManufacturedCase:
    name: str
    dim: int
    solution: Callable[[np.ndarray], np.ndarray]
    source: Callable[[np.ndarray], np.ndarray]
    boundary: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]


def case_sin_1d() -> ManufacturedCase:
    """u(x) = sin(2 pi x) with source 4 pi^2 sin(2 pi x)."""

    def u(p):
        return np.sin(_TWO_PI * p[..., 0])

    def b(p):
        return 4.0 * math.pi**2 * np.sin(_TWO_PI * p[..., 0])

    def grad(p):
        return (_TWO_PI * np.cos(_TWO_PI * p[..., 0]))[..., None]

    return ManufacturedCase("sin1d", 1, u, b, u, grad)


def case_linear_1d() -> ManufacturedCase:
    """u(x) = x; zero source.  Exactly representable by the basis."""

    def u(p):
        return p[..., 0].copy()

    def b(p):
        return np.zeros(p.shape[:-1])

    def grad(p):
        return np.ones(p.shape[:-1])[..., None]

    return ManufacturedCase("linear1d", 1, u, b, u, grad)


def case_sin_2d() -> ManufacturedCase:
    """u(x) = sin(2 pi x1) sin(2 pi x2) with source 8 pi^2 times itself."""

    def u(p):
        return np.sin(_TWO_PI * p[..., 0]) * np.sin(_TWO_PI * p[..., 1])

    def b(p):
        return 8.0 * math.pi**2 * u(p)

    def grad(p):
        s1, c1 = np.sin(_TWO_PI * p[..., 0]), np.cos(_TWO_PI * p[..., 0])
        s2, c2 = np.sin(_TWO_PI * p[..., 1]), np.cos(_TWO_PI * p[..., 1])
        return np.stack([_TWO_PI * c1 * s2, _TWO_PI * s1 * c2], axis=-1)

    return ManufacturedCase("sin2d", 2, u, b, u, grad)


_CASES = {
    "sin1d": case_sin_1d,
    "linear1d": case_linear_1d,
    "sin2d": case_sin_2d,
}


def get_case(name: str) -> ManufacturedCase:
    try:
        return _CASES[name]()
    except KeyError:
        raise ConfigError(
            f"unknown case {name!r}; available: {sorted(_CASES)}"
        ) from None
