"""Test objectives with known minima and gradient-domination metadata.

All ``value`` and ``grad`` callables are vectorized: a point is an array whose
last axis has length ``dim``, and any leading axes are treated as a batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "PlMeta",
    "SmoothMeta",
    "Objective",
    "quadratic",
    "monomial",
    "double_well",
    "empirical_pl_constant",
    "finite_diff_grad",
    "grid_constants",
    "shipped_objectives",
]

PL_SCOPES = ("global", "local-in-minima", "local-in-fstar")
WORKING_BOX = 4.0
GRID_POINTS = 10_000


@dataclass(frozen=True)
class PlMeta:
    """Gradient domination ``||grad f|| >= c (f - f*)**beta`` on ``scope``."""

    beta: float
    c: float
    scope: str = "global"

    def __post_init__(self) -> None:
        if not (0.5 <= self.beta <= 1.0):
            raise ValueError(f"beta must lie in [1/2, 1], got {self.beta}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if self.scope not in PL_SCOPES:
            raise ValueError(f"unknown scope {self.scope!r}")


@dataclass(frozen=True)
class SmoothMeta:
    """Gradient Lipschitz constant ``L`` and function Lipschitz constant ``G``."""

    lipschitz_grad: float
    lipschitz_value: float


@dataclass(frozen=True)
class Objective:
    name: str
    dim: int
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    f_star: float = 0.0
    pl_meta: PlMeta | None = None
    lipschitz_meta: SmoothMeta | None = None
    minima: np.ndarray | None = field(default=None, repr=False)
    level: float | None = None

    def __call__(self, x):
        return self.value(np.asarray(x, dtype=float))

    def gap(self, x):
        """``f(x) - f_star`` (or relative to ``level`` when one is set)."""
        ref = self.f_star if self.level is None else self.level
        return self.value(np.asarray(x, dtype=float)) - ref


def grid_constants(profile_grad, lo: float, hi: float, points: int = GRID_POINTS) -> SmoothMeta:
    """Grid estimates of ``L`` and ``G`` for a one-dimensional profile.

    ``G`` is the largest ``|f'|`` on the grid and ``L`` the largest slope of
    ``f'`` between neighbouring grid points.
    """
    xs = np.linspace(lo, hi, points)
    g = profile_grad(xs[:, None])[:, 0]
    slopes = np.abs(np.diff(g)) / np.diff(xs)
    return SmoothMeta(float(slopes.max()), float(np.abs(g).max()))


def quadratic(dim: int = 1) -> Objective:
    """``f(x) = ||x||^2 / 2``: gradient domination with ``beta=1/2, c=sqrt(2)``."""
    value = lambda x: 0.5 * np.sum(x**2, axis=-1)
    grad = lambda x: np.array(x, dtype=float, copy=True)
    return Objective(
        name="quadratic",
        dim=dim,
        value=value,
        grad=grad,
        pl_meta=PlMeta(0.5, float(np.sqrt(2.0)), "global"),
        lipschitz_meta=SmoothMeta(1.0, WORKING_BOX * np.sqrt(dim)),
        minima=np.zeros((1, dim)),
    )


def monomial(p: float, dim: int = 1) -> Objective:
    """``f(x) = ||x||^p`` for ``p >= 2``.

    Along any ray ``|f'| = p f**((p-1)/p)``, so the gradient-domination
    constant is exactly ``p`` with exponent ``beta = (p-1)/p``. For ``dim > 1``
    the function is the radial extension of the one-dimensional monomial.
    """
    if not p >= 2:
        raise ValueError(f"monomial exponent must be >= 2, got {p}")
    p = float(p)

    def value(x):
        return np.sqrt(np.sum(x**2, axis=-1)) ** p

    def grad(x):
        r = np.sqrt(np.sum(x**2, axis=-1, keepdims=True))
        return p * r ** (p - 2.0) * x

    if dim == 1:
        # the radial formulas reduce to these, but avoid the sqrt in the hot loop
        def value(x):  # noqa: F811
            return np.abs(x[..., 0]) ** p

        def grad(x):  # noqa: F811
            return p * np.abs(x) ** (p - 1.0) * np.sign(x)

    profile = lambda t: p * np.abs(t) ** (p - 1.0) * np.sign(t)
    meta = grid_constants(profile, -WORKING_BOX, WORKING_BOX)
    return Objective(
        name=f"monomial-p{p:g}",
        dim=dim,
        value=value,
        grad=grad,
        pl_meta=PlMeta((p - 1.0) / p, p, "global"),
        lipschitz_meta=meta,
        minima=np.zeros((1, dim)),
    )


def _dw_value(x):
    t = x[..., 0]
    return (t * t - 1.0) ** 2


def _dw_grad(x):
    return 4.0 * x * (x * x - 1.0)


def double_well(r_bold: float = 0.5, points: int = GRID_POINTS) -> Objective:
    """``f(x) = (x^2 - 1)^2`` with isolated minima at -1 and +1.

    The local gradient-domination constant (``beta = 1/2``) is the grid
    minimum of ``|f'| / sqrt(f)`` over the punctured ``r_bold``-neighbourhood
    of the minima. ``L`` is the grid maximum of ``|f''|`` on the same
    neighbourhood and ``G`` the maximum of ``|f'|`` on the inner ball of
    radius ``r_bold / 2``.
    """
    minima = np.array([[-1.0], [1.0]])
    probes = []
    for m in minima[:, 0]:
        xs = np.linspace(m - r_bold, m + r_bold, points)
        probes.append(xs[np.abs(xs - m) > 0])
    probe = np.concatenate(probes)[:, None]
    c = empirical_pl_constant(
        Objective("double-well", 1, _dw_value, _dw_grad), 0.5, probe
    )
    if not c > 0:
        raise ValueError(f"r_bold={r_bold} reaches a stationary point; no local PL constant")
    near = np.concatenate([np.linspace(m - r_bold, m + r_bold, points) for m in (-1.0, 1.0)])
    curvature = np.abs(12.0 * near**2 - 4.0).max()
    inner = np.concatenate([np.linspace(m - r_bold / 2, m + r_bold / 2, points) for m in (-1.0, 1.0)])
    g_max = np.abs(_dw_grad(inner)).max()
    return Objective(
        name="double-well",
        dim=1,
        value=_dw_value,
        grad=_dw_grad,
        pl_meta=PlMeta(0.5, float(c), "local-in-minima"),
        lipschitz_meta=SmoothMeta(float(curvature), float(g_max)),
        minima=minima,
        level=0.0,
    )


def shipped_objectives() -> list[Objective]:
    """Every objective factory with its default arguments."""
    return [quadratic(), quadratic(3), monomial(2), monomial(3), monomial(6), monomial(12), monomial(3, dim=2), double_well()]


def empirical_pl_constant(obj: Objective, beta: float, points) -> float:
    """Tightest ``c`` with ``||grad f|| >= c (f - f*)**beta`` on ``points``."""
    pts = np.asarray(points, dtype=float).reshape(-1, obj.dim)
    if len(pts) == 0:
        raise ValueError("empirical_pl_constant needs at least one probe point")
    gaps = obj.value(pts) - obj.f_star
    if np.any(gaps <= 0):
        raise ValueError("every probe point must satisfy f(x) > f_star")
    norms = np.linalg.norm(obj.grad(pts), axis=-1)
    return float(np.min(norms / gaps**beta))


def finite_diff_grad(obj: Objective, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``obj`` at ``x``."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float).reshape(obj.dim)
    out = np.empty(obj.dim)
    for i in range(obj.dim):
        e = np.zeros(obj.dim)
        e[i] = h
        out[i] = (obj.value(x + e) - obj.value(x - e)) / (2.0 * h)
    return out
