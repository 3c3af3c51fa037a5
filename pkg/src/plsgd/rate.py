"""Rate estimation from gap trajectories: slopes, ensemble curves, certificates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optimizers import Ensemble, Trajectory

__all__ = [
    "RateFit",
    "EnsembleStats",
    "Certificate",
    "InsufficientDataError",
    "theoretical_rate",
    "fit_rate",
    "ensemble_stats",
    "as_certificate",
]

MIN_FIT_POINTS = 5


class InsufficientDataError(ValueError):
    pass


def theoretical_rate(beta: float) -> float:
    """Exponent ``1 / (4 beta - 1)`` of the expected rate ``n**(-1/(4 beta - 1))``."""
    if not (0.5 <= beta <= 1.0):
        raise ValueError(f"beta must lie in [1/2, 1], got {beta}")
    return 1.0 / (4.0 * beta - 1.0)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    window: tuple[float, float]
    r_squared: float
    n_points: int
    n_dropped: int = 0


def _curve(traj_or_n, gaps=None):
    if isinstance(traj_or_n, Trajectory):
        return traj_or_n.n.astype(float), traj_or_n.gaps
    if gaps is None:
        raise TypeError("pass a Trajectory or the pair (n, gaps)")
    return np.asarray(traj_or_n, dtype=float), np.asarray(gaps, dtype=float)


def fit_rate(traj_or_n, gaps=None, window: tuple[float, float | None] = (1e3, None)) -> RateFit:
    """Least-squares fit of ``log gap`` against ``log n`` inside ``window``.

    Accepts a :class:`Trajectory` or explicit ``(n, gaps)`` arrays. Points
    with nonpositive or non-finite gap are dropped and counted.
    """
    n, g = _curve(traj_or_n, gaps)
    lo, hi = window
    hi = n.max() if hi is None else hi
    if not lo < hi:
        raise ValueError("window must satisfy n_lo < n_hi")
    inside = (n >= lo) & (n <= hi)
    usable = inside & np.isfinite(g) & (g > 0)
    if usable.sum() < MIN_FIT_POINTS:
        raise InsufficientDataError(f"only {usable.sum()} usable points in window {window}")
    lx, ly = np.log(n[usable]), np.log(g[usable])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - np.sum(resid**2) / ss_tot)
    return RateFit(float(slope), float(intercept), (float(lo), float(hi)), float(r2), int(usable.sum()), int((inside & ~usable).sum()))


@dataclass(frozen=True)
class EnsembleStats:
    n: np.ndarray
    mean: np.ndarray
    median: np.ndarray
    p10: np.ndarray
    p90: np.ndarray
    n_runs: int
    n_diverged: int


def _stack(trajectories) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(trajectories, Ensemble):
        return trajectories.n, trajectories.gaps, trajectories.diverged
    trajs = list(trajectories)
    if not trajs:
        raise ValueError("empty ensemble")
    n = trajs[0].n
    for t in trajs[1:]:
        if not np.array_equal(t.n, n):
            raise ValueError("trajectories must share the checkpoint grid")
    return n, np.stack([t.gaps for t in trajs]), np.array([t.diverged for t in trajs])


def ensemble_stats(trajectories) -> EnsembleStats:
    """Pointwise mean, median and 10/90 percentiles over non-diverged runs."""
    n, gaps, diverged = _stack(trajectories)
    if len(gaps) == 0:
        raise ValueError("empty ensemble")
    good = gaps[~diverged]
    if len(good) == 0:
        nan = np.full(len(n), np.nan)
        return EnsembleStats(n, nan, nan, nan, nan, len(gaps), int(diverged.sum()))
    p10, med, p90 = np.percentile(good, [10, 50, 90], axis=0)
    return EnsembleStats(n, good.mean(axis=0), med, p10, p90, len(gaps), int(diverged.sum()))


@dataclass(frozen=True)
class Certificate:
    fraction: float
    verdicts: np.ndarray
    sup_values: np.ndarray


def as_certificate(trajectories, p_exp: float, n0: int, bound: float) -> Certificate:
    """Fraction of runs with ``sup_{n >= n0} n**p_exp * gap_n <= bound``.

    The supremum runs over checkpoints only. Diverged runs fail.
    """
    n, gaps, diverged = _stack(trajectories)
    if not (n[0] <= n0 <= n[-1]):
        raise ValueError("n0 must lie within the checkpoint range")
    tail = n >= n0
    with np.errstate(invalid="ignore"):
        weighted = n[tail].astype(float) ** p_exp * gaps[:, tail]
    sup = np.where(np.isnan(weighted).any(axis=1), np.inf, np.max(weighted, axis=1, initial=-np.inf))
    verdicts = (sup <= bound) & ~diverged
    return Certificate(float(verdicts.mean()), verdicts, sup)
