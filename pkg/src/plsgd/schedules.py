"""Polynomially decaying step sizes and rate-admissibility arithmetic.

The schedule is ``gamma_n = gamma1 * n**(-theta)`` with ``theta`` in the open
interval (1/2, 1). The helpers below relate the gradient-domination exponent
``beta`` to the exponent ``theta`` and to the admissible range of ``eta`` in the
almost-sure rate ``o(n^{-(1 - eta)})``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "StepSchedule",
    "RateParams",
    "step_size",
    "optimal_theta",
    "clamp_theta",
    "admissible_eta_lower_bound",
    "squared_step_sum",
    "max_gamma1_for_budget",
]

THETA_CLAMP = 1e-3
_PARTIAL_TERMS = 1_000_000


def _check_beta(beta: float) -> None:
    if not (0.5 <= beta <= 1.0):
        raise ValueError(f"beta must lie in [1/2, 1], got {beta}")


def _check_theta(theta: float) -> None:
    if not (0.5 < theta < 1.0):
        raise ValueError(f"theta must lie in the open interval (1/2, 1), got {theta}")


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes ``gamma1 * n**(-theta)``.

    Instances are callable: ``sched(n)`` accepts an integer or an integer
    array and returns the matching step sizes.
    """

    gamma1: float
    theta: float

    def __post_init__(self) -> None:
        if not (self.gamma1 > 0 and np.isfinite(self.gamma1)):
            raise ValueError(f"gamma1 must be positive and finite, got {self.gamma1}")
        _check_theta(self.theta)

    def __call__(self, n):
        return step_size(self, n)


@dataclass(frozen=True)
class RateParams:
    """Exponents entering the admissibility conditions of the rate lemma."""

    beta: float
    eta: float
    q: float = 1.0

    def __post_init__(self) -> None:
        _check_beta(self.beta)
        if not (0.0 < self.eta < 1.0):
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if not (1.0 <= self.q < 2.0):
            raise ValueError(f"q must lie in [1, 2), got {self.q}")

    def is_admissible(self, theta: float) -> bool:
        """True when ``eta`` exceeds the lower bound for this ``theta``."""
        return self.eta > admissible_eta_lower_bound(self.beta, theta)


def step_size(sched: StepSchedule, n):
    """Return ``gamma1 * n**(-theta)`` for scalar or array ``n >= 1``."""
    n_arr = np.asarray(n, dtype=float)
    out = sched.gamma1 * n_arr ** (-sched.theta)
    return float(out) if out.ndim == 0 else out


def optimal_theta(beta: float) -> float:
    """Return ``2 beta / (4 beta - 1)``, the exponent matching the best rate.

    For ``beta = 1/2`` this is 1, which is outside the admissible open
    interval; pass the result through :func:`clamp_theta` before building a
    :class:`StepSchedule`.
    """
    _check_beta(beta)
    return 2.0 * beta / (4.0 * beta - 1.0)


def clamp_theta(theta: float, margin: float = THETA_CLAMP) -> float:
    """Pull ``theta`` inside ``(1/2, 1)`` by at least ``margin`` from 1."""
    return min(theta, 1.0 - margin)


def admissible_eta_lower_bound(beta: float, theta: float) -> float:
    """Infimum of the admissible ``eta`` for the given ``beta`` and ``theta``.

    Any rate exponent below ``1 - bound`` is certified almost surely.
    """
    _check_beta(beta)
    _check_theta(theta)
    first = 2.0 - 2.0 * theta
    if beta == 0.5:
        return first
    second = (theta + 2.0 * beta - 2.0) / (2.0 * beta - 1.0)
    return max(first, second)


def squared_step_sum(theta: float) -> float:
    """Evaluate ``sum_{n>=1} n**(-2 theta)``.

    The first million terms are summed directly; the remainder uses the
    Euler-Maclaurin tail ``N^{1-s}/(s-1) - N^{-s}/2 + s N^{-s-1}/12`` whose
    truncation error is far below 1e-10 relative.
    """
    _check_theta(theta)
    s = 2.0 * theta
    n = np.arange(1, _PARTIAL_TERMS + 1, dtype=float)
    # sum small terms first to limit rounding
    partial = float(np.sum((n ** (-s))[::-1]))
    big_n = float(_PARTIAL_TERMS)
    tail = big_n ** (1.0 - s) / (s - 1.0) - 0.5 * big_n ** (-s) + s * big_n ** (-s - 1.0) / 12.0
    return partial + tail


def max_gamma1_for_budget(theta: float, budget: float) -> float:
    """Largest ``gamma1`` with ``gamma1**2 * sum n**(-2 theta) <= budget``."""
    if not budget > 0:
        raise ValueError(f"budget must be positive, got {budget}")
    return float(np.sqrt(budget / squared_step_sum(theta)))
