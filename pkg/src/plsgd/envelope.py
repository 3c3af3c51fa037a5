"""Deterministic envelopes of the supermartingale recursion.

The conditional-expectation inequality

    E[Y_{n+1} | F_n] <= (1 + c1 g_n^2) Y_n - c2 g_n Y_n^{2 beta} + c3 g_n^2

is iterated as an equality (clamped at zero). The weighted sequence
``n**(1 - eta) * y_n`` then shows whether a candidate ``eta`` is admissible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .schedules import StepSchedule, admissible_eta_lower_bound, optimal_theta

__all__ = [
    "RecursionCoefficients",
    "envelope_iterate",
    "weighted_envelope_ratio",
    "qtrick_max",
    "qtrick_constant",
    "check_sequence_lemma",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RecursionCoefficients:
    c1: float
    c2: float
    c3: float
    beta: float

    def __post_init__(self) -> None:
        if self.c1 < 0 or self.c3 < 0:
            raise ValueError("c1 and c3 must be nonnegative")
        if not self.c2 > 0:
            raise ValueError("c2 must be positive")
        if not (0.5 <= self.beta <= 1.0):
            raise ValueError(f"beta must lie in [1/2, 1], got {self.beta}")


def envelope_iterate(
    coef: RecursionCoefficients,
    sched: StepSchedule | Callable,
    y1: float,
    n_max: int,
) -> np.ndarray:
    """Return ``y_1, ..., y_{n_max}`` of the clamped equality recursion.

    ``sched`` is any callable mapping an index array to step sizes. Each time
    the unclamped update would go negative the event is logged at DEBUG
    level and the value is set to zero.
    """
    if y1 < 0:
        raise ValueError("y1 must be nonnegative")
    gam = np.asarray(sched(np.arange(1, n_max, dtype=float)), dtype=float)
    grow = (1.0 + coef.c1 * gam * gam).tolist()
    pull = (coef.c2 * gam).tolist()
    push = (coef.c3 * gam * gam).tolist()
    p = 2.0 * coef.beta
    y = float(y1)
    out = [y]
    clamps = 0
    for i in range(n_max - 1):
        nxt = grow[i] * y - pull[i] * y**p + push[i]
        if nxt < 0.0:
            clamps += 1
            log.debug("envelope clamped at n=%d (value %.3e)", i + 2, nxt)
            nxt = 0.0
        y = nxt
        out.append(y)
    if clamps:
        log.info("envelope clamped %d times", clamps)
    return np.asarray(out)


def weighted_envelope_ratio(
    beta: float,
    eta_offset: float,
    n_lo: int = 1_000,
    n_hi: int = 1_000_000,
    coef: RecursionCoefficients | None = None,
    gamma1: float = 1.0,
    y1: float = 1.0,
) -> float:
    """Ratio of ``n**(1-eta) y_n`` at ``n_hi`` to its value at ``n_lo``.

    ``theta`` is the optimal exponent for ``beta`` and ``eta`` is the
    admissibility lower bound shifted by ``eta_offset``.
    """
    theta = optimal_theta(beta)
    eta = admissible_eta_lower_bound(beta, theta) + eta_offset
    coef = coef or RecursionCoefficients(0.0, 1.0, 1.0, beta)
    y = envelope_iterate(coef, StepSchedule(gamma1, theta), y1, n_hi)
    w = lambda n: n ** (1.0 - eta) * y[n - 1]
    return float(w(n_hi) / w(n_lo))


def qtrick_max(a: float, b: float, beta: float) -> tuple[float, float]:
    """Maximizer and maximum of ``x -> a x - b x**(2 beta)`` on ``x >= 0``."""
    if not (0.5 < beta <= 1.0):
        raise ValueError(f"beta must lie in (1/2, 1], got {beta}")
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    xbar = (a / (2.0 * b * beta)) ** (1.0 / (2.0 * beta - 1.0))
    return float(xbar), float(a * xbar - b * xbar ** (2.0 * beta))


def qtrick_constant(beta: float) -> float:
    """``max_x (x - x**(2 beta))``, i.e. ``(2 beta)^{-1/(2beta-1)} (1 - 1/(2 beta))``.

    Scaling gives ``max_x (a x - b x**(2 beta)) = qtrick_constant(beta) * a**(2beta/(2beta-1)) * b**(-1/(2beta-1))``.
    """
    if not (0.5 < beta <= 1.0):
        raise ValueError(f"beta must lie in (1/2, 1], got {beta}")
    return (2.0 * beta) ** (-1.0 / (2.0 * beta - 1.0)) * (1.0 - 1.0 / (2.0 * beta))


def check_sequence_lemma(
    w1: float,
    a_rule: Callable,
    b_rule: Callable,
    n_max: int,
) -> tuple[float, bool]:
    """Iterate ``w_{n+1} = (1 - a_n) w_n + b_n`` from ``w_1``.

    ``a_rule`` and ``b_rule`` map an index array to coefficient arrays.
    Returns the value ``w_{n_max}`` and whether the last tenth of the
    sequence is non-increasing.
    """
    n = np.arange(1, n_max, dtype=float)
    a = np.broadcast_to(np.asarray(a_rule(n), dtype=float), n.shape)
    b = np.broadcast_to(np.asarray(b_rule(n), dtype=float), n.shape)
    if np.any((a < 0) | (a > 1)):
        raise ValueError("a_n must lie in [0, 1] at every probed index")
    if np.any(b < 0):
        raise ValueError("b_n must be nonnegative")
    keep = (1.0 - a).tolist()
    add = b.tolist()
    w = float(w1)
    out = [w]
    for i in range(n_max - 1):
        w = keep[i] * w + add[i]
        out.append(w)
    seq = np.asarray(out)
    tail = seq[int(0.9 * n_max) :]
    return float(seq[-1]), bool(len(tail) < 2 or np.all(np.diff(tail) <= 0))
