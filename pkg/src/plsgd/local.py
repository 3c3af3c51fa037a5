"""Local trapping analysis around isolated minima.

A run started close to a minimum stays in a neighbourhood ``U`` with high
probability when the step sizes are small enough. This module provides the
regions, the step-size budget, an SGD driver that tracks region membership,
and the pathwise statistics ``M_n``, ``S_n`` and ``R_n = M_n^2 + S_n`` whose
smallness forces the iterates to stay in ``U``.

For ``beta = 1/2`` the statistic ``M_n`` obeys

    M_n = (1 - gamma_n c^2) M_{n-1} + gamma_n xi_{n+1} 1{Omega_n},

with ``xi_{n+1} = -<grad f(X_n), V_{n+1} - grad f(X_n)>``. For ``beta > 1/2``
the factor becomes ``1 - gamma_n^q c^2`` and a deterministic drift
``c_tilde * sum gamma_k^{(2 beta q - 1)/(2 beta - 1)}`` enters the bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .envelope import qtrick_constant
from .objectives import Objective
from .optimizers import Ensemble, _NoiseFeed, checkpoint_grid, config_digest
from .oracle import NoiseModel, substream
from .schedules import StepSchedule, max_gamma1_for_budget

__all__ = [
    "BallRegion",
    "SublevelRegion",
    "LocalRegion",
    "InvalidRegionError",
    "StayReport",
    "ProofTrace",
    "RunRecord",
    "TrackedEnsemble",
    "LocalSetup",
    "region_contains",
    "gap_within",
    "compute_s",
    "choose_epsilon",
    "required_budget",
    "jump_budget",
    "double_well_setup",
    "track_ensemble",
    "run_with_tracking",
    "proof_statistics",
]


class InvalidRegionError(ValueError):
    pass


@dataclass(frozen=True)
class BallRegion:
    """``U = {x : dist(x, minima) < r_bold / 2}``; ``U_1`` adds ``f - level <= epsilon / 2``."""

    minima: np.ndarray
    r_bold: float
    level: float = 0.0
    epsilon: float | None = None

    def __post_init__(self) -> None:
        m = np.atleast_2d(np.asarray(self.minima, dtype=float))
        if len(m) == 0:
            raise InvalidRegionError("at least one minimum is required")
        object.__setattr__(self, "minima", m)
        if not self.r_bold > 0:
            raise InvalidRegionError("r_bold must be positive")
        if self.epsilon is not None and not self.epsilon > 0:
            raise InvalidRegionError("epsilon must be positive")

    def distance(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        diff = x[..., None, :] - self.minima
        return np.min(np.linalg.norm(diff, axis=-1), axis=-1)


@dataclass(frozen=True)
class SublevelRegion:
    """``U = {f - f_star <= 2 eps + sqrt(eps)}`` and ``U_1 = {f - f_star <= eps / 2}``.

    ``r`` is the radius on which gradient domination holds uniformly and must
    satisfy ``2 eps + sqrt(eps) < r``.
    """

    f_star: float
    r: float
    epsilon: float

    def __post_init__(self) -> None:
        if not (self.r > 0 and self.epsilon > 0):
            raise InvalidRegionError("r and epsilon must be positive")
        if not 2 * self.epsilon + np.sqrt(self.epsilon) < self.r:
            raise InvalidRegionError("sublevel regions need 2 eps + sqrt(eps) < r")

    @property
    def outer_level(self) -> float:
        return 2.0 * self.epsilon + np.sqrt(self.epsilon)


LocalRegion = Union[BallRegion, SublevelRegion]


def gap_within(region: SublevelRegion, gap, inner: bool = False):
    """Sublevel membership expressed through the gap ``f - f_star``."""
    level = region.epsilon / 2.0 if inner else region.outer_level
    return np.asarray(gap) <= level


def region_contains(region: LocalRegion, obj: Objective, x, inner: bool = False):
    """Membership in ``U`` (or in ``U_1`` when ``inner`` is true).

    ``x`` may carry leading batch axes; the result has the batch shape.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != obj.dim:
        raise ValueError("region and objective dimensions disagree")
    if isinstance(region, SublevelRegion):
        return gap_within(region, obj.value(x) - region.f_star, inner)
    inside = region.distance(x) < region.r_bold / 2.0
    if inner:
        if region.epsilon is None:
            raise InvalidRegionError("U_1 needs an epsilon")
        inside = inside & (obj.value(x) - region.level <= region.epsilon / 2.0)
    return inside


def _shell_points(region: BallRegion, lo: float, hi: float, resolution: int) -> np.ndarray:
    dim = region.minima.shape[1]
    if dim == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        rng = np.random.default_rng(0)
        extra = rng.standard_normal((64, dim))
        dirs = np.vstack([np.eye(dim), -np.eye(dim), extra / np.linalg.norm(extra, axis=1, keepdims=True)])
    radii = np.linspace(lo, hi, resolution)
    pts = region.minima[:, None, None, :] + radii[None, :, None, None] * dirs[None, None, :, :]
    return pts.reshape(-1, dim)


def compute_s(obj: Objective, region: BallRegion, resolution: int = 10_000) -> float:
    """Grid infimum of ``f - level`` on the shell ``r/2 <= dist(x, minima) <= 3r/4``.

    The shell is sampled radially from each minimum. Points on the shell
    that lie close to another minimum are kept, so a radius that reaches a
    second well yields ``s = 0`` and the region is rejected.
    """
    if not isinstance(region, BallRegion):
        raise TypeError("compute_s needs a ball region")
    pts = _shell_points(region, region.r_bold / 2.0, 0.75 * region.r_bold, resolution)
    s = float(np.min(obj.value(pts) - region.level))
    if not s > 0:
        raise InvalidRegionError(f"shell infimum s={s:.3g} is not positive; radius too large")
    return s


def choose_epsilon(s: float) -> float:
    """Half the largest ``eps`` with ``2 eps + sqrt(eps) < s``.

    The largest admissible value is the root ``t^2`` of ``2 t^2 + t = s``; it
    is approached from below by one ulp before halving.
    """
    if not s > 0:
        raise ValueError("s must be positive")
    t = (-1.0 + np.sqrt(1.0 + 8.0 * s)) / 4.0
    eps = np.nextafter(t * t, 0.0)
    while 2 * eps + np.sqrt(eps) >= s:
        eps = np.nextafter(eps, 0.0)
    return float(eps / 2.0)


def required_budget(delta: float, epsilon: float, g: float, c_noise: float) -> float:
    """Bound ``delta eps / (2 (G^2 C^2 + G^2 + C))`` on ``sum gamma_n^2``."""
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    if not (epsilon > 0 and g > 0 and c_noise >= 0):
        raise ValueError("epsilon and G must be positive and C nonnegative")
    return delta * epsilon / (2.0 * (g * g * c_noise * c_noise + g * g + c_noise))


def jump_budget(delta: float, c_noise: float, r_bold: float) -> float:
    """Bound on ``sum gamma_n^2`` making jumps beyond ``r/4`` rare.

    ``(4 C / r^2) sum gamma^2 <= delta / 2`` rearranges to
    ``sum gamma^2 <= delta r^2 / (8 C)``.
    """
    if c_noise == 0:
        return np.inf
    return delta * r_bold * r_bold / (8.0 * c_noise)


@dataclass(frozen=True)
class LocalSetup:
    """Everything a trapping experiment needs, derived from an objective."""

    obj: Objective
    region: BallRegion
    noise: NoiseModel
    s: float
    epsilon: float
    beta: float
    c: float
    lipschitz_grad: float
    lipschitz_value: float
    c_noise: float
    delta: float
    budget: float
    sched: StepSchedule
    x1: np.ndarray


def double_well_setup(
    delta: float = 0.1,
    sigma: float = 1.0,
    theta: float = 0.75,
    r_bold: float = 0.5,
    start_fraction: float = 0.25,
) -> LocalSetup:
    """Budget-compliant trapping setup for the double well near ``+1``.

    ``C`` is the oracle's exact noise second moment ``sigma^2 d``. ``gamma1``
    is the largest value meeting both the statistic budget and the jump
    budget. The start point lies right of ``+1`` at gap
    ``start_fraction * eps``.
    """
    from .objectives import double_well

    obj = double_well(r_bold)
    region0 = BallRegion(obj.minima, r_bold, obj.level)
    s = compute_s(obj, region0)
    eps = choose_epsilon(s)
    region = BallRegion(obj.minima, r_bold, obj.level, eps)
    noise = NoiseModel.gaussian(sigma)
    c_noise = noise.second_moment(obj.dim)
    meta = obj.lipschitz_meta
    budget = min(required_budget(delta, eps, meta.lipschitz_value, c_noise), jump_budget(delta, c_noise, r_bold))
    # strict inequality in the budget: shave a relative 1e-9
    gamma1 = max_gamma1_for_budget(theta, budget * (1.0 - 1e-9))
    x1 = np.array([np.sqrt(1.0 + np.sqrt(start_fraction * eps))])
    return LocalSetup(
        obj, region, noise, s, eps, obj.pl_meta.beta, obj.pl_meta.c,
        meta.lipschitz_grad, meta.lipschitz_value, c_noise, delta, budget,
        StepSchedule(gamma1, theta), x1,
    )


@dataclass(frozen=True)
class StayReport:
    stayed: bool
    first_exit: int | None = None
    r_statistic_path: dict | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.stayed != (self.first_exit is None):
            raise ValueError("stayed must hold exactly when there is no exit index")


@dataclass(frozen=True)
class ProofTrace:
    """Statistics at checkpoints; arrays have shape ``(checkpoints, runs)``."""

    n: np.ndarray
    m: np.ndarray
    s: np.ndarray
    r: np.ndarray
    in_e: np.ndarray
    in_c: np.ndarray
    in_omega: np.ndarray
    lemma_violations: int
    bound_violations: int


class _Statistics:
    """Online update of ``M_n``, ``S_n``, ``R_n`` and the events ``E_n``, ``C_n``, ``Omega_n``."""

    def __init__(self, n_runs, epsilon, beta, c, lipschitz, jump_limit, theta, d1):
        self.eps = epsilon
        self.beta = beta
        self.c2 = c * c
        self.half_l = 0.5 * lipschitz
        self.jump = jump_limit
        self.q = 1.0 if beta == 0.5 else min(1.0 / theta, 1.5)
        self.c_tilde = 0.0 if beta == 0.5 else qtrick_constant(beta) * c * c
        self.drift_exp = 0.0 if beta == 0.5 else (2 * beta * self.q - 1) / (2 * beta - 1)
        self.m = np.zeros(n_runs)
        self.s = np.zeros(n_runs)
        self.in_e = np.ones(n_runs, dtype=bool)
        self.in_c = np.ones(n_runs, dtype=bool)
        self.omega = np.ones(n_runs, dtype=bool)
        self.d1 = d1
        self.prod = 1.0
        self.drift = 0.0
        self.lemma_violations = 0
        self.bound_violations = 0

    @property
    def r(self):
        return self.m * self.m + self.s

    def update(self, gamma, x, g, v, x_next, in_u_next, gap_next):
        a = 1.0 - gamma**self.q * self.c2
        xi = -np.sum(g * (v - g), axis=-1)
        om = self.omega
        self.m = a * self.m + gamma * xi * om
        self.s = self.s + self.half_l * gamma * gamma * np.sum(v * v, axis=-1) * om
        self.in_e &= self.r < self.eps
        if self.jump is not None:
            self.in_c &= np.linalg.norm(x_next - x, axis=-1) <= self.jump
        self.prod *= a
        if self.c_tilde:
            self.drift += self.c_tilde * gamma**self.drift_exp
        ok = om & self.in_c
        bound = self.d1 * self.prod + self.drift + self.m + self.s
        self.bound_violations += int(np.sum(ok & (gap_next > bound + 1e-12 * (1 + np.abs(bound)))))
        self.omega = om & in_u_next
        self.lemma_violations += int(np.sum(self.in_e & self.in_c & ~self.omega))


@dataclass(frozen=True)
class RunRecord:
    """Full iterate path ``x`` of shape ``(n, runs, d)`` and sampled gradients ``v`` of shape ``(n-1, runs, d)``."""

    x: np.ndarray
    v: np.ndarray | None


def proof_statistics(
    obj: Objective,
    record: RunRecord,
    region: LocalRegion,
    epsilon: float,
    sched: StepSchedule,
    beta: float,
    c: float,
    lipschitz: float,
    checkpoints=None,
) -> ProofTrace:
    """Reconstruct ``M_n, S_n, R_n`` and the events from a recorded run.

    Row ``i`` of every array refers to index ``n = checkpoints[i]`` with
    ``1 <= n < len(record.x)``: the statistics use the steps ``k <= n`` and
    ``in_c`` covers the jumps up to ``X_{n+1}``.
    """
    if record.v is None:
        raise ValueError("the run did not record sampled gradients")
    x = np.asarray(record.x, dtype=float)
    if x.ndim == 2:
        x = x[:, None, :]
    v = np.asarray(record.v, dtype=float).reshape(len(x) - 1, x.shape[1], -1)
    n_steps = len(v)
    ckpt = checkpoint_grid(n_steps) if checkpoints is None else np.asarray(checkpoints, dtype=np.int64)
    ref = region.f_star if isinstance(region, SublevelRegion) else region.level
    gaps = obj.value(x) - ref
    jump = region.r_bold / 4.0 if isinstance(region, BallRegion) else None
    stats = _Statistics(x.shape[1], epsilon, beta, c, lipschitz, jump, sched.theta, gaps[0])
    stats.omega &= region_contains(region, obj, x[0])
    out = {k: [] for k in ("m", "s", "r", "e", "c", "o")}
    k = 0
    for n in range(1, n_steps + 1):
        in_u = region_contains(region, obj, x[n])
        omega_n = stats.omega.copy()
        stats.update(sched(n), x[n - 1], obj.grad(x[n - 1]), v[n - 1], x[n], in_u, gaps[n])
        if k < len(ckpt) and n == ckpt[k]:
            for key, val in (("m", stats.m), ("s", stats.s), ("r", stats.r), ("e", stats.in_e), ("c", stats.in_c), ("o", omega_n)):
                out[key].append(np.array(val, copy=True))
            k += 1
    return ProofTrace(
        ckpt[:k], *(np.array(out[key]) for key in ("m", "s", "r", "e", "c", "o")),
        stats.lemma_violations, stats.bound_violations,
    )


@dataclass(frozen=True)
class TrackedEnsemble:
    ensemble: Ensemble
    stays: list
    lemma_violations: int
    bound_violations: int
    trace: ProofTrace

    @property
    def stayed(self) -> np.ndarray:
        return np.array([s.stayed for s in self.stays])

    @property
    def exit_fraction(self) -> float:
        return float(1.0 - self.stayed.mean())


def track_ensemble(
    obj: Objective,
    noise: NoiseModel,
    sched: StepSchedule,
    region: LocalRegion,
    x1,
    n_max: int,
    n_runs: int = 1,
    base_seed: int = 0,
    pl: tuple[float, float] | None = None,
    lipschitz: float | None = None,
    run_indices=None,
    checkpoints=None,
) -> TrackedEnsemble:
    """SGD from ``x1`` with region bookkeeping and proof statistics for many runs.

    Noise for run ``i`` comes from ``substream(base_seed, run_indices[i])``
    exactly as in :func:`plsgd.optimizers.run_ensemble`, so the paths agree
    with an untracked SGD run. Gaps are measured against the region level.
    Runs keep iterating after leaving ``U``; they are only flagged.
    """
    epsilon = region.epsilon
    if epsilon is None:
        raise InvalidRegionError("tracking needs a region with epsilon")
    x1 = np.asarray(x1, dtype=float).reshape(-1, obj.dim)
    if not np.all(region_contains(region, obj, x1, inner=True)):
        raise ValueError("x1 must lie in U_1")
    beta, c = pl if pl is not None else (obj.pl_meta.beta, obj.pl_meta.c)
    lip = obj.lipschitz_meta.lipschitz_grad if lipschitz is None else lipschitz
    idx = np.arange(n_runs) if run_indices is None else np.asarray(run_indices, dtype=np.int64)
    gens = [substream(base_seed, int(i)) for i in idx]
    x = np.broadcast_to(x1, (len(idx), obj.dim)).copy()
    ckpt = checkpoint_grid(n_max) if checkpoints is None else np.asarray(checkpoints, dtype=np.int64)
    ref = region.f_star if isinstance(region, SublevelRegion) else region.level
    jump = region.r_bold / 4.0 if isinstance(region, BallRegion) else None

    feed = _NoiseFeed(noise, gens, obj.dim)
    gammas = sched(np.arange(1, n_max + 1))
    gap = obj.value(x) - ref
    stats = _Statistics(len(idx), epsilon, beta, c, lip, jump, sched.theta, gap.copy())
    first_exit = np.zeros(len(idx), dtype=np.int64)
    gaps = np.full((len(idx), len(ckpt)), np.nan)
    trace = {k: [] for k in ("m", "s", "r", "e", "c", "o")}
    k = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, n_max + 1):
            if n == ckpt[k]:
                gaps[:, k] = gap
                k += 1
            if n == n_max:
                break
            g = obj.grad(x)
            z = feed.next()
            v = g if z is None else g + z
            x_next = x - gammas[n - 1] * v
            gap_next = obj.value(x_next) - ref
            if isinstance(region, SublevelRegion):
                in_u = gap_within(region, gap_next)
            else:
                in_u = region.distance(x_next) < region.r_bold / 2.0
            omega_n = stats.omega.copy()
            stats.update(gammas[n - 1], x, g, v, x_next, in_u, gap_next)
            first_exit[(first_exit == 0) & ~in_u] = n + 1
            if k > 0 and ckpt[k - 1] == n:
                for key, val in (("m", stats.m), ("s", stats.s), ("r", stats.r), ("e", stats.in_e), ("c", stats.in_c), ("o", omega_n)):
                    trace[key].append(np.array(val, copy=True))
            x, gap = x_next, gap_next

    n_trace = len(trace["m"])
    proof = ProofTrace(ckpt[:n_trace], *(np.array(trace[key]) for key in ("m", "s", "r", "e", "c", "o")),
                       stats.lemma_violations, stats.bound_violations)
    diverged = ~np.all(np.isfinite(gaps), axis=1)
    digest = config_digest({"objective": obj.name, "noise": [noise.kind, noise.sigma], "schedule": [sched.gamma1, sched.theta],
                            "n_max": int(n_max), "base_seed": int(base_seed), "x1": x1.ravel().tolist(), "tracked": True})
    ens = Ensemble(ckpt, gaps, diverged, idx, int(base_seed), digest)
    stays = [
        StayReport(bool(fe == 0), None if fe == 0 else int(fe),
                   {"n": proof.n, "m": proof.m[:, i], "s": proof.s[:, i], "r": proof.r[:, i]})
        for i, fe in enumerate(first_exit)
    ]
    return TrackedEnsemble(ens, stays, stats.lemma_violations, stats.bound_violations, proof)


def run_with_tracking(
    obj: Objective,
    noise: NoiseModel,
    sched: StepSchedule,
    region: LocalRegion,
    x1,
    n_max: int,
    seed: int = 0,
    run_index: int = 0,
    **kwargs,
):
    """Single tracked run; returns ``(Trajectory, StayReport)``."""
    tracked = track_ensemble(obj, noise, sched, region, x1, n_max, 1, seed, run_indices=[run_index], **kwargs)
    return tracked.ensemble.trajectories()[0], tracked.stays[0]
