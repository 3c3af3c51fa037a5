"""Tabular softmax policy gradient with optional entropy regularization.

Parameters ``w`` have one entry per state-action pair (row-major, shape
``(n_states, n_actions)`` once reshaped). Values follow the soft-Bellman
convention: the per-step entropy bonus ``-lambda log pi`` is discounted like
the rewards.
"""

from __future__ import annotations

import json
import weakref
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, softmax

__all__ = [
    "TabularMdp",
    "SoftmaxPolicy",
    "RegularizedValue",
    "OptimalValue",
    "RewardGap",
    "PlCheck",
    "bandit",
    "chain3",
    "close_bandit",
    "load_mdp",
    "save_mdp",
    "policy_probs",
    "evaluate_policy",
    "values_batch",
    "optimal_value",
    "discounted_state_distribution",
    "exact_gradient",
    "stochastic_gradient",
    "StochasticGradientSampler",
    "reward_gap",
    "pl_constant",
    "local_radius",
    "PolicyGradientRun",
    "sublevel_setup",
    "run_policy_gradient",
]


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite discounted MDP.

    ``transitions[s, a, s']`` is the probability of moving from ``s`` to
    ``s'`` under action ``a``; ``rewards[s, a]`` lies in [0, 1]; ``mu`` is the
    initial distribution and must be strictly positive. Arrays are read-only
    and instances compare by identity.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    rho: float
    mu: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.transitions, dtype=float)
        r = np.asarray(self.rewards, dtype=float)
        mu = np.asarray(self.mu, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError("transitions must have shape (S, A, S)")
        if r.shape != p.shape[:2]:
            raise ValueError("rewards must have shape (S, A)")
        if mu.shape != (p.shape[0],):
            raise ValueError("mu must have one entry per state")
        if np.any(p < 0) or np.max(np.abs(p.sum(axis=-1) - 1.0)) > 1e-12:
            raise ValueError("each transition row must be a probability vector")
        if np.any(r < 0) or np.any(r > 1):
            raise ValueError("rewards must lie in [0, 1]")
        if abs(mu.sum() - 1.0) > 1e-12 or np.any(mu <= 0):
            raise ValueError("mu must be a strictly positive probability vector")
        if not (0.0 <= self.rho < 1.0):
            raise ValueError(f"discount rho must lie in [0, 1), got {self.rho}")
        for name, arr in (("transitions", p), ("rewards", r), ("mu", mu)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_params(self) -> int:
        return self.n_states * self.n_actions

    def to_dict(self) -> dict:
        return {
            "states": self.n_states,
            "actions": self.n_actions,
            "transitions": self.transitions.reshape(-1).tolist(),
            "rewards": self.rewards.reshape(-1).tolist(),
            "rho": self.rho,
            "mu": self.mu.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TabularMdp":
        expected = {"states", "actions", "transitions", "rewards", "rho", "mu"}
        unknown = set(data) - expected
        missing = expected - set(data)
        if unknown or missing:
            raise ValueError(f"MDP file keys: missing {sorted(missing)}, unknown {sorted(unknown)}")
        s, a = int(data["states"]), int(data["actions"])
        p = np.asarray(data["transitions"], dtype=float).reshape(s, a, s)
        r = np.asarray(data["rewards"], dtype=float).reshape(s, a)
        return cls(p, r, float(data["rho"]), np.asarray(data["mu"], dtype=float))


def save_mdp(mdp: TabularMdp, path) -> None:
    """Write ``mdp`` as JSON; floats use ``repr`` so the file round-trips exactly."""
    Path(path).write_text(json.dumps(mdp.to_dict(), indent=2) + "\n")


def load_mdp(path) -> TabularMdp:
    return TabularMdp.from_dict(json.loads(Path(path).read_text()))


def bandit(rho: float = 0.5) -> TabularMdp:
    """One state, two actions with rewards 1 and 0."""
    return TabularMdp(np.ones((1, 2, 1)), np.array([[1.0, 0.0]]), rho, np.ones(1))


def close_bandit(rewards=(0.05, 0.0), rho: float = 0.5) -> TabularMdp:
    """One-state bandit whose rewards are close, so soft-optimal policies stay mixed."""
    r = np.asarray(rewards, dtype=float).reshape(1, -1)
    return TabularMdp(np.ones((1, r.shape[1], 1)), r, rho, np.ones(1))


def chain3(rho: float = 0.8) -> TabularMdp:
    """Three-state chain; action 0 drifts left, action 1 drifts right.

    Each move succeeds with probability 0.9 and otherwise leaves the state
    unchanged. Pulling right in the last state pays 1; pulling left in the
    first state pays 0.2.
    """
    p = np.zeros((3, 2, 3))
    for s in range(3):
        left, right = max(s - 1, 0), min(s + 1, 2)
        p[s, 0, left] += 0.9
        p[s, 0, s] += 0.1
        p[s, 1, right] += 0.9
        p[s, 1, s] += 0.1
    r = np.zeros((3, 2))
    r[0, 0] = 0.2
    r[2, 1] = 1.0
    return TabularMdp(p, r, rho, np.full(3, 1.0 / 3.0))


@dataclass(frozen=True)
class SoftmaxPolicy:
    w: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float).reshape(-1))

    def probs(self, mdp: TabularMdp) -> np.ndarray:
        return policy_probs(mdp, self.w)


def _params(mdp: TabularMdp, w) -> np.ndarray:
    """View parameters as ``(..., S, A)``; flat trailing axes of length ``S*A`` are reshaped."""
    if isinstance(w, SoftmaxPolicy):
        w = w.w
    w = np.asarray(w, dtype=float)
    shape = (mdp.n_states, mdp.n_actions)
    if w.ndim >= 2 and w.shape[-2:] == shape:
        return w
    if w.ndim >= 1 and w.shape[-1] == mdp.n_params:
        return w.reshape(w.shape[:-1] + shape)
    raise ValueError(f"parameter shape {w.shape} does not match the MDP")


def policy_probs(mdp: TabularMdp, w) -> np.ndarray:
    """``pi_w(a|s)`` with shape ``(..., S, A)``."""
    return softmax(_params(mdp, w), axis=-1)


def _log_probs(w: np.ndarray) -> np.ndarray:
    top = w.max(axis=-1, keepdims=True)
    return w - (top + np.log(np.exp(w - top).sum(axis=-1, keepdims=True)))


@dataclass(frozen=True)
class RegularizedValue:
    lam: float
    v: np.ndarray
    q: np.ndarray
    value: float
    pi: np.ndarray = field(repr=False)


def _evaluate_probs(mdp: TabularMdp, pi: np.ndarray, log_pi: np.ndarray, lam: float) -> RegularizedValue:
    p_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
    r_pi = np.sum(pi * mdp.rewards, axis=-1)
    if lam > 0:
        h_pi = np.sum(np.where(pi > 0, pi * log_pi, 0.0), axis=-1)
        r_pi = r_pi - lam * h_pi
    a = np.eye(mdp.n_states) - mdp.rho * p_pi
    v = np.linalg.solve(a, r_pi)
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("policy evaluation failed")
    q = mdp.rewards + mdp.rho * mdp.transitions @ v
    return RegularizedValue(lam, v, q, float(mdp.mu @ v), pi)


def evaluate_policy(mdp: TabularMdp, policy, lam: float = 0.0) -> RegularizedValue:
    """Solve ``(I - rho P_pi) v = r_pi - lam h_pi`` for the softmax policy.

    ``h_pi(s) = sum_a pi log pi`` is the negative entropy, so the entropy
    bonus enters with a plus sign.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    w = _params(mdp, policy)
    return _evaluate_probs(mdp, softmax(w, axis=-1), _log_probs(w), lam)


def _state_values(mdp: TabularMdp, pi: np.ndarray, log_pi: np.ndarray, lam: float) -> np.ndarray:
    """Per-state values for a batch of policies of shape ``(R, S, A)``."""
    r_pi = np.sum(pi * mdp.rewards, axis=-1)
    if lam > 0:
        r_pi = r_pi - lam * np.sum(pi * log_pi, axis=-1)
    p_pi = np.einsum("rsa,sat->rst", pi, mdp.transitions)
    a = np.eye(mdp.n_states) - mdp.rho * p_pi
    return np.linalg.solve(a, r_pi[..., None])[..., 0]


def values_batch(mdp: TabularMdp, w_batch, lam: float = 0.0) -> np.ndarray:
    """``V_lambda(mu)`` for a batch of parameters of shape ``(R, S*A)`` or ``(R, S, A)``."""
    w = np.asarray(w_batch, dtype=float)
    if w.ndim == 2:
        # A 2-D batch is always (R, S*A); this disambiguates single-state MDPs.
        if w.shape[1] != mdp.n_params:
            raise ValueError(f"parameter shape {w.shape} does not match the MDP")
        w = w.reshape(len(w), mdp.n_states, mdp.n_actions)
    else:
        w = _params(mdp, w)
    return _state_values(mdp, softmax(w, axis=-1), _log_probs(w), lam) @ mdp.mu


@dataclass(frozen=True)
class OptimalValue:
    v: np.ndarray
    value: float
    pi: np.ndarray
    q: np.ndarray


_OPTIMA: "weakref.WeakKeyDictionary[TabularMdp, dict]" = weakref.WeakKeyDictionary()


def optimal_value(mdp: TabularMdp, lam: float = 0.0, tol: float = 1e-12, max_iter: int = 1_000_000) -> OptimalValue:
    """Optimal (soft) values by value iteration.

    For ``lam = 0`` the greedy policy (lowest index on ties) is evaluated
    exactly afterwards. For ``lam > 0`` the Bellman operator is the per-state
    ``lam * logsumexp(q / lam)`` and the optimal policy is ``softmax(q / lam)``.
    Results are cached per MDP instance and returned with read-only arrays.
    """
    key = (float(lam), float(tol), int(max_iter))
    cache = _OPTIMA.setdefault(mdp, {})
    if key not in cache:
        cache[key] = _solve_optimal(mdp, lam, tol, max_iter)
    return cache[key]


def _solve_optimal(mdp: TabularMdp, lam: float, tol: float, max_iter: int) -> OptimalValue:
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        q = mdp.rewards + mdp.rho * mdp.transitions @ v
        v_new = lam * logsumexp(q / lam, axis=-1) if lam > 0 else q.max(axis=-1)
        done = np.max(np.abs(v_new - v)) <= tol
        v = v_new
        if done:
            break
    q = mdp.rewards + mdp.rho * mdp.transitions @ v
    if lam > 0:
        pi = softmax(q / lam, axis=-1)
        v = lam * logsumexp(q / lam, axis=-1)
    else:
        pi = np.eye(mdp.n_actions)[np.argmax(q, axis=-1)]
        v = _evaluate_probs(mdp, pi, np.zeros_like(pi), 0.0).v
        q = mdp.rewards + mdp.rho * mdp.transitions @ v
    for arr in (v, pi, q):
        arr.setflags(write=False)
    return OptimalValue(v, float(mdp.mu @ v), pi, q)


def _state_distribution(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    p_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
    a = np.eye(mdp.n_states) - mdp.rho * p_pi
    return (1.0 - mdp.rho) * np.linalg.solve(a.T, mdp.mu)


def discounted_state_distribution(mdp: TabularMdp, policy) -> np.ndarray:
    """``d = (1 - rho) mu^T (I - rho P_pi)^{-1}`` for a softmax policy."""
    return _state_distribution(mdp, policy_probs(mdp, policy))


def exact_gradient(mdp: TabularMdp, w, lam: float = 0.0) -> np.ndarray:
    """``dV_lambda(mu)/dw(s,a) = d(s) pi(a|s) (q - lam log pi - v)(s,a) / (1 - rho)``."""
    w = _params(mdp, w)
    log_pi = _log_probs(w)
    pi = np.exp(log_pi)
    val = _evaluate_probs(mdp, pi, log_pi, lam)
    d = _state_distribution(mdp, pi)
    adv = val.q - lam * log_pi - val.v[:, None]
    return (d[:, None] * pi * adv / (1.0 - mdp.rho)).reshape(-1)


class _UniformFeed:
    """Per-run uniform draws consumed at run-specific rates.

    Row ``i`` always reads from generator ``i`` in order, so the numbers a
    run sees depend only on its own history.
    """

    def __init__(self, gens: list, chunk: int = 1024):
        self.gens = gens
        self.chunk = chunk
        self.buf = np.stack([g.random(chunk) for g in gens])
        self.ptr = np.zeros(len(gens), dtype=np.int64)
        self.rows = np.arange(len(gens))

    def take(self, mask: np.ndarray) -> np.ndarray:
        full = np.nonzero(mask & (self.ptr >= self.chunk))[0]
        for i in full:
            self.buf[i] = self.gens[i].random(self.chunk)
            self.ptr[i] = 0
        u = self.buf[self.rows, np.minimum(self.ptr, self.chunk - 1)]
        self.ptr += mask
        return u


def _categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probs, axis=-1)
    idx = np.sum(u[:, None] >= cum, axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def _geometric(u: np.ndarray, rho: float) -> np.ndarray:
    """``H`` with ``P(H >= h) = rho**h`` from uniforms on [0, 1)."""
    if rho == 0.0:
        return np.zeros(len(u), dtype=np.int64)
    return np.floor(np.log1p(-u) / np.log(rho)).astype(np.int64)


class StochasticGradientSampler:
    """Batched geometric-horizon estimator of ``grad V_lambda(mu)``.

    One call to :meth:`sample` produces one single-trajectory estimate per
    run. For each run the estimator

    1. draws ``H ~ Geometric(1 - rho)`` and rolls out ``H`` steps from ``mu``,
       which places ``s_H`` at the discounted state distribution;
    2. draws ``a_H ~ pi(.|s_H)`` and estimates ``q(s_H, a_H)`` by a second
       rollout of independent length ``H' ~ Geometric(1 - rho)`` that sums the
       undiscounted regularized rewards;
    3. returns ``(e_{a_H} - pi(.|s_H)) (q_hat - lam log pi(a_H|s_H) - b(s_H)) / (1 - rho)``
       in row ``s_H``.

    The baseline ``b`` is zero or, with ``baseline="value"``, the exact
    regularized state value of the current policy. Both choices are unbiased.
    """

    def __init__(self, mdp: TabularMdp, lam: float, gens: list, baseline: str = "none", chunk: int = 1024):
        if baseline not in ("none", "value"):
            raise ValueError(f"unknown baseline {baseline!r}")
        self.mdp = mdp
        self.lam = lam
        self.baseline = baseline
        self.feed = _UniformFeed(gens, chunk)
        self.n = len(gens)
        self.rows = np.arange(self.n)
        self.mu_cum = np.cumsum(mdp.mu)

    def _act(self, pi, s, mask):
        return _categorical(pi[self.rows, s], self.feed.take(mask))

    def _move(self, s, a, mask):
        if self.mdp.n_states == 1:
            return s
        nxt = _categorical(self.mdp.transitions[s, a], self.feed.take(mask))
        return np.where(mask, nxt, s)

    def sample(self, w_batch) -> np.ndarray:
        mdp, lam, rho = self.mdp, self.lam, self.mdp.rho
        w = _params(mdp, w_batch).reshape(self.n, mdp.n_states, mdp.n_actions)
        log_pi = _log_probs(w)
        pi = np.exp(log_pi)
        every = np.ones(self.n, dtype=bool)

        horizon = _geometric(self.feed.take(every), rho)
        s = np.minimum(np.sum(self.feed.take(every)[:, None] >= self.mu_cum, axis=-1), mdp.n_states - 1)
        for t in range(int(horizon.max(initial=0))):
            live = horizon > t
            a = self._act(pi, s, live)
            s = self._move(s, a, live)
        s_h = s
        a_h = self._act(pi, s_h, every)

        q_hat = mdp.rewards[s_h, a_h].copy()
        extra = _geometric(self.feed.take(every), rho)
        s, a = s_h, a_h
        for t in range(1, int(extra.max(initial=0)) + 1):
            live = extra >= t
            s = self._move(s, a, live)
            a_new = self._act(pi, s, live)
            a = np.where(live, a_new, a)
            step = mdp.rewards[s, a] - lam * log_pi[self.rows, s, a]
            q_hat += np.where(live, step, 0.0)

        weight = q_hat - lam * log_pi[self.rows, s_h, a_h]
        if self.baseline == "value":
            weight -= _state_values(mdp, pi, log_pi, lam)[self.rows, s_h]
        score = -pi[self.rows, s_h]
        score[self.rows, a_h] += 1.0
        grad = np.zeros_like(w)
        grad[self.rows, s_h] = score * (weight / (1.0 - rho))[:, None]
        return grad.reshape(self.n, -1)


def stochastic_gradient(mdp: TabularMdp, w, lam: float, rng: np.random.Generator, baseline: str = "none") -> np.ndarray:
    """One geometric-horizon estimate of the gradient; see :class:`StochasticGradientSampler`.

    Uniforms are drawn from ``rng`` one at a time, so the call consumes only
    what the sampled trajectory needs.
    """
    sampler = StochasticGradientSampler(mdp, lam, [rng], baseline, chunk=1)
    return sampler.sample(_params(mdp, w)[None])[0]


@dataclass(frozen=True)
class RewardGap:
    delta: np.ndarray
    best_action: np.ndarray
    degenerate: bool


def reward_gap(mdp: TabularMdp) -> RewardGap:
    """``Delta*(s) = Q*(s, a*) - max_{a != a*} Q*(s, a)``; single-action states give ``inf``."""
    q = optimal_value(mdp, 0.0).q
    best = np.argmax(q, axis=-1)
    if mdp.n_actions == 1:
        return RewardGap(np.full(mdp.n_states, np.inf), best, False)
    rest = q.copy()
    rest[np.arange(mdp.n_states), best] = -np.inf
    delta = q[np.arange(mdp.n_states), best] - rest.max(axis=-1)
    return RewardGap(delta, best, bool(np.any(delta <= 0)))


@dataclass(frozen=True)
class PlCheck:
    c_value: float
    inequality_holds: bool
    grad_norm: float
    gap: float
    exponent: float


def _concentrability(mdp: TabularMdp, lam: float) -> float:
    """``|| d^{pi*} / mu ||_inf`` for the (soft) optimal policy."""
    opt = optimal_value(mdp, lam)
    return float(np.max(_state_distribution(mdp, opt.pi) / mdp.mu))


def pl_constant(mdp: TabularMdp, w, lam: float = 0.0, paper_scaling: bool = False) -> PlCheck:
    """Non-uniform gradient-domination constant ``c_lambda(w)`` and its check.

    For ``lam = 0`` the default constant is
    ``min_s pi(a*(s)|s) (1 - rho) / sqrt(S) / ||d*/mu||_inf``. Because
    ``d >= (1 - rho) mu``, this is what the underlying lemma yields for the
    unnormalized value. ``paper_scaling=True`` divides by ``(1 - rho)``
    instead; that larger constant can violate the inequality (for example on
    the bandit). For ``lam > 0`` the constant is
    ``2 lam min(mu) min pi^2 / (S (1 - rho) ||d*/mu||_inf)`` in both modes.

    The check is ``||grad V|| >= (c * gap)**x`` with ``x = 1`` for ``lam = 0``
    and ``x = 1/2`` otherwise.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    w = _params(mdp, w)
    pi = softmax(w, axis=-1)
    conc = _concentrability(mdp, lam)
    n_s = mdp.n_states
    opt = optimal_value(mdp, lam)
    if lam == 0:
        best = reward_gap(mdp).best_action
        scale = 1.0 / (1.0 - mdp.rho) if paper_scaling else (1.0 - mdp.rho)
        c = float(np.min(pi[np.arange(n_s), best]) * scale / np.sqrt(n_s) / conc)
        x = 1.0
    else:
        c = float(2.0 * lam / (n_s * (1.0 - mdp.rho)) * mdp.mu.min() * pi.min() ** 2 / conc)
        x = 0.5
    gap = opt.value - evaluate_policy(mdp, w, lam).value
    g = float(np.linalg.norm(exact_gradient(mdp, w, lam)))
    rhs = (c * max(gap, 0.0)) ** x
    holds = g >= rhs - 1e-12 * (1.0 + rhs)
    return PlCheck(c, bool(holds), g, float(gap), x)


def local_radius(
    mdp: TabularMdp,
    lam: float,
    alpha: float,
    paper_scaling: bool = False,
    exact_min_policy: bool = False,
) -> tuple[float, float]:
    """Sublevel radius ``r`` and uniform constant ``c`` near the optimum.

    Every ``w`` with ``V*_lambda - V_lambda(w) <= r`` has
    ``c_lambda(w) >= c``. For ``lam = 0`` the constant uses the same
    ``(1 - rho)`` scaling as :func:`pl_constant`.

    For ``lam > 0`` the default radius lower-bounds ``min pi*`` by
    ``exp(-1 / ((1 - rho) lam))``, which is astronomically small for small
    ``lam``. ``exact_min_policy=True`` uses the computed ``min pi*`` instead,
    which is the quantity the bound stands in for.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    conc = _concentrability(mdp, lam)
    n_s = mdp.n_states
    min_mu = float(mdp.mu.min())
    if lam == 0:
        gap = reward_gap(mdp)
        if gap.degenerate:
            raise ValueError("optimal actions are not unique (zero reward gap)")
        r = min_mu * float(gap.delta.min()) * (1.0 - alpha)
        scale = 1.0 / (1.0 - mdp.rho) if paper_scaling else (1.0 - mdp.rho)
        c = alpha * scale / np.sqrt(n_s) / conc
        return float(r), float(c)
    min_pi_star = float(optimal_value(mdp, lam).pi.min())
    floor = min_pi_star if exact_min_policy else float(np.exp(-1.0 / ((1.0 - mdp.rho) * lam)))
    r = alpha**2 * floor**2 * lam * min_mu / (2.0 * np.log(2.0))
    c = 2.0 * lam / (n_s * (1.0 - mdp.rho)) * min_mu * (1.0 - alpha) ** 2 * min_pi_star**2 / conc
    return float(r), float(c)


@dataclass(frozen=True)
class PolicyGradientRun:
    """Gaps ``V* - V(w_n)`` at checkpoints plus sublevel bookkeeping per run."""

    n: np.ndarray
    gaps: np.ndarray
    stayed: np.ndarray
    first_exit: np.ndarray
    run_indices: np.ndarray
    seed: int

    def stay_reports(self) -> list:
        from .local import StayReport

        return [StayReport(bool(s), None if s else int(f)) for s, f in zip(self.stayed, self.first_exit)]


def sublevel_setup(mdp: TabularMdp, lam: float, alpha: float, exact_min_policy: bool = True, start_fraction: float = 0.25):
    """Sublevel region around the (soft) optimum and a start point inside ``U_1``.

    Returns ``(region, w1)``. The start point moves the optimal logit of the
    first state down (``lam > 0``) or scales a one-hot optimal logit vector
    (``lam = 0``) until the gap equals ``start_fraction * eps``.
    """
    from .local import SublevelRegion, choose_epsilon

    r, _ = local_radius(mdp, lam, alpha, exact_min_policy=exact_min_policy)
    eps = choose_epsilon(r)
    opt = optimal_value(mdp, lam)
    region = SublevelRegion(opt.value, r, eps)
    target = start_fraction * eps
    if lam > 0:
        base = np.log(opt.pi)
        direction = np.zeros_like(base)
        direction[0, np.argmax(opt.pi[0])] = -1.0
        path = lambda t: base + t * direction
        lo, hi = 0.0, 1.0
        while opt.value - evaluate_policy(mdp, path(hi), lam).value < target:
            hi *= 2.0
        increasing = True
    else:
        onehot = np.eye(mdp.n_actions)[reward_gap(mdp).best_action]
        path = lambda t: t * onehot
        lo, hi = 0.0, 1.0
        while opt.value - evaluate_policy(mdp, path(hi), lam).value > target:
            hi *= 2.0
        increasing = False
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gap = opt.value - evaluate_policy(mdp, path(mid), lam).value
        if (gap < target) == increasing:
            lo = mid
        else:
            hi = mid
    t = lo if increasing else hi
    return region, path(t).reshape(-1)


def run_policy_gradient(
    mdp: TabularMdp,
    lam: float,
    sched,
    w1,
    n_max: int,
    n_runs: int = 1,
    base_seed: int = 0,
    region=None,
    baseline: str = "none",
    run_indices=None,
    checkpoints=None,
) -> PolicyGradientRun:
    """Stochastic gradient ascent ``w_{n+1} = w_n + gamma_n g_n`` with one-trajectory estimates.

    With a sublevel ``region`` each run is flagged as soon as its gap
    exceeds the outer level of ``U``; it keeps iterating afterwards.
    """
    from .local import gap_within
    from .optimizers import checkpoint_grid
    from .oracle import substream

    idx = np.arange(n_runs) if run_indices is None else np.asarray(run_indices, dtype=np.int64)
    gens = [substream(base_seed, int(i)) for i in idx]
    sampler = StochasticGradientSampler(mdp, lam, gens, baseline)
    w = np.broadcast_to(np.asarray(w1, dtype=float).reshape(-1), (len(idx), mdp.n_params)).copy()
    ckpt = checkpoint_grid(n_max) if checkpoints is None else np.asarray(checkpoints, dtype=np.int64)
    v_star = optimal_value(mdp, lam).value
    gammas = sched(np.arange(1, n_max + 1))
    gaps = np.full((len(idx), len(ckpt)), np.nan)
    first_exit = np.zeros(len(idx), dtype=np.int64)
    k = 0
    for n in range(1, n_max + 1):
        gap = v_star - values_batch(mdp, w, lam)
        if region is not None:
            first_exit[(first_exit == 0) & ~gap_within(region, gap)] = n
        if n == ckpt[k]:
            gaps[:, k] = gap
            k += 1
        if n == n_max:
            break
        w = w + gammas[n - 1] * sampler.sample(w)
    return PolicyGradientRun(ckpt, gaps, first_exit == 0, first_exit, idx, int(base_seed))
