"""SGD and stochastic heavy ball iterations plus an ensemble driver.

Single steps act on small immutable state objects. The ensemble driver
advances many independent runs at once (one row per run) while keeping each
run's noise on its own substream, so results do not depend on the batch size.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .objectives import Objective
from .oracle import NoiseModel, substream
from .schedules import StepSchedule

__all__ = [
    "SgdState",
    "ShbState",
    "Method",
    "Trajectory",
    "Ensemble",
    "sgd_step",
    "shb_step",
    "shb_auxiliary",
    "checkpoint_grid",
    "mixture_uniform_init",
    "config_digest",
    "run_ensemble",
    "run_trajectory",
    "DIVERGENCE_THRESHOLD",
]

DIVERGENCE_THRESHOLD = 1e12
CHUNK = 4096


def _vec(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


@dataclass(frozen=True)
class SgdState:
    x: np.ndarray
    n: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", _vec(self.x))
        if self.n < 1:
            raise ValueError("iteration counter starts at 1")


@dataclass(frozen=True)
class ShbState:
    """Heavy-ball state; ``x_prev`` defaults to ``x`` (no initial momentum)."""

    x: np.ndarray
    x_prev: np.ndarray | None = None
    n: int = 1
    nu: float = 0.0

    def __post_init__(self) -> None:
        x = _vec(self.x)
        prev = x.copy() if self.x_prev is None else _vec(self.x_prev)
        _same_shape(x, prev)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "x_prev", prev)
        if not (0.0 <= self.nu < 1.0):
            raise ValueError(f"momentum nu must lie in [0, 1), got {self.nu}")
        if self.n < 1:
            raise ValueError("iteration counter starts at 1")


def sgd_step(state: SgdState, v, gamma_n: float) -> SgdState:
    """``x' = x - gamma_n v``."""
    v = _vec(v)
    _same_shape(state.x, v)
    return SgdState(state.x - gamma_n * v, state.n + 1)


def shb_step(state: ShbState, v, gamma_n: float) -> ShbState:
    """``x' = x - gamma_n v + nu (x - x_prev)``."""
    v = _vec(v)
    _same_shape(state.x, v)
    x_new = (state.x - gamma_n * v) + state.nu * (state.x - state.x_prev)
    return ShbState(x_new, state.x, state.n + 1, state.nu)


def shb_auxiliary(state: ShbState) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(z, w)`` with ``w = x - x_prev`` and ``z = x + nu/(1-nu) w``.

    ``z`` follows a plain SGD recursion with step ``gamma_n / (1 - nu)``, and
    ``w`` contracts by ``nu`` per step up to the gradient term.
    """
    w = state.x - state.x_prev
    z = state.x + state.nu / (1.0 - state.nu) * w
    return z, w


@dataclass(frozen=True)
class Method:
    """``sgd`` or ``shb`` with momentum ``nu``."""

    kind: str = "sgd"
    nu: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("sgd", "shb"):
            raise ValueError(f"unknown method {self.kind!r}")
        if self.kind == "sgd" and self.nu != 0.0:
            raise ValueError("sgd has no momentum parameter")
        if not (0.0 <= self.nu < 1.0):
            raise ValueError(f"momentum nu must lie in [0, 1), got {self.nu}")

    @classmethod
    def sgd(cls) -> "Method":
        return cls("sgd")

    @classmethod
    def shb(cls, nu: float) -> "Method":
        return cls("shb", float(nu))

    def describe(self) -> dict:
        return {"kind": self.kind, "nu": self.nu}


@dataclass(frozen=True)
class Trajectory:
    """Gaps ``f(X_n) - f*`` at checkpoint iterations of a single run."""

    n: np.ndarray
    gaps: np.ndarray
    seed: int
    run_index: int = 0
    digest: str = ""
    diverged: bool = False

    def __post_init__(self) -> None:
        n = np.asarray(self.n, dtype=np.int64)
        if n.ndim != 1 or len(n) != len(self.gaps):
            raise ValueError("checkpoints and gaps must be 1-d and of equal length")
        if np.any(np.diff(n) <= 0):
            raise ValueError("checkpoint indices must be strictly increasing")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "gaps", np.asarray(self.gaps, dtype=float))

    @property
    def checkpoints(self) -> list[tuple[int, float]]:
        return list(zip(self.n.tolist(), self.gaps.tolist()))


@dataclass(frozen=True)
class Ensemble:
    """Gap matrix of shape ``(runs, checkpoints)`` with provenance."""

    n: np.ndarray
    gaps: np.ndarray
    diverged: np.ndarray
    run_indices: np.ndarray
    seed: int
    digest: str
    paths: dict = field(default_factory=dict, repr=False)

    def trajectories(self) -> list[Trajectory]:
        return [
            Trajectory(self.n, self.gaps[i], self.seed, int(self.run_indices[i]), self.digest, bool(self.diverged[i]))
            for i in range(len(self.gaps))
        ]


def checkpoint_grid(n_max: int, per_decade: int = 32) -> np.ndarray:
    """Indices ``round(10**(k/per_decade))`` up to ``n_max``, always with ``n_max``."""
    if n_max < 1:
        raise ValueError("n_max must be positive")
    k_max = int(np.floor(per_decade * np.log10(n_max))) + 1
    pts = np.round(10.0 ** (np.arange(k_max + 1) / per_decade)).astype(np.int64)
    pts = pts[pts <= n_max]
    return np.unique(np.append(pts, n_max))


def mixture_uniform_init(rng: np.random.Generator, dim: int = 1) -> np.ndarray:
    """Each coordinate uniform on ``[1.5, 2.5]`` or ``[-2.5, -1.5]`` with equal odds."""
    mag = rng.uniform(1.5, 2.5, dim)
    sign = np.where(rng.random(dim) < 0.5, 1.0, -1.0)
    return sign * mag


def config_digest(config: dict) -> str:
    """SHA-256 of the canonical JSON encoding of ``config``."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


class _NoiseFeed:
    """Chunked per-run noise: row ``i`` is always drawn from run ``i``'s stream."""

    def __init__(self, noise: NoiseModel, gens: list, dim: int, chunk: int = CHUNK):
        self.noise = noise
        self.gens = gens
        self.dim = dim
        self.chunk = chunk
        self.buf = None
        self.pos = chunk

    def next(self) -> np.ndarray | None:
        if not self.noise.is_random:
            return None
        if self.pos == self.chunk:
            self.buf = np.stack([g.standard_normal((self.chunk, self.dim)) for g in self.gens], axis=1)
            self.buf *= self.noise.sigma
            self.pos = 0
        out = self.buf[self.pos]
        self.pos += 1
        return out


def run_ensemble(
    obj: Objective,
    noise: NoiseModel,
    method: Method,
    sched: StepSchedule,
    n_max: int,
    n_runs: int = 1,
    base_seed: int = 0,
    x1=None,
    run_indices=None,
    checkpoints=None,
    record: bool = False,
) -> Ensemble:
    """Simulate ``n_runs`` independent runs for ``n_max`` iterates.

    Run ``i`` draws from ``substream(base_seed, run_indices[i])``. When ``x1``
    is ``None`` each run first draws its start point with
    :func:`mixture_uniform_init`; afterwards each iteration consumes exactly
    one noise vector, whatever the method. With ``record=True`` the full
    iterate and sampled-gradient paths are kept in ``Ensemble.paths``.
    """
    if n_max < 1:
        raise ValueError("n_max must be positive")
    idx = np.arange(n_runs) if run_indices is None else np.asarray(run_indices, dtype=np.int64)
    gens = [substream(base_seed, int(i)) for i in idx]
    dim = obj.dim
    if x1 is None:
        x = np.stack([mixture_uniform_init(g, dim) for g in gens])
    else:
        x = np.broadcast_to(np.asarray(x1, dtype=float).reshape(-1, dim), (len(idx), dim)).copy()
    ckpt = checkpoint_grid(n_max) if checkpoints is None else np.asarray(checkpoints, dtype=np.int64)
    if ckpt[0] < 1 or ckpt[-1] > n_max or np.any(np.diff(ckpt) <= 0):
        raise ValueError("checkpoints must be strictly increasing within [1, n_max]")

    digest = config_digest(
        {
            "objective": obj.name,
            "dim": dim,
            "noise": [noise.kind, noise.sigma],
            "method": method.describe(),
            "schedule": [sched.gamma1, sched.theta],
            "n_max": int(n_max),
            "base_seed": int(base_seed),
            "x1": None if x1 is None else np.asarray(x1, dtype=float).ravel().tolist(),
        }
    )

    feed = _NoiseFeed(noise, gens, dim)
    gammas = sched(np.arange(1, n_max + 1))
    ref = obj.f_star if obj.level is None else obj.level
    gaps = np.full((len(idx), len(ckpt)), np.nan)
    diverged = np.zeros(len(idx), dtype=bool)
    heavy = method.kind == "shb"
    nu = method.nu
    x_prev = x.copy()
    xs, vs = ([x.copy()], []) if record else (None, None)

    k = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, n_max + 1):
            if n == ckpt[k]:
                g_now = obj.value(x) - ref
                bad = ~np.isfinite(g_now) | (np.abs(g_now) > DIVERGENCE_THRESHOLD)
                new_bad = bad & ~diverged
                if new_bad.any():
                    diverged |= new_bad
                    x[new_bad] = np.nan
                    x_prev[new_bad] = np.nan
                gaps[:, k] = np.where(diverged, np.nan, g_now)
                k += 1
            if n == n_max:
                break
            v = obj.grad(x)
            z = feed.next()
            if z is not None:
                v = v + z
            gamma = gammas[n - 1]
            if heavy:
                x_new = (x - gamma * v) + nu * (x - x_prev)
                x_prev = x
            else:
                x_new = x - gamma * v
            x = x_new
            if record:
                xs.append(x.copy())
                vs.append(v)

    paths = {}
    if record:
        paths = {"x": np.stack(xs), "v": np.stack(vs) if vs else np.empty((0, len(idx), dim))}
    return Ensemble(ckpt, gaps, diverged, idx, int(base_seed), digest, paths)


def run_trajectory(
    obj: Objective,
    noise: NoiseModel,
    method: Method,
    sched: StepSchedule,
    x1,
    n_max: int,
    seed: int = 0,
    run_index: int = 0,
    checkpoints=None,
) -> Trajectory:
    """Single run from ``x1``; see :func:`run_ensemble`."""
    ens = run_ensemble(obj, noise, method, sched, n_max, 1, seed, x1=x1, run_indices=[run_index], checkpoints=checkpoints)
    return ens.trajectories()[0]
