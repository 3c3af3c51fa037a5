"""Stochastic first-order oracle ``V(x) = grad f(x) + Z`` and second-moment checks.

Random streams are numpy ``Generator`` objects built on PCG64. Each Monte
Carlo run owns the substream ``(base_seed, run_index)`` obtained from a
``SeedSequence`` spawn key, so ensembles are reproducible regardless of how
runs are batched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objectives import Objective

__all__ = [
    "NoiseModel",
    "AbcConstants",
    "AbcReport",
    "substream",
    "sample_gradient",
    "verify_abc",
]

NOISE_KINDS = ("none", "gaussian")
_ALIASES = {"additive-isotropic-gaussian": "gaussian"}


@dataclass(frozen=True)
class NoiseModel:
    """Additive noise model.

    ``kind="gaussian"`` adds independent ``N(0, sigma**2)`` noise to every
    coordinate of the gradient; ``kind="none"`` returns exact gradients.
    The long name ``"additive-isotropic-gaussian"`` is accepted as an alias.
    """

    kind: str = "none"
    sigma: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", _ALIASES.get(self.kind, self.kind))
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not (self.sigma >= 0 and np.isfinite(self.sigma)):
            raise ValueError(f"sigma must be a finite nonnegative number, got {self.sigma}")
        if self.kind == "none" and self.sigma != 0:
            raise ValueError("kind='none' requires sigma=0")

    @classmethod
    def gaussian(cls, sigma: float) -> "NoiseModel":
        return cls("gaussian", float(sigma))

    @property
    def is_random(self) -> bool:
        return self.kind == "gaussian"

    def second_moment(self, dim: int) -> float:
        """``E||Z||^2`` for a ``dim``-dimensional draw."""
        return self.sigma**2 * dim if self.is_random else 0.0

    def draw(self, rng: np.random.Generator, shape) -> np.ndarray:
        """One noise draw of the given shape (zeros without consuming ``rng``)."""
        if not self.is_random:
            return np.zeros(shape)
        return self.sigma * rng.standard_normal(shape)


@dataclass(frozen=True)
class AbcConstants:
    """Constants of ``E||V||^2 <= A (f - f*) + B ||grad f||^2 + C``."""

    a: float
    b: float
    c: float

    def __post_init__(self) -> None:
        for name in ("a", "b", "c"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def bound(self, gap, grad_sq):
        return self.a * gap + self.b * grad_sq + self.c


@dataclass(frozen=True)
class AbcReport:
    """Per-point Monte Carlo estimates of ``E||V||^2`` against the bound."""

    estimate: np.ndarray
    std_error: np.ndarray
    bound: np.ndarray
    passed: np.ndarray

    @property
    def margin(self) -> np.ndarray:
        return self.bound - self.estimate

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed))


def substream(base_seed: int, run_index: int = 0) -> np.random.Generator:
    """Independent generator for run ``run_index`` of experiment ``base_seed``."""
    seq = np.random.SeedSequence(int(base_seed), spawn_key=(int(run_index),))
    return np.random.Generator(np.random.PCG64(seq))


def _as_point(obj: Objective, x) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.shape[-1] != obj.dim:
        raise ValueError(f"point has dimension {arr.shape[-1]}, objective has {obj.dim}")
    return arr


def sample_gradient(obj: Objective, noise: NoiseModel, x, rng: np.random.Generator) -> np.ndarray:
    """Return ``grad f(x)`` plus one draw of the noise.

    ``x`` may carry leading batch axes; one independent draw is made per
    point.
    """
    pt = _as_point(obj, x)
    return obj.grad(pt) + noise.draw(rng, pt.shape)


def verify_abc(
    obj: Objective,
    noise: NoiseModel,
    constants: AbcConstants,
    points,
    samples_per_point: int,
    rng: np.random.Generator,
) -> AbcReport:
    """Monte Carlo check of the (ABC) second-moment condition.

    A point passes when the sample mean of ``||V||^2`` is at most the bound
    plus three standard errors. A tiny relative slack absorbs rounding when
    the estimator has zero variance.
    """
    if samples_per_point < 100:
        raise ValueError("samples_per_point must be at least 100")
    pts = np.atleast_2d(_as_point(obj, np.asarray(points, dtype=float).reshape(-1, obj.dim)))
    gaps = obj.value(pts) - obj.f_star
    grads = obj.grad(pts)
    grad_sq = np.sum(grads**2, axis=-1)
    bound = constants.bound(gaps, grad_sq)

    estimate = np.empty(len(pts))
    std_error = np.empty(len(pts))
    for i, g in enumerate(grads):
        v = g + noise.draw(rng, (samples_per_point, obj.dim))
        sq = np.sum(v**2, axis=-1)
        estimate[i] = sq.mean()
        std_error[i] = sq.std(ddof=1) / np.sqrt(samples_per_point)
    slack = 1e-12 * (1.0 + np.abs(bound))
    passed = estimate <= bound + 3.0 * std_error + slack
    return AbcReport(estimate, std_error, bound, passed)
