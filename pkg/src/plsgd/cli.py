"""Command-line experiment runner and report writer.

Subcommands::

    plsgd run CONFIG          run one experiment described by a JSON file
    plsgd figure1 [--out DIR] the eight monomial SGD/SHB experiments
    plsgd envelope CONFIG     iterate the deterministic envelope
    plsgd rl CONFIG           local stochastic policy-gradient experiment
    plsgd report BUNDLE       rebuild summary.csv and plot.svg from runs.csv

Every experiment writes a bundle directory with ``runs.csv``,
``summary.csv``, ``plot.svg`` and ``manifest.json``. Exit status is 0 on
success, 2 for configuration errors and 3 when ``--check`` is given and a
threshold fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .envelope import RecursionCoefficients, envelope_iterate
from .local import double_well_setup, track_ensemble
from .objectives import Objective, double_well, monomial, quadratic
from .optimizers import Method, checkpoint_grid, config_digest, run_ensemble
from .oracle import NoiseModel
from .rate import ensemble_stats, fit_rate, theoretical_rate
from .schedules import StepSchedule, admissible_eta_lower_bound, clamp_theta, optimal_theta

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "Bundle",
    "load_config",
    "build_objective",
    "figure1_preset",
    "run_experiment",
    "emit_report",
    "write_runs_csv",
    "read_runs_csv",
    "main",
]

log = logging.getLogger(__name__)

THREADS_ENV = "PLSGD_THREADS"
KINDS = ("global-sgd", "global-shb", "envelope", "local", "rl")
FIGURE1_GAMMA1 = {2: 0.2, 3: 0.13, 6: 0.004, 12: 1e-6}
EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 2, 3


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    objective: dict = field(default_factory=dict)
    noise: dict = field(default_factory=lambda: {"kind": "gaussian", "sigma": 1.0})
    schedule: dict = field(default_factory=lambda: {"gamma1": 0.1, "theta": "optimal"})
    nu: float = 0.0
    n_max: int = 100_000
    n_runs: int = 100
    base_seed: int = 0
    init: object = "mixture"
    region: dict = field(default_factory=dict)
    mdp: str = "close-bandit"
    lam: float = 0.0
    alpha: float = 0.9
    radius: str = "exact-min-policy"
    baseline: str = "none"
    envelope: dict = field(default_factory=dict)
    check: dict = field(default_factory=dict)
    output: str = "out"
    label: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


_FIELDS = {
    "kind", "objective", "noise", "schedule", "nu", "n_max", "n_runs", "base_seed", "init", "region",
    "mdp", "lambda", "alpha", "radius", "baseline", "envelope", "check", "output", "label",
}
_SUBKEYS = {
    "objective": {"name", "p", "dim", "r_bold"},
    "noise": {"kind", "sigma"},
    "schedule": {"gamma1", "theta"},
    "region": {"r_bold", "delta", "start_fraction"},
    "envelope": {"beta", "eta_offset", "c1", "c2", "c3", "gamma1", "y1", "theta"},
    "check": {"mode", "tolerance", "window"},
}


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(path, message)


def _number(data: dict, key: str, path: str, lo=None, hi=None, integer=False):
    val = data[key]
    ok = isinstance(val, (int, float)) and not isinstance(val, bool)
    if integer:
        ok = ok and float(val).is_integer()
    _require(ok, f"{path}.{key}" if path else key, "expected an integer" if integer else "expected a number")
    val = int(val) if integer else float(val)
    if lo is not None:
        _require(val >= lo, f"{path}.{key}" if path else key, f"must be >= {lo}")
    if hi is not None:
        _require(val <= hi, f"{path}.{key}" if path else key, f"must be <= {hi}")
    return val


def load_config(source) -> ExperimentConfig:
    """Parse and validate a config from a path, JSON text or a dict."""
    if isinstance(source, dict):
        data = dict(source)
    else:
        path = Path(source)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError("<file>", f"cannot read {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
    _require(isinstance(data, dict), "<root>", "expected a JSON object")
    unknown = sorted(set(data) - _FIELDS)
    _require(not unknown, unknown[0] if unknown else "", "unknown key")
    _require("kind" in data, "kind", "missing")
    _require(data["kind"] in KINDS, "kind", f"expected one of {KINDS}")
    for key, allowed in _SUBKEYS.items():
        if key in data:
            _require(isinstance(data[key], dict), key, "expected an object")
            extra = sorted(set(data[key]) - allowed)
            _require(not extra, f"{key}.{extra[0]}" if extra else key, "unknown key")

    kw = {"kind": data["kind"]}
    for key in ("objective", "noise", "schedule", "region", "envelope", "check"):
        if key in data:
            kw[key] = dict(data[key])
    if "nu" in data:
        kw["nu"] = _number(data, "nu", "", 0.0)
        _require(kw["nu"] < 1.0, "nu", "must be < 1")
    if "n_max" in data:
        kw["n_max"] = _number(data, "n_max", "", 2, integer=True)
    if "n_runs" in data:
        kw["n_runs"] = _number(data, "n_runs", "", 1, integer=True)
    if "base_seed" in data:
        kw["base_seed"] = _number(data, "base_seed", "", 0, integer=True)
    if "lambda" in data:
        kw["lam"] = _number(data, "lambda", "", 0.0)
    if "alpha" in data:
        kw["alpha"] = _number(data, "alpha", "", 0.0, 1.0)
        _require(0 < kw["alpha"] < 1, "alpha", "must lie in (0, 1)")
    for key in ("mdp", "radius", "baseline", "output", "label"):
        if key in data:
            _require(isinstance(data[key], str), key, "expected a string")
            kw[key] = data[key]
    if "init" in data:
        init = data["init"]
        _require(init == "mixture" or (isinstance(init, list) and all(isinstance(v, (int, float)) for v in init)),
                 "init", "expected 'mixture' or a list of numbers")
        kw["init"] = init
    cfg = ExperimentConfig(**kw)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.kind in ("global-sgd", "global-shb", "local"):
        try:
            build_objective(cfg.objective)
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError("objective", str(exc)) from exc
        try:
            NoiseModel(cfg.noise.get("kind", "none"), float(cfg.noise.get("sigma", 0.0)))
        except (ValueError, TypeError) as exc:
            raise ConfigError("noise", str(exc)) from exc
    if cfg.kind in ("global-sgd", "global-shb", "local", "rl"):
        sched = cfg.schedule
        _require("gamma1" in sched, "schedule.gamma1", "missing")
        g1 = sched["gamma1"]
        _require(g1 == "budget" if isinstance(g1, str) else (isinstance(g1, (int, float)) and g1 > 0),
                 "schedule.gamma1", "expected a positive number or 'budget'")
        _require(g1 != "budget" or cfg.kind == "local", "schedule.gamma1", "'budget' is only valid for local experiments")
        theta = sched.get("theta", "optimal")
        if isinstance(theta, str):
            _require(theta == "optimal", "schedule.theta", "expected a number or 'optimal'")
        else:
            _require(isinstance(theta, (int, float)) and 0.5 < theta < 1, "schedule.theta", "must lie in (1/2, 1)")
    if cfg.kind == "global-sgd":
        _require(cfg.nu == 0.0, "nu", "sgd has no momentum")
    if cfg.kind == "local":
        _require(cfg.objective.get("name") == "double-well", "objective.name", "local experiments use the double well")
        delta = cfg.region.get("delta", 0.1)
        _require(isinstance(delta, (int, float)) and 0 < delta < 1, "region.delta", "must lie in (0, 1)")
    if cfg.kind == "rl":
        _require(cfg.radius in ("paper", "exact-min-policy"), "radius", "expected 'paper' or 'exact-min-policy'")
        _require(cfg.baseline in ("none", "value"), "baseline", "expected 'none' or 'value'")
        try:
            _build_mdp(cfg.mdp)
        except (ValueError, OSError) as exc:
            raise ConfigError("mdp", str(exc)) from exc
    if cfg.kind == "envelope":
        env = cfg.envelope
        _require("beta" in env, "envelope.beta", "missing")
        _require(isinstance(env["beta"], (int, float)) and 0.5 <= env["beta"] <= 1, "envelope.beta", "must lie in [1/2, 1]")
        try:
            RecursionCoefficients(env.get("c1", 0.0), env.get("c2", 1.0), env.get("c3", 1.0), env["beta"])
        except ValueError as exc:
            raise ConfigError("envelope", str(exc)) from exc


def build_objective(spec: dict) -> Objective:
    """Objective from ``{"name": ..., ...}``; names: quadratic, monomial, double-well."""
    name = spec.get("name")
    if name == "quadratic":
        return quadratic(int(spec.get("dim", 1)))
    if name == "monomial":
        return monomial(float(spec["p"]), int(spec.get("dim", 1)))
    if name == "double-well":
        return double_well(float(spec.get("r_bold", 0.5)))
    raise ValueError(f"unknown objective {name!r}")


def _build_mdp(spec: str):
    from . import rl

    presets = {"bandit": rl.bandit, "chain3": rl.chain3, "close-bandit": rl.close_bandit}
    if spec in presets:
        return presets[spec]()
    return rl.load_mdp(spec)


def _theta(cfg: ExperimentConfig, beta: float) -> float:
    theta = cfg.schedule.get("theta", "optimal")
    return clamp_theta(optimal_theta(beta)) if theta == "optimal" else float(theta)


def figure1_preset(n_max: int = 100_000, n_runs: int = 100, base_seed: int = 0, out: str = "figure1") -> list[ExperimentConfig]:
    """Four SGD and four heavy-ball experiments on ``|x|^p``, ``p`` in {2, 3, 6, 12}."""
    configs = []
    for kind, nu in (("global-sgd", 0.0), ("global-shb", 0.5)):
        for p, g1 in FIGURE1_GAMMA1.items():
            label = f"p{p}-{kind.split('-')[1]}"
            check = {"mode": "nonincreasing"} if p == 12 else {"mode": "slope", "tolerance": 0.25, "window": [1000, None]}
            configs.append(ExperimentConfig(
                kind=kind, objective={"name": "monomial", "p": p}, noise={"kind": "gaussian", "sigma": 1.0},
                schedule={"gamma1": g1, "theta": "optimal"}, nu=nu, n_max=n_max, n_runs=n_runs,
                base_seed=base_seed, init="mixture", check=check, output=str(Path(out) / label), label=label,
            ))
    return configs


# ----------------------------------------------------------------------------- workers


def _chunks(n_runs: int, workers: int) -> list[np.ndarray]:
    return [c for c in np.array_split(np.arange(n_runs), max(1, min(workers, n_runs))) if len(c)]


def _map(fn, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _global_worker(cfg: ExperimentConfig, indices: np.ndarray):
    obj = build_objective(cfg.objective)
    noise = NoiseModel(cfg.noise.get("kind", "none"), float(cfg.noise.get("sigma", 0.0)))
    method = Method.sgd() if cfg.kind == "global-sgd" else Method.shb(cfg.nu)
    sched = StepSchedule(float(cfg.schedule["gamma1"]), _theta(cfg, obj.pl_meta.beta))
    x1 = None if cfg.init == "mixture" else np.asarray(cfg.init, dtype=float)
    ens = run_ensemble(obj, noise, method, sched, cfg.n_max, len(indices), cfg.base_seed, x1=x1, run_indices=indices)
    return ens.n, ens.gaps, ens.diverged, None, {}


def _local_worker(cfg: ExperimentConfig, indices: np.ndarray):
    theta = cfg.schedule.get("theta", 0.75)
    theta = 0.75 if theta == "optimal" else float(theta)
    setup = double_well_setup(
        delta=float(cfg.region.get("delta", 0.1)), sigma=float(cfg.noise.get("sigma", 1.0)), theta=theta,
        r_bold=float(cfg.region.get("r_bold", cfg.objective.get("r_bold", 0.5))),
        start_fraction=float(cfg.region.get("start_fraction", 0.25)),
    )
    sched = setup.sched if cfg.schedule["gamma1"] == "budget" else StepSchedule(float(cfg.schedule["gamma1"]), theta)
    x1 = setup.x1 if cfg.init == "mixture" else np.asarray(cfg.init, dtype=float)
    tracked = track_ensemble(setup.obj, setup.noise, sched, setup.region, x1, cfg.n_max, len(indices),
                             cfg.base_seed, run_indices=indices)
    ens = tracked.ensemble
    extra = {"lemma_violations": tracked.lemma_violations, "bound_violations": tracked.bound_violations,
             "gamma1": sched.gamma1, "theta": sched.theta, "epsilon": setup.epsilon, "s": setup.s, "delta": setup.delta}
    return ens.n, ens.gaps, ens.diverged, tracked.stayed, extra


def _rl_worker(cfg: ExperimentConfig, indices: np.ndarray):
    from .rl import run_policy_gradient, sublevel_setup

    mdp = _build_mdp(cfg.mdp)
    theta = cfg.schedule.get("theta", 2.0 / 3.0)
    theta = 2.0 / 3.0 if theta == "optimal" else float(theta)
    region, w1 = sublevel_setup(mdp, cfg.lam, cfg.alpha, exact_min_policy=cfg.radius == "exact-min-policy")
    run = run_policy_gradient(mdp, cfg.lam, StepSchedule(float(cfg.schedule["gamma1"]), theta), w1, cfg.n_max,
                              len(indices), cfg.base_seed, region, cfg.baseline, run_indices=indices)
    diverged = ~np.all(np.isfinite(run.gaps), axis=1)
    extra = {"r": region.r, "epsilon": region.epsilon, "theta": theta, "w1": w1.tolist()}
    return run.n, run.gaps, diverged, run.stayed, extra


# ----------------------------------------------------------------------------- bundle I/O


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_runs_csv(path, n, gaps, stayed=None, run_ids=None) -> None:
    """Write ``run_id,checkpoint_n,gap[,stayed]`` rows with 17 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["run_id", "checkpoint_n", "gap"] + (["stayed"] if stayed is not None else [])
    writer.writerow(header)
    ids = np.arange(len(gaps)) if run_ids is None else run_ids
    for i, rid in enumerate(ids):
        for j, nj in enumerate(n):
            row = [int(rid), int(nj), _fmt(gaps[i, j])]
            if stayed is not None:
                row.append(int(bool(stayed[i])))
            writer.writerow(row)
    Path(path).write_bytes(buf.getvalue().encode())


def read_runs_csv(path):
    """Inverse of :func:`write_runs_csv`: ``(n, gaps, stayed_or_None, run_ids)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path} has no data rows")
    header, body = rows[0], rows[1:]
    if header[:3] != ["run_id", "checkpoint_n", "gap"]:
        raise ValueError(f"{path}: unexpected header {header}")
    run_ids = sorted({int(r[0]) for r in body})
    n = np.array(sorted({int(r[1]) for r in body}), dtype=np.int64)
    pos_run = {rid: i for i, rid in enumerate(run_ids)}
    pos_n = {int(v): j for j, v in enumerate(n)}
    gaps = np.full((len(run_ids), len(n)), np.nan)
    stayed = np.zeros(len(run_ids), dtype=bool) if len(header) > 3 else None
    for r in body:
        i, j = pos_run[int(r[0])], pos_n[int(r[1])]
        gaps[i, j] = float(r[2])
        if stayed is not None:
            stayed[i] = r[3] == "1"
    return n, gaps, stayed, np.array(run_ids)


def _write_summary(path, n, gaps, diverged) -> None:
    from .optimizers import Ensemble

    stats = ensemble_stats(Ensemble(n, gaps, diverged, np.arange(len(gaps)), 0, ""))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["checkpoint_n", "mean_gap", "median_gap", "p10", "p90", "n_diverged"])
    for j, nj in enumerate(n):
        writer.writerow([int(nj), _fmt(stats.mean[j]), _fmt(stats.median[j]), _fmt(stats.p10[j]), _fmt(stats.p90[j]), stats.n_diverged])
    Path(path).write_bytes(buf.getvalue().encode())
    return stats


def _write_plot(path, n, gaps, diverged, mean, ref_exponent, title) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "plsgd"
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for row in gaps[~diverged][:200]:
        ok = np.isfinite(row) & (row > 0)
        ax.plot(n[ok], row[ok], color="tab:blue", alpha=0.08, linewidth=0.6)
    ok = np.isfinite(mean) & (mean > 0)
    ax.plot(n[ok], mean[ok], color="tab:blue", linewidth=2.2, label="mean gap")
    if ref_exponent is not None and ok.any():
        anchor_n = 1000 if n[-1] >= 1000 else n[ok][0]
        j = int(np.argmin(np.abs(n - anchor_n)))
        if np.isfinite(mean[j]) and mean[j] > 0:
            ref = mean[j] * (n / n[j]) ** (-ref_exponent)
            ax.plot(n, ref, linestyle="-.", color="black", linewidth=1.2, label=f"n^(-{ref_exponent:.3g})")
    if any(len(line.get_xdata()) for line in ax.lines):
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.legend(loc="lower left")
    else:
        ax.text(0.5, 0.5, "no finite positive gaps", ha="center", va="center", transform=ax.transAxes)
    ax.set_xlabel("iteration n")
    ax.set_ylabel("optimality gap")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


@dataclass(frozen=True)
class Bundle:
    path: Path
    status: str
    checks: dict


def _stayed_view(gaps, diverged, stayed):
    if stayed is None:
        return gaps, diverged
    return gaps[stayed], diverged[stayed]


def _evaluate_check(cfg: ExperimentConfig, n, gaps, diverged, stayed, extra, mean, ref_exponent) -> dict:
    mode = cfg.check.get("mode") or {"global-sgd": "slope", "global-shb": "slope", "local": "trapping",
                                      "rl": "rl-local", "envelope": "envelope"}[cfg.kind]
    out = {"mode": mode}
    if mode == "slope":
        window = cfg.check.get("window", [1000, None])
        tol = float(cfg.check.get("tolerance", 0.25))
        try:
            fit = fit_rate(n, mean, (window[0], window[1]))
            out.update(slope=fit.slope, target=-ref_exponent, tolerance=tol, passed=abs(fit.slope + ref_exponent) <= tol)
        except ValueError as exc:
            out.update(passed=False, error=str(exc))
    elif mode == "nonincreasing":
        tail = n >= n[-1] / 10
        seq = mean[tail]
        out.update(passed=bool(np.all(np.isfinite(seq)) and np.all(np.diff(seq) <= 0)))
    elif mode in ("trapping", "rl-local"):
        runs = len(gaps)
        stay = stayed.mean()
        if mode == "trapping":
            delta = float(extra.get("delta", 0.1))
            need = 1.0 - delta - 3.0 * np.sqrt(delta * (1 - delta) / runs)
        else:
            need = 0.9 - 3.0 * np.sqrt(0.09 / runs)
        j_lo = int(np.searchsorted(n, 100))
        sel = stayed & ~diverged
        ratio = float(np.mean(gaps[sel, -1]) / np.mean(gaps[sel, j_lo])) if sel.any() else float("nan")
        passed = stay >= need and ratio <= 0.1
        if mode == "trapping":
            passed = passed and extra.get("lemma_violations", 0) == 0
        out.update(stayed_fraction=float(stay), required=float(need), decay_ratio=ratio, passed=bool(passed))
    elif mode == "envelope":
        ratio = float(extra["ratio"])
        offset = float(extra["eta_offset"])
        passed = ratio <= 0.1 if offset > 0 else ratio >= 0.5
        out.update(ratio=ratio, passed=bool(passed))
    else:
        raise ConfigError("check.mode", f"unknown mode {mode!r}")
    return out


def _run_envelope(cfg: ExperimentConfig):
    env = cfg.envelope
    beta = float(env["beta"])
    theta = float(env["theta"]) if "theta" in env else optimal_theta(beta)
    theta = clamp_theta(theta)
    offset = float(env.get("eta_offset", 0.05))
    eta = admissible_eta_lower_bound(beta, theta) + offset
    coef = RecursionCoefficients(float(env.get("c1", 0.0)), float(env.get("c2", 1.0)), float(env.get("c3", 1.0)), beta)
    y = envelope_iterate(coef, StepSchedule(float(env.get("gamma1", 1.0)), theta), float(env.get("y1", 1.0)), cfg.n_max)
    n = checkpoint_grid(cfg.n_max)
    gaps = y[n - 1][None, :]
    lo = min(1000, cfg.n_max)
    ratio = (cfg.n_max ** (1 - eta) * y[-1]) / (lo ** (1 - eta) * y[lo - 1])
    extra = {"eta": eta, "theta": theta, "eta_offset": offset, "ratio": float(ratio)}
    return n, gaps, np.zeros(1, dtype=bool), None, extra


def _resolve_threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", THREADS_ENV, env)
    return 1


def _reference_exponent(cfg: ExperimentConfig, extra: dict):
    if cfg.kind in ("global-sgd", "global-shb"):
        return theoretical_rate(build_objective(cfg.objective).pl_meta.beta)
    if cfg.kind in ("local", "rl"):
        return float(extra.get("theta"))
    return None


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> Bundle:
    """Run ``cfg`` and write its bundle; returns the bundle path, status and checks."""
    workers = _resolve_threads(threads)
    if cfg.kind == "envelope":
        n, gaps, diverged, stayed, extra = _run_envelope(cfg)
    else:
        worker = {"global-sgd": _global_worker, "global-shb": _global_worker, "local": _local_worker, "rl": _rl_worker}[cfg.kind]
        parts = _map(worker, [(cfg, idx) for idx in _chunks(cfg.n_runs, workers)], workers)
        n = parts[0][0]
        gaps = np.vstack([p[1] for p in parts])
        diverged = np.concatenate([p[2] for p in parts])
        stayed = None if parts[0][3] is None else np.concatenate([p[3] for p in parts])
        extra = dict(parts[0][4])
        for key in ("lemma_violations", "bound_violations"):
            if key in extra:
                extra[key] = int(sum(p[4][key] for p in parts))

    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    write_runs_csv(out / "runs.csv", n, gaps, stayed)
    ref_exp = _reference_exponent(cfg, extra)
    view_gaps, view_div = _stayed_view(gaps, diverged, stayed)
    if len(view_gaps) == 0:
        view_gaps, view_div = gaps, diverged
    stats = _write_summary(out / "summary.csv", n, view_gaps, view_div)
    _write_plot(out / "plot.svg", n, view_gaps, view_div, stats.mean, ref_exp, cfg.label or cfg.kind)

    status = "ok"
    if diverged.mean() > 0.5:
        status = "failed"
    checks = _evaluate_check(cfg, n, gaps, diverged, stayed if stayed is not None else np.ones(len(gaps), bool),
                             extra, stats.mean, ref_exp)
    manifest = {
        "config": cfg.to_dict(),
        "config_digest": config_digest(cfg.to_dict()),
        "base_seed": cfg.base_seed,
        "run_indices": [0, cfg.n_runs] if cfg.kind != "envelope" else [0, 1],
        "seed_rule": "numpy PCG64 with SeedSequence(base_seed, spawn_key=(run_index,))",
        "library_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "status": status,
        "diverged_fraction": float(diverged.mean()),
        "reference_exponent": ref_exp,
        "details": extra,
        "checks": checks,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return Bundle(out, status, checks)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def emit_report(bundle_dir) -> tuple[Path, Path]:
    """Rebuild ``summary.csv`` and ``plot.svg`` from ``runs.csv`` (and the manifest if present)."""
    bundle = Path(bundle_dir)
    runs = bundle / "runs.csv"
    if not runs.exists():
        raise FileNotFoundError(f"{runs} not found")
    n, gaps, stayed, _ = read_runs_csv(runs)
    diverged = ~np.all(np.isfinite(gaps), axis=1)
    ref_exp, title = None, bundle.name
    manifest = bundle / "manifest.json"
    if manifest.exists():
        meta = json.loads(manifest.read_text())
        ref_exp = meta.get("reference_exponent")
        conf = meta.get("config", {})
        title = conf.get("label") or conf.get("kind") or title
    view_gaps, view_div = _stayed_view(gaps, diverged, stayed)
    if len(view_gaps) == 0:
        view_gaps, view_div = gaps, diverged
    stats = _write_summary(bundle / "summary.csv", n, view_gaps, view_div)
    _write_plot(bundle / "plot.svg", n, view_gaps, view_div, stats.mean, ref_exp, title)
    return bundle / "summary.csv", bundle / "plot.svg"


# ----------------------------------------------------------------------------- entry point


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["base_seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        changes["n_runs"] = args.runs
    if getattr(args, "n_max", None) is not None:
        changes["n_max"] = args.n_max
    if getattr(args, "out", None) is not None:
        changes["output"] = args.out
    return replace(cfg, **changes) if changes else cfg


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override base_seed")
    common.add_argument("--runs", type=int, help="override n_runs")
    common.add_argument("--n-max", type=int, dest="n_max", help="override n_max")
    common.add_argument("--threads", type=int, help=f"worker processes (default ${THREADS_ENV} or 1)")
    common.add_argument("--check", action="store_true", help="exit with status 3 if a threshold fails")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="plsgd", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run an experiment config"), ("envelope", "iterate the deterministic envelope"),
                           ("rl", "run a policy-gradient config")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("config")
        p.add_argument("--out", help="override the output directory")
    p = sub.add_parser("figure1", parents=[common], help="run the eight monomial experiments")
    p.add_argument("--out", default="figure1")
    p = sub.add_parser("report", help="rebuild summary.csv and plot.svg of a bundle")
    p.add_argument("bundle")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            summary, plot = emit_report(args.bundle)
            print(f"wrote {summary} and {plot}")
            return EXIT_OK
        if args.command == "figure1":
            configs = figure1_preset(out=args.out)
            configs = [_apply_overrides(replace(c, output=str(Path(args.out) / c.label)), argparse.Namespace(
                seed=args.seed, runs=args.runs, n_max=args.n_max, out=None)) for c in configs]
        else:
            cfg = load_config(args.config)
            expected = {"envelope": ("envelope",), "rl": ("rl",)}.get(args.command)
            if expected and cfg.kind not in expected:
                raise ConfigError("kind", f"the {args.command} subcommand needs kind={expected[0]!r}")
            configs = [_apply_overrides(cfg, args)]
            _validate(configs[0])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    failed = False
    for cfg in configs:
        bundle = run_experiment(cfg, args.threads)
        verdict = "pass" if bundle.checks.get("passed") else "FAIL"
        print(f"{cfg.label or cfg.kind}: {bundle.status}, check {verdict} -> {bundle.path}")
        failed |= bundle.status != "ok" or not bundle.checks.get("passed", False)
    return EXIT_CHECK if (args.check and failed) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
