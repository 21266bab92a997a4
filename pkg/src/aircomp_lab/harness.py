"""Experiment orchestration for the radio-map study.

An :class:`ExperimentSpec` describes a sweep over one axis. Every trial
draws a fresh scenario from its own seed, runs the local experts once and
fuses their predictions with each requested method. The adaptive method
reuses one truncation setting per sweep point, optimised offline on
pseudo-scenarios.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import dgpr
from .aircomp import TruncationParams, required_slots
from .bayesopt import BoConfig, BoResult, optimize_truncation
from .channel import RadioSystem, SystemConfig, gain_db_for_psnr
from .dgpr import ExpertSettings
from .radiomap import ScenarioParams, generate_scenario

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

log = logging.getLogger(__name__)

SWEEP_AXES = ("psnr", "d_cor", "sigma_omega", "eps_d", "eps_sigma")
TRIAL_HEADER = ("sweep_axis", "sweep_value", "method", "trial", "rmse_db", "diverged")
SUMMARY_HEADER = ("sweep_axis", "sweep_value", "method", "median_rmse_db", "diverged_count")
TRACE_HEADER = ("sweep_axis", "sweep_value", "step", "delta_min", "delta_max", "mse",
                "best_so_far", "surrogate_fallback")

# Stream tags for SeedSequence entropy, so streams never collide.
_TRIAL_STREAM = 0
_BO_STREAM = 1


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: ScenarioParams = field(default_factory=ScenarioParams)
    system: RadioSystem = field(default_factory=RadioSystem)
    methods: tuple = ("noiseless", "pure", "simple", "adaptive", "pathloss")
    bo: BoConfig = field(default_factory=BoConfig)
    experts: ExpertSettings = field(default_factory=ExpertSettings)
    n_trials: int = 100
    seed: int = 0
    mismatch: tuple = (0.0, 0.0)
    sweep_axis: str = "psnr"
    sweep_values: tuple = (30.0,)
    n_pseudo_reps: int = 100
    reoptimize_per_trial: bool = False

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "sweep_values", tuple(float(v) for v in self.sweep_values))
        object.__setattr__(self, "mismatch", tuple(float(v) for v in self.mismatch))
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        unknown = [m for m in self.methods if m not in dgpr.METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {dgpr.METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("duplicate methods")
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {self.sweep_axis!r}; choose from {SWEEP_AXES}")
        if not self.sweep_values:
            raise ConfigError("sweep values must be nonempty")
        if len(self.mismatch) != 2:
            raise ConfigError("mismatch is (eps_d, eps_sigma)")
        if self.n_pseudo_reps < 1:
            raise ConfigError("n_pseudo_reps must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class SweepPoint:
    """Fully resolved settings for one sweep value."""

    index: int
    value: float
    scenario: ScenarioParams
    system: SystemConfig
    mismatch: tuple


@dataclass
class ResultRecord:
    sweep_axis: str
    sweep_value: float
    method: str
    rmse_db: list
    diverged: list
    wall_time: float = 0.0

    @property
    def median_rmse_db(self) -> float:
        return float(np.median(self.rmse_db))

    @property
    def diverged_count(self) -> int:
        return int(sum(self.diverged))


# --------------------------------------------------------------------------
# configuration

def _build(cls, table, where):
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name for f in fields(cls)}
    extra = sorted(set(table) - known)
    if extra:
        raise ConfigError(f"unknown keys in [{where}]: {', '.join(extra)}")
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc


_TOP_KEYS = {"seed", "n_trials", "methods", "n_pseudo_reps", "reoptimize_per_trial",
             "scenario", "system", "bo", "experts", "mismatch", "sweep"}


def spec_from_dict(data: dict) -> ExperimentSpec:
    """Build a spec from parsed configuration; unknown keys are rejected."""
    extra = sorted(set(data) - _TOP_KEYS)
    if extra:
        raise ConfigError(f"unknown top-level keys: {', '.join(extra)}")
    kwargs = {k: data[k] for k in ("seed", "n_trials", "methods", "n_pseudo_reps",
                                   "reoptimize_per_trial") if k in data}
    if "scenario" in data:
        kwargs["scenario"] = _build(ScenarioParams, data["scenario"], "scenario")
    if "system" in data:
        kwargs["system"] = _build(RadioSystem, data["system"], "system")
    if "bo" in data:
        kwargs["bo"] = _build(BoConfig, data["bo"], "bo")
    if "experts" in data:
        kwargs["experts"] = _build(ExpertSettings, data["experts"], "experts")
    if "mismatch" in data:
        mm = data["mismatch"]
        extra = sorted(set(mm) - {"eps_d", "eps_sigma"})
        if extra:
            raise ConfigError(f"unknown keys in [mismatch]: {', '.join(extra)}")
        kwargs["mismatch"] = (mm.get("eps_d", 0.0), mm.get("eps_sigma", 0.0))
    if "sweep" in data:
        sw = data["sweep"]
        extra = sorted(set(sw) - {"axis", "values"})
        if extra:
            raise ConfigError(f"unknown keys in [sweep]: {', '.join(extra)}")
        if "axis" in sw:
            kwargs["sweep_axis"] = sw["axis"]
        if "values" in sw:
            kwargs["sweep_values"] = sw["values"]
    try:
        return ExperimentSpec(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_toml(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_spec(path) -> ExperimentSpec:
    return spec_from_dict(load_toml(path))


# --------------------------------------------------------------------------
# seeding and sweep resolution

def trial_seed(seed: int, axis_index: int, trial: int) -> np.random.SeedSequence:
    """Seed for one trial; independent of how many other trials exist."""
    return np.random.SeedSequence([seed, axis_index, _TRIAL_STREAM, trial])


def bo_seed(seed: int, axis_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, axis_index, _BO_STREAM])


def resolve_point(spec: ExperimentSpec, index: int) -> SweepPoint:
    value = spec.sweep_values[index]
    scen, sysd, (eps_d, eps_s) = spec.scenario, spec.system, spec.mismatch
    axis = spec.sweep_axis
    if axis == "psnr":
        sysd = replace(sysd, gain_db=gain_db_for_psnr(value, sysd.p_max_dbm, sysd.noise_dbm))
    elif axis == "d_cor":
        scen = replace(scen, d_cor=value)
    elif axis == "sigma_omega":
        sysd = replace(sysd, gain_spread_sigma_db=value)
    elif axis == "eps_d":
        eps_d = value
    elif axis == "eps_sigma":
        eps_s = value
    return SweepPoint(index, value, scen, sysd.build(scen.n_test), (eps_d, eps_s))


# --------------------------------------------------------------------------
# evaluation

def rmse_db(truth, estimate) -> float:
    """Root-mean-square difference of two dB fields; ``inf`` if any estimate is non-finite."""
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {estimate.shape}")
    if not np.all(np.isfinite(estimate)):
        return float("inf")
    return float(np.sqrt(np.mean((truth - estimate) ** 2)))


def optimize_point(spec: ExperimentSpec, point: SweepPoint) -> BoResult:
    """Offline truncation tuning from pseudo-scenarios with the assumed statistics."""
    rng = np.random.default_rng(bo_seed(spec.seed, point.index))
    assumed = point.scenario.mismatched(*point.mismatch)
    fw, fs = dgpr.pseudo_distributions(assumed, point.system.num_nodes, spec.n_pseudo_reps,
                                       rng, spec.experts)
    return optimize_truncation(spec.bo, fs, fw, point.system, rng)


def run_trial(spec: ExperimentSpec, point: SweepPoint, trial: int,
              theta: TruncationParams | None) -> dict:
    """Evaluate every method on one scenario. Returns ``method -> (rmse, diverged)``."""
    ss = trial_seed(spec.seed, point.index, trial)
    scen_ss, *method_ss = ss.spawn(1 + len(dgpr.METHODS))
    scen_rng = np.random.default_rng(scen_ss)
    scenario = generate_scenario(point.scenario, scen_rng)
    preds = None
    if any(m != "pathloss" for m in spec.methods):
        preds = dgpr.predict_experts(scenario, point.system.num_nodes, scen_rng,
                                     settings=spec.experts)
    if spec.reoptimize_per_trial and "adaptive" in spec.methods:
        theta = optimize_point(spec, point).theta
    out = {}
    for method in spec.methods:
        rng = np.random.default_rng(method_ss[dgpr.METHODS.index(method)])
        res = dgpr.fuse_predictions(preds, method, point.system, rng, theta=theta,
                                    scenario=scenario)
        err = rmse_db(scenario.true_test, res.estimate)
        out[method] = (err, bool(np.any(res.diverged)) or not math.isfinite(err))
    return out


def run_experiment(spec: ExperimentSpec, threads: int = 1,
                   thetas: dict | None = None) -> list[ResultRecord]:
    """Run the whole sweep. Results do not depend on ``threads``.

    ``thetas`` optionally receives the truncation result per sweep index.
    """
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    records = []
    for index in range(len(spec.sweep_values)):
        point = resolve_point(spec, index)
        start = time.perf_counter()
        theta = None
        if "adaptive" in spec.methods and not spec.reoptimize_per_trial:
            bo = optimize_point(spec, point)
            theta = bo.theta
            if thetas is not None:
                thetas[index] = bo
            log.info("%s=%g: theta=(%.4g, %.4g)", spec.sweep_axis, point.value,
                     theta.delta_min, theta.delta_max)

        def job(trial, point=point, theta=theta):
            return run_trial(spec, point, trial, theta)

        trials = range(spec.n_trials)
        if threads == 1:
            results = [job(t) for t in trials]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(job, trials))
        elapsed = time.perf_counter() - start
        for method in spec.methods:
            records.append(ResultRecord(
                sweep_axis=spec.sweep_axis,
                sweep_value=point.value,
                method=method,
                rmse_db=[r[method][0] for r in results],
                diverged=[r[method][1] for r in results],
                wall_time=elapsed,
            ))
    return records


# --------------------------------------------------------------------------
# output

def fmt(x: float) -> str:
    """Round-trippable decimal text (17 significant digits)."""
    return format(float(x), ".17g")


def _write_rows(path: Path, header, rows):
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def emit_csv(records, path) -> tuple[Path, Path]:
    """Write the per-trial CSV at ``path`` and a ``*_summary.csv`` beside it."""
    path = Path(path)
    summary = path.with_name(path.stem + "_summary" + path.suffix)
    trial_rows, summary_rows = [], []
    for rec in records:
        for i, (err, div) in enumerate(zip(rec.rmse_db, rec.diverged)):
            trial_rows.append((rec.sweep_axis, fmt(rec.sweep_value), rec.method, i,
                               fmt(err), int(div)))
        summary_rows.append((rec.sweep_axis, fmt(rec.sweep_value), rec.method,
                             fmt(rec.median_rmse_db), rec.diverged_count))
    _write_rows(path, TRIAL_HEADER, trial_rows)
    _write_rows(summary, SUMMARY_HEADER, summary_rows)
    return path, summary


def read_trials_csv(path) -> list[ResultRecord]:
    """Parse a per-trial CSV back into records (wall time is not stored)."""
    grouped: dict = {}
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRIAL_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            key = (row["sweep_axis"], float(row["sweep_value"]), row["method"])
            rec = grouped.setdefault(key, ResultRecord(*key, rmse_db=[], diverged=[]))
            rec.rmse_db.append(float(row["rmse_db"]))
            rec.diverged.append(bool(int(row["diverged"])))
    return list(grouped.values())


def latency_rows(num_nodes: int):
    """Uplink slots per averaging round for each aggregation scheme."""
    return [(m, required_slots(m, num_nodes)) for m in ("pure", "simple", "adaptive", "digital")]


def emit_latency_csv(num_nodes: int, path) -> Path:
    path = Path(path)
    _write_rows(path, ("method", "required_slots"), latency_rows(num_nodes))
    return path


def trace_rows(axis: str, value: float, bo: BoResult):
    for rec in bo.trace:
        yield (axis, fmt(value), rec.step, fmt(rec.delta_min), fmt(rec.delta_max), fmt(rec.mse),
               fmt(rec.best_so_far), int(rec.surrogate_fallback))


def run_bo_trace(spec: ExperimentSpec, path) -> Path:
    """Optimise every sweep point and write the per-step diagnostics."""
    rows = []
    for index in range(len(spec.sweep_values)):
        point = resolve_point(spec, index)
        rows.extend(trace_rows(spec.sweep_axis, point.value, optimize_point(spec, point)))
    path = Path(path)
    _write_rows(path, TRACE_HEADER, rows)
    return path
