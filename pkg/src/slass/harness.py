"""Multi-trial experiment runner, metric aggregation and file output.

Every trial draws its randomness from (seed, trial)-keyed streams, so a policy
comparison runs all policies on the same world realizations. Aggregation is a
fixed-order reduction over trial indices, which keeps output files
byte-identical across repeated runs regardless of the worker count.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import ExperimentConfig
from .policies import PolicyKind
from .sim import TrialResult, run_trial

log = logging.getLogger(__name__)


@dataclass
class TrialSummary:
    trial: int
    termination: str
    num_cycles: int
    error_series: np.ndarray
    distance_series: np.ndarray
    constraint_violations: int
    message: str = ""
    trajectory: list[list[float]] | None = None

    @property
    def final_error(self) -> float:
        return float(self.error_series[-1])

    @property
    def final_distance(self) -> float:
        return float(self.distance_series[-1])


@dataclass
class AggregateMetrics:
    rmse: np.ndarray
    rmse_stderr: np.ndarray
    distance: np.ndarray  # mean robot-1 distance to the source
    distance_stderr: np.ndarray
    success_rate: float
    mean_cycles_to_arrival: float  # nan without successes

    def check(self) -> None:
        if not (np.all(np.isfinite(self.rmse)) and np.all(self.rmse >= 0)):
            raise ValueError("RMSE series must be finite and non-negative")

    @property
    def final_rmse(self) -> float:
        return float(self.rmse[-1])

    @property
    def final_distance(self) -> float:
        return float(self.distance[-1])


@dataclass
class ExperimentResult:
    policy: str
    config: ExperimentConfig
    metrics: AggregateMetrics
    trials: list[TrialSummary] = field(repr=False)

    @property
    def constraint_violations(self) -> int:
        return sum(t.constraint_violations for t in self.trials)


def trajectory_rows(result: TrialResult) -> list[list[float]]:
    rows = []
    for r in result.records:
        row = [float(r.cycle)]
        row += r.true_robots.ravel().tolist()
        row += r.robot_estimates.ravel().tolist()
        row += r.source_estimate.tolist()
        row += r.control.ravel().tolist()
        rows.append(row)
    return rows


def summarize_trial(result: TrialResult, keep_trajectory: bool = False) -> TrialSummary:
    return TrialSummary(
        trial=result.trial,
        termination=result.termination,
        num_cycles=result.num_cycles,
        error_series=result.error_series(),
        distance_series=result.distance_series(0),
        constraint_violations=result.constraint_violations,
        message=result.message,
        trajectory=trajectory_rows(result) if keep_trajectory else None,
    )


def _trial_job(args) -> TrialSummary:
    cfg, policy, trial, keep = args
    return summarize_trial(run_trial(cfg, policy, trial), keep)


def _rmse(errors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-cycle RMSE over trials (rows) and its delta-method standard error."""
    sq = errors**2
    mse = sq.mean(axis=0)
    rmse = np.sqrt(mse)
    n = errors.shape[0]
    se_mse = sq.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mse)
    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.where(rmse > 0, se_mse / (2 * rmse), 0.0)
    return rmse, se


def aggregate(trials: list[TrialSummary]) -> AggregateMetrics:
    trials = sorted(trials, key=lambda t: t.trial)
    # a trial aborted before its first record has no series to clamp
    usable = [t for t in trials if t.num_cycles > 0]
    if not usable:
        raise ValueError("no trial produced a cycle record")
    errors = np.array([t.error_series for t in usable])
    dists = np.array([t.distance_series for t in usable])
    rmse, rmse_se = _rmse(errors)
    n = len(usable)
    dist_se = dists.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(dists.shape[1])
    arrivals = [t.num_cycles for t in trials if t.termination == "all_arrived"]
    metrics = AggregateMetrics(
        rmse=rmse,
        rmse_stderr=rmse_se,
        distance=dists.mean(axis=0),
        distance_stderr=dist_se,
        success_rate=len(arrivals) / len(trials),
        mean_cycles_to_arrival=float(np.mean(arrivals)) if arrivals else math.nan,
    )
    metrics.check()
    return metrics


def default_workers() -> int:
    env = os.environ.get("SLASS_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_trials(
    cfg: ExperimentConfig,
    policy,
    workers: int | None = None,
    keep_trajectories: bool = False,
) -> list[TrialSummary]:
    policy = PolicyKind(policy).value
    jobs = [(cfg, policy, t, keep_trajectories) for t in range(cfg.num_trials)]
    workers = min(workers or default_workers(), len(jobs))
    if workers <= 1:
        return [_trial_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_trial_job, jobs))


def _write_series(path: Path, values: np.ndarray, stderr: np.ndarray | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cycle", "value"] + (["stderr"] if stderr is not None else []))
        for n, v in enumerate(values, 1):
            row = [n, repr(float(v))]
            if stderr is not None:
                row.append(repr(float(stderr[n - 1])))
            w.writerow(row)


def config_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["source_true"] = list(cfg.source_true)
    d["robot_starts"] = [list(p) for p in cfg.robot_starts]
    d["area"] = list(cfg.area)
    return d


def _json_float(x: float):
    return x if math.isfinite(x) else None


def write_experiment(result: ExperimentResult, out_dir, label: str | None = None) -> list[Path]:
    """CSV per metric plus a JSON manifest; returns the written paths."""
    out = Path(out_dir)
    label = label or result.policy
    try:
        out.mkdir(parents=True, exist_ok=True)
        m = result.metrics
        paths = [out / f"{label}_rmse.csv", out / f"{label}_distance.csv"]
        _write_series(paths[0], m.rmse, m.rmse_stderr)
        _write_series(paths[1], m.distance, m.distance_stderr)
        manifest = {
            "version": f"slass-{__version__}",
            "policy": result.policy,
            "config": config_dict(result.config),
            "success_rate": m.success_rate,
            "mean_cycles_to_arrival": _json_float(m.mean_cycles_to_arrival),
            "final_rmse": m.final_rmse,
            "mean_final_distance": m.final_distance,
            "constraint_violations": result.constraint_violations,
            "trials": [
                {
                    "trial": t.trial,
                    "termination": t.termination,
                    "cycles": t.num_cycles,
                    "final_error": t.final_error,
                    "final_distance": t.final_distance,
                    **({"message": t.message} if t.message else {}),
                }
                for t in result.trials
            ],
        }
        paths.append(out / f"{label}_manifest.json")
        paths[-1].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

        if any(t.trajectory is not None for t in result.trials):
            tdir = out / "trajectories"
            tdir.mkdir(exist_ok=True)
            k = result.config.num_robots
            header = ["cycle"]
            header += [f"true_{a}{i + 1}" for i in range(k) for a in "xy"]
            header += [f"est_{a}{i + 1}" for i in range(k) for a in "xy"]
            header += ["src_est_x", "src_est_y"]
            header += [f"c_{a}{i + 1}" for i in range(k) for a in "xy"]
            for t in result.trials:
                path = tdir / f"{label}_trial{t.trial:04d}.csv"
                with open(path, "w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(header)
                    for row in t.trajectory:
                        w.writerow([int(row[0])] + [repr(v) for v in row[1:]])
                paths.append(path)
    except OSError as exc:
        raise OSError(f"failed writing experiment output under {out}: {exc}") from exc
    return paths


def run_experiment(
    cfg: ExperimentConfig,
    policy,
    out_dir=None,
    workers: int | None = None,
    dump_trajectories: bool = False,
    label: str | None = None,
) -> ExperimentResult:
    """Run cfg.num_trials trials of one policy and aggregate the clamped series."""
    policy = PolicyKind(policy).value
    t0 = time.perf_counter()
    trials = run_trials(cfg, policy, workers, dump_trajectories)
    result = ExperimentResult(policy, cfg, aggregate(trials), trials)
    log.info(
        "%s: %d trials in %.1fs, final RMSE %.3f m, success %.2f",
        label or policy,
        cfg.num_trials,
        time.perf_counter() - t0,
        result.metrics.final_rmse,
        result.metrics.success_rate,
    )
    if out_dir is not None:
        write_experiment(result, out_dir, label)
    return result


def _labels(policies) -> list[str]:
    seen: dict[str, int] = {}
    labels = []
    for p in policies:
        name = PolicyKind(p).value
        seen[name] = seen.get(name, 0) + 1
        labels.append(name if seen[name] == 1 else f"{name}_{seen[name]}")
    return labels


def compare_policies(
    cfg: ExperimentConfig,
    policies,
    out_dir=None,
    workers: int | None = None,
    dump_trajectories: bool = False,
) -> dict[str, ExperimentResult]:
    """Run each policy on the same trial streams and tabulate them side by side."""
    policies = list(policies)
    if len(policies) < 2:
        raise ValueError("compare_policies needs at least two policies")
    results = {}
    for label, p in zip(_labels(policies), policies):
        results[label] = run_experiment(cfg, p, out_dir, workers, dump_trajectories, label)
    if out_dir is not None:
        write_comparison(results, out_dir)
    return results


def write_comparison(results: dict[str, ExperimentResult], out_dir) -> None:
    out = Path(out_dir)
    labels = list(results)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for metric in ("rmse", "distance"):
            cols = [getattr(results[l].metrics, metric) for l in labels]
            with open(out / f"comparison_{metric}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["cycle", *labels])
                for n in range(len(cols[0])):
                    w.writerow([n + 1, *(repr(float(c[n])) for c in cols)])
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(
                ["policy", "final_rmse", "success_rate", "mean_final_distance",
                 "mean_cycles_to_arrival", "constraint_violations"]
            )
            for l in labels:
                m = results[l].metrics
                w.writerow([
                    l,
                    repr(m.final_rmse),
                    repr(m.success_rate),
                    repr(m.final_distance),
                    repr(m.mean_cycles_to_arrival),
                    results[l].constraint_violations,
                ])
    except OSError as exc:
        raise OSError(f"failed writing comparison under {out}: {exc}") from exc
