"""Seeded Monte Carlo power-flow oracle and accuracy/runtime comparison.

Samples are drawn once up front from the seeded generator, so the solve
phase can be chunked across workers without changing a single bit of the
statistics: each sample's solve is a pure function of (case, sample).
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .exceptions import (
    AllSamplesFailed,
    DimensionMismatch,
    ExcessiveFailureRate,
    NotPSD,
)
from .model import GridCase
from .parameters import StochasticParameterSet
from .powerflow import (
    MetricSpec,
    NewtonOptions,
    PowerFlowSolution,
    build_admittance,
    evaluate_metrics,
    solve_power_flow,
)
from .worstcase import RmssReport

_Z95 = float(norm.ppf(0.975))
_MAX_FAILURE_RATE = 0.01  # beyond this the comparison is unrepresentative

CI_PERCENTILE = "percentile"  # empirical 2.5/97.5 percentiles of the metric distribution
CI_MEAN = "mean"  # normal-theory confidence interval of the mean


@dataclass(eq=False)
class SampleBatch:
    """Reproducible i.i.d. multivariate-normal parameter draws."""

    values: np.ndarray  # (n, d) pu
    seed: int
    generator: str = "pcg64"


def sample_parameters(params: StochasticParameterSet, n: int, seed: int) -> SampleBatch:
    """Draw n joint samples via a symmetric factor of the covariance."""
    if n < 0:
        raise ValueError(f"sample count must be nonnegative, got {n}")
    if params.distribution != "normal":
        raise NotPSD(f"unsupported distribution {params.distribution!r}")
    factor = params.factor()
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, len(params)))
    return SampleBatch(values=params.means + z @ factor.T, seed=seed)


def _solve_batch(
    case: GridCase,
    params: StochasticParameterSet,
    spec: MetricSpec,
    samples: np.ndarray,
    start: PowerFlowSolution | None,
    options: NewtonOptions,
) -> tuple[np.ndarray, list[int], list[float]]:
    ybus = build_admittance(case)
    metrics = np.full((len(samples), len(spec)), np.nan)
    failed: list[int] = []
    times: list[float] = []
    for i, row in enumerate(samples):
        t0 = time.perf_counter()
        sol = solve_power_flow(
            case, options, injections=params.apply(case, row), start=start, ybus=ybus
        )
        times.append(time.perf_counter() - t0)
        if sol.converged:
            metrics[i] = evaluate_metrics(sol, spec)
        else:
            failed.append(i)
    return metrics, failed, times


def _solve_batch_star(args):
    return _solve_batch(*args)


@dataclass(eq=False)
class McReport:
    """Metric statistics over converged sampled solves, plus runtimes."""

    case_name: str
    metric_buses: tuple[int, ...]
    parameter_labels: tuple[str, ...]
    n_samples: int
    n_failed: int
    seed: int
    ci_method: str
    metric_mean: np.ndarray
    metric_stdev: np.ndarray
    metric_ci_lb: np.ndarray
    metric_ci_ub: np.ndarray
    param_mean: np.ndarray
    param_stdev: np.ndarray
    param_ci_lb: np.ndarray
    param_ci_ub: np.ndarray
    total_runtime_s: float
    per_solve_mean_s: float
    per_solve_min_s: float
    workers: int = 1
    metric_samples: np.ndarray | None = field(default=None, repr=False)

    def samples_to_csv(self, path) -> None:
        """Per-sample metric values for external analysis (NaN = failed solve)."""
        if self.metric_samples is None:
            raise ValueError("run with keep_samples=True to retain per-sample metrics")
        header = "sample," + ",".join(f"bus{b}" for b in self.metric_buses)
        lines = [header]
        for i, row in enumerate(self.metric_samples):
            lines.append(f"{i}," + ",".join(repr(float(v)) for v in row))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def statistics_dict(self) -> dict:
        """The deterministic part of the report: identical for a fixed seed."""
        return {
            "n_samples": self.n_samples,
            "n_failed": self.n_failed,
            "seed": self.seed,
            "ci_method": self.ci_method,
            "metrics": {
                "buses": list(self.metric_buses),
                "mean": self.metric_mean.tolist(),
                "stdev": self.metric_stdev.tolist(),
                "ci_lb": self.metric_ci_lb.tolist(),
                "ci_ub": self.metric_ci_ub.tolist(),
            },
            "parameters": {
                "labels": list(self.parameter_labels),
                "mean": self.param_mean.tolist(),
                "stdev": self.param_stdev.tolist(),
                "ci_lb": self.param_ci_lb.tolist(),
                "ci_ub": self.param_ci_ub.tolist(),
            },
        }

    def to_dict(self) -> dict:
        return {
            "case": self.case_name,
            "statistics": self.statistics_dict(),
            "timing": {
                "total_runtime_s": self.total_runtime_s,
                "per_solve_mean_s": self.per_solve_mean_s,
                "per_solve_min_s": self.per_solve_min_s,
            },
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "McReport":
        stats = data["statistics"]
        return cls(
            case_name=data["case"],
            metric_buses=tuple(stats["metrics"]["buses"]),
            parameter_labels=tuple(stats["parameters"]["labels"]),
            n_samples=stats["n_samples"],
            n_failed=stats["n_failed"],
            seed=stats["seed"],
            ci_method=stats["ci_method"],
            metric_mean=np.array(stats["metrics"]["mean"]),
            metric_stdev=np.array(stats["metrics"]["stdev"]),
            metric_ci_lb=np.array(stats["metrics"]["ci_lb"]),
            metric_ci_ub=np.array(stats["metrics"]["ci_ub"]),
            param_mean=np.array(stats["parameters"]["mean"]),
            param_stdev=np.array(stats["parameters"]["stdev"]),
            param_ci_lb=np.array(stats["parameters"]["ci_lb"]),
            param_ci_ub=np.array(stats["parameters"]["ci_ub"]),
            total_runtime_s=data["timing"]["total_runtime_s"],
            per_solve_mean_s=data["timing"]["per_solve_mean_s"],
            per_solve_min_s=data["timing"]["per_solve_min_s"],
            workers=data.get("workers", 1),
        )


def run_monte_carlo(
    case: GridCase,
    params: StochasticParameterSet,
    spec: MetricSpec,
    n: int,
    seed: int,
    workers: int = 1,
    ci_method: str = CI_PERCENTILE,
    options: NewtonOptions | None = None,
    keep_samples: bool = False,
) -> McReport:
    """One deterministic solve per sample; statistics over converged solves.

    Statistics depend only on (seed, n, params, case): the worker count
    merely partitions the precomputed sample matrix.
    """
    if ci_method not in (CI_PERCENTILE, CI_MEAN):
        raise ValueError(f"unknown ci_method {ci_method!r}")
    t0 = time.perf_counter()
    opts = options or NewtonOptions()

    nominal = solve_power_flow(
        case, opts, injections=params.apply(case, params.means)
    )
    if not nominal.converged:
        raise AllSamplesFailed("nominal power flow did not converge")

    batch = sample_parameters(params, n, seed)
    if workers <= 1 or n < 2 * workers:
        metrics, failed, times = _solve_batch(case, params, spec, batch.values, nominal, opts)
    else:
        chunks = np.array_split(batch.values, workers)
        jobs = [(case, params, spec, chunk, nominal, opts) for chunk in chunks if len(chunk)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_solve_batch_star, jobs))
        metrics = np.concatenate([p[0] for p in parts]) if parts else np.empty((0, len(spec)))
        failed, times = [], []
        offset = 0
        for chunk_metrics, chunk_failed, chunk_times in parts:
            failed.extend(offset + i for i in chunk_failed)
            times.extend(chunk_times)
            offset += len(chunk_metrics)

    n_failed = len(failed)
    ok = np.ones(n, dtype=bool)
    ok[failed] = False
    good = metrics[ok]
    if n > 0 and len(good) == 0:
        raise AllSamplesFailed(f"all {n} sampled solves diverged")

    if len(good):
        mean = good.mean(axis=0)
        stdev = good.std(axis=0, ddof=1) if len(good) > 1 else np.zeros(len(spec))
        if ci_method == CI_PERCENTILE:
            ci_lb = np.percentile(good, 2.5, axis=0)
            ci_ub = np.percentile(good, 97.5, axis=0)
        else:
            half = _Z95 * stdev / np.sqrt(len(good))
            ci_lb, ci_ub = mean - half, mean + half
    else:
        mean = stdev = ci_lb = ci_ub = np.full(len(spec), np.nan)

    total = time.perf_counter() - t0
    return McReport(
        case_name=case.name,
        metric_buses=spec.buses,
        parameter_labels=params.labels(),
        n_samples=n,
        n_failed=n_failed,
        seed=seed,
        ci_method=ci_method,
        metric_mean=mean,
        metric_stdev=stdev,
        metric_ci_lb=ci_lb,
        metric_ci_ub=ci_ub,
        param_mean=params.means,
        param_stdev=params.stdevs,
        param_ci_lb=params.means - _Z95 * params.stdevs,
        param_ci_ub=params.means + _Z95 * params.stdevs,
        total_runtime_s=total,
        per_solve_mean_s=float(np.mean(times)) if times else 0.0,
        per_solve_min_s=float(np.min(times)) if times else 0.0,
        workers=workers,
        metric_samples=metrics if keep_samples else None,
    )


@dataclass(eq=False)
class ComparisonReport:
    """Mean absolute error between worst-case bounds and the sampled intervals."""

    mae_c_ub: float  # pu
    mae_c_lb: float
    mae_e_ub: float
    mae_e_lb: float
    speedup: float  # MC runtime / analysis runtime
    sigma_label: float | str  # sweep point used (best c-side fit)
    per_point: tuple[tuple[float | str, float, float], ...]  # (label, mae_c_ub, mae_c_lb)

    @property
    def mae_pct(self) -> dict[str, float]:
        return {
            "c_ub": 100.0 * self.mae_c_ub,
            "c_lb": 100.0 * self.mae_c_lb,
            "e_ub": 100.0 * self.mae_e_ub,
            "e_lb": 100.0 * self.mae_e_lb,
        }

    def to_dict(self) -> dict:
        return {
            "mae_pu": {
                "c_ub": self.mae_c_ub,
                "c_lb": self.mae_c_lb,
                "e_ub": self.mae_e_ub,
                "e_lb": self.mae_e_lb,
            },
            "mae_pct": self.mae_pct,
            "speedup": self.speedup,
            "sigma_label": self.sigma_label,
            "per_point": [
                {"sigma": label, "mae_c_ub": a, "mae_c_lb": b}
                for label, a, b in self.per_point
            ],
        }


def mae_compare(rmss: RmssReport, mc: McReport) -> ComparisonReport:
    """Mean absolute error per bound, plus the wall-clock speedup ratio.

    With a swept report the point whose metric bounds best fit the sampled
    interval is selected and reported; parameter bounds are the
    per-parameter envelope of the worst-case dispatches at that point.
    """
    if tuple(rmss.metric_buses) != tuple(mc.metric_buses):
        raise DimensionMismatch(
            f"metric buses differ: {rmss.metric_buses} vs {mc.metric_buses}"
        )
    if tuple(rmss.parameter_labels) != tuple(mc.parameter_labels):
        raise DimensionMismatch(
            f"parameter orderings differ: {rmss.parameter_labels} vs {mc.parameter_labels}"
        )
    if mc.n_samples > 0 and mc.n_failed / mc.n_samples > _MAX_FAILURE_RATE:
        raise ExcessiveFailureRate(
            f"{mc.n_failed}/{mc.n_samples} sampled solves failed; comparison unrepresentative"
        )

    per_point = []
    for point in rmss.points:
        c_ub = np.array([r.c_wc_ub for r in point.results])
        c_lb = np.array([r.c_wc_lb for r in point.results])
        per_point.append(
            (
                point.label,
                float(np.mean(np.abs(c_ub - mc.metric_ci_ub))),
                float(np.mean(np.abs(c_lb - mc.metric_ci_lb))),
            )
        )
    best = int(np.argmin([a + b for _, a, b in per_point]))
    label, mae_c_ub, mae_c_lb = per_point[best]

    env_ub, env_lb = rmss.points[best].parameter_envelope()
    if env_ub is None:
        mae_e_ub = mae_e_lb = float("nan")
    else:
        mae_e_ub = float(np.mean(np.abs(env_ub - mc.param_ci_ub)))
        mae_e_lb = float(np.mean(np.abs(env_lb - mc.param_ci_lb)))

    return ComparisonReport(
        mae_c_ub=mae_c_ub,
        mae_c_lb=mae_c_lb,
        mae_e_ub=mae_e_ub,
        mae_e_lb=mae_e_lb,
        speedup=mc.total_runtime_s / rmss.runtime_s,
        sigma_label=label,
        per_point=tuple(per_point),
    )
