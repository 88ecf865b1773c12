"""Command-line front end for the risk-managed steady-state pipeline.

Exit codes: 0 success, 2 solver failure, 3 configuration error. All
report files are JSON/CSV written atomically, and every run leaves a
manifest echoing the resolved configuration, versions, and seed.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import cases
from .exceptions import (
    AllSamplesFailed,
    ConfigError,
    DegenerateDirection,
    DimensionMismatch,
    EmptySelection,
    ExcessiveFailureRate,
    InvalidProbability,
    JacobianSingular,
    MissingLimits,
    ModelEvaluationError,
    NonConvergence,
    NotConverged,
    NotPSD,
    ParseError,
    SchemaError,
    TopologyError,
    ZeroStep,
)
from .matpower import parse_case
from .model import GridCase, tag_essential, validate_case
from .montecarlo import CI_MEAN, CI_PERCENTILE, McReport, mae_compare, run_monte_carlo
from .parameters import Axis, StochasticParameterSet
from .powerflow import MetricSpec, default_metric_spec, solve_power_flow
from .reportio import (
    write_json,
    write_manifest,
    write_violations_csv,
    write_worst_violator_csv,
)
from .sensitivity import hybrid_sensitivities
from .worstcase import ABSOLUTE, FRACTION, PROPAGATED, RmssReport, SweepGrid, run_rmss

EXIT_SOLVER = 2
EXIT_CONFIG = 3

_SOLVER_ERRORS = (
    NonConvergence,
    JacobianSingular,
    AllSamplesFailed,
    NotConverged,
    ExcessiveFailureRate,
    ModelEvaluationError,
    DegenerateDirection,
)
_CONFIG_ERRORS = (
    ConfigError,
    ParseError,
    SchemaError,
    TopologyError,
    EmptySelection,
    NotPSD,
    InvalidProbability,
    ZeroStep,
    MissingLimits,
    DimensionMismatch,
    ValueError,
    OSError,
)


@dataclass
class RunConfig:
    """Resolved inputs of one CLI invocation, echoed into the manifest."""

    case: str
    essential: str | None = None
    axes: str = "p"
    sigma_p: str = "2%"
    correlation: str | None = None
    metrics: str = "all"
    rho: float = 0.975
    sigma_c: str | None = None
    sweep: str | None = None
    limits: str = "case"
    samples: int | None = None
    ci: str = CI_PERCENTILE
    seed: int = 0
    workers: int = 1
    out: str = "."


def _guarded(body):
    try:
        body()
    except _SOLVER_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    except _CONFIG_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


def _resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    return int(os.environ.get("RMSS_SEED", "0"))


def _resolve_case_path(case: str) -> Path:
    p = Path(case)
    if p.is_file():
        return p
    try:
        return cases.case_path(case)
    except FileNotFoundError:
        raise ConfigError(f"case file not found: {case}")


def _load_case(case: str, essential: str | None) -> GridCase:
    grid = parse_case(_resolve_case_path(case))
    if essential:
        selector = essential if "," not in essential else [s.strip() for s in essential.split(",")]
        grid = tag_essential(grid, selector)
    report = validate_case(grid)
    errors = [e for e in report.entries if e.severity == "error"]
    if errors:
        raise ConfigError("case failed validation:\n" + "\n".join(
            f"  {e.component}: {e.message}" for e in errors))
    for e in report.entries:
        if e.severity != "error":
            click.echo(f"warning: {e.component}: {e.message}", err=True)
    return grid


def _parse_percent(text: str) -> tuple[float, bool]:
    """Value plus whether it carried a % suffix (fraction-of-nominal units)."""
    t = text.strip()
    if t.endswith("%"):
        return float(t[:-1]) / 100.0, True
    return float(t), False


def _build_params(case: GridCase, sigma_p: str, axes: str, correlation: str | None):
    value, is_frac = _parse_percent(sigma_p)
    if value < 0:
        raise ConfigError(f"--sigma-p must be nonnegative, got {sigma_p}")
    axis_map = {"p": (Axis.P,), "q": (Axis.Q,), "pq": (Axis.P, Axis.Q)}
    corr = np.loadtxt(correlation, delimiter=",", ndmin=2) if correlation else None
    return StochasticParameterSet.from_case(
        case,
        sigma_frac=value if is_frac else None,
        sigma_abs=None if is_frac else value,
        axes=axis_map[axes],
        correlation=corr,
    )


def _build_metric_spec(case: GridCase, metrics: str) -> MetricSpec:
    if metrics == "all":
        spec = default_metric_spec(case)
        if len(spec) == 0:
            raise ConfigError("case has no nonzero-injection PQ bus to monitor")
        return spec
    return MetricSpec.voltages_at(int(b) for b in metrics.split(","))


def _parse_sweep_spec(spec: str) -> SweepGrid:
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(f"sweep spec must be lo:hi:count, got {spec!r}")
    lo, lo_frac = _parse_percent(parts[0])
    hi, hi_frac = _parse_percent(parts[1])
    if lo_frac != hi_frac:
        raise ConfigError("sweep endpoints must use the same units (both % or both pu)")
    try:
        count = int(parts[2])
    except ValueError:
        raise ConfigError(f"bad sweep count {parts[2]!r}")
    if count < 1 or lo <= 0 or hi <= lo and count > 1:
        raise ConfigError(f"bad sweep spec {spec!r}")
    values = np.geomspace(lo, hi, count) if count > 1 else np.array([lo])
    return SweepGrid(tuple(values), FRACTION if lo_frac else ABSOLUTE)


def _resolve_sigma_c(sigma_c: str | None, sweep: str | None):
    if sigma_c and sweep:
        raise ConfigError("--sigma-c and --sweep are mutually exclusive")
    if sigma_c:
        if sigma_c in ("auto", PROPAGATED):
            return PROPAGATED
        value, is_frac = _parse_percent(sigma_c)
        return SweepGrid((value,), FRACTION) if is_frac else value
    if sweep:
        return _parse_sweep_spec(sweep)
    return None  # default sweep


def _resolve_limits(limits: str):
    if limits == "case":
        return "case"
    if limits.startswith("band:"):
        value, _ = _parse_percent(limits[len("band:"):])
        if value <= 0:
            raise ConfigError(f"band must be positive, got {limits!r}")
        return value
    raise ConfigError(f"--limits must be 'case' or 'band:<pct>', got {limits!r}")


@click.group()
def main():
    """Risk-managed steady-state analysis of power grids."""


@main.command("run")
@click.option("--case", required=True, help="Case file path or bundled case name.")
@click.option("--essential", required=True,
              help="all-solar | all-wind | all-renewable | all | comma-separated ids.")
@click.option("--axes", default="p", type=click.Choice(["p", "q", "pq"]), show_default=True)
@click.option("--sigma-p", default="2%", show_default=True,
              help="Parameter stdev: % of each mean, or absolute pu.")
@click.option("--correlation", default=None, help="CSV file with a parameter correlation matrix.")
@click.option("--metrics", default="all", show_default=True,
              help="'all' nonzero-injection PQ buses, or comma-separated bus ids.")
@click.option("--rho", default=0.975, show_default=True, help="One-sided confidence level.")
@click.option("--sigma-c", default=None,
              help="Known metric stdev (% of nominal or pu), or 'auto' to propagate.")
@click.option("--sweep", default=None, help="Metric-stdev sweep lo:hi:count (log spacing).")
@click.option("--limits", default="case", show_default=True,
              help="'case' per-bus limits or band:<pct> around nominal voltages.")
@click.option("--seed", default=None, type=int, help="Falls back to RMSS_SEED, then 0.")
@click.option("--out", default=".", show_default=True)
def cmd_rmss(case, essential, axes, sigma_p, correlation, metrics, rho, sigma_c, sweep,
             limits, seed, out):
    """Run the full risk-managed analysis and write its report files."""

    def body():
        config = RunConfig(case=case, essential=essential, axes=axes, sigma_p=sigma_p,
                           correlation=correlation, metrics=metrics, rho=rho,
                           sigma_c=sigma_c, sweep=sweep, limits=limits,
                           seed=_resolve_seed(seed), out=out)
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        grid = _load_case(case, essential)
        params = _build_params(grid, sigma_p, axes, correlation)
        spec = _build_metric_spec(grid, metrics)
        report = run_rmss(
            grid,
            params,
            spec,
            rho=rho,
            sigma_c=_resolve_sigma_c(sigma_c, sweep),
            limits=_resolve_limits(limits),
            seed=config.seed,
        )
        write_json(out_dir / "rmss_report.json", report.to_dict())
        write_violations_csv(out_dir / "violations.csv", report)
        write_worst_violator_csv(out_dir / "worst_violator.csv", report)
        write_manifest(out_dir / "run_manifest.json", "run",
                       dataclasses.asdict(config), config.seed)
        total = sum(p.ub_total + p.lb_total for p in report.violations.points)
        click.echo(
            f"{len(report.metric_buses)} metrics x {len(report.points)} sigma point(s), "
            f"{total} violation(s), worst violator: {report.violations.worst_violator}, "
            f"runtime {report.runtime_s:.3f}s"
        )
        click.echo(f"reports written to {out_dir}")

    _guarded(body)


@main.command("mc")
@click.option("--case", required=True)
@click.option("--essential", required=True)
@click.option("--axes", default="p", type=click.Choice(["p", "q", "pq"]), show_default=True)
@click.option("--sigma-p", default="2%", show_default=True)
@click.option("--correlation", default=None)
@click.option("--metrics", default="all", show_default=True)
@click.option("--samples", required=True, type=int)
@click.option("--ci", default=CI_PERCENTILE, type=click.Choice([CI_PERCENTILE, CI_MEAN]),
              show_default=True, help="Interval kind: distribution percentiles or CI of the mean.")
@click.option("--seed", default=None, type=int)
@click.option("--workers", default=1, show_default=True)
@click.option("--sample-csv", default=None,
              help="Also dump every sample's metric values to this CSV.")
@click.option("--out", default=".", show_default=True)
def cmd_mc(case, essential, axes, sigma_p, correlation, metrics, samples, ci, seed, workers,
           sample_csv, out):
    """Monte Carlo reference run; records wall-clock timing for speedups."""

    def body():
        if samples <= 0:
            raise ConfigError(f"--samples must be positive, got {samples}")
        config = RunConfig(case=case, essential=essential, axes=axes, sigma_p=sigma_p,
                           correlation=correlation, metrics=metrics, samples=samples,
                           ci=ci, seed=_resolve_seed(seed), workers=workers, out=out)
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        grid = _load_case(case, essential)
        params = _build_params(grid, sigma_p, axes, correlation)
        spec = _build_metric_spec(grid, metrics)
        report = run_monte_carlo(
            grid, params, spec, n=samples, seed=config.seed, workers=workers,
            ci_method=ci, keep_samples=sample_csv is not None,
        )
        if sample_csv is not None:
            report.samples_to_csv(sample_csv)
        write_json(out_dir / "mc_report.json", report.to_dict())
        write_manifest(out_dir / "mc_manifest.json", "mc",
                       dataclasses.asdict(config), config.seed)
        click.echo(
            f"{report.n_samples} samples ({report.n_failed} failed) in "
            f"{report.total_runtime_s:.2f}s ({report.per_solve_mean_s * 1e3:.2f} ms/solve)"
        )
        click.echo(f"report written to {out_dir / 'mc_report.json'}")

    _guarded(body)


@main.command("compare")
@click.argument("rmss_report", type=click.Path())
@click.argument("mc_report", type=click.Path())
@click.option("--out", default=".", show_default=True)
def cmd_compare(rmss_report, mc_report, out):
    """Mean-absolute-error table and speedup between the two report files."""

    def body():
        rmss_path, mc_path = Path(rmss_report), Path(mc_report)
        for p in (rmss_path, mc_path):
            if not p.is_file():
                raise ConfigError(f"report file not found: {p}")
        rmss = RmssReport.from_dict(json.loads(rmss_path.read_text()))
        mc = McReport.from_dict(json.loads(mc_path.read_text()))
        comp = mae_compare(rmss, mc)
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(out_dir / "comparison.json", comp.to_dict())
        pct = comp.mae_pct
        click.echo("MAE (%):")
        click.echo(f"  c_ub  {pct['c_ub']:.4f}")
        click.echo(f"  c_lb  {pct['c_lb']:.4f}")
        click.echo(f"  e_ub  {pct['e_ub']:.4f}")
        click.echo(f"  e_lb  {pct['e_lb']:.4f}")
        click.echo(f"speedup: {comp.speedup:.1f}x (sigma point: {comp.sigma_label})")

    _guarded(body)


@main.command("sensitivity")
@click.option("--case", required=True)
@click.option("--essential", required=True)
@click.option("--axes", default="p", type=click.Choice(["p", "q", "pq"]), show_default=True)
@click.option("--sigma-p", default="2%", show_default=True)
@click.option("--correlation", default=None)
@click.option("--metrics", default="all", show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--out", default="lambda.csv", show_default=True)
def cmd_sensitivity(case, essential, axes, sigma_p, correlation, metrics, seed, out):
    """Dump the metric/parameter sensitivity matrix as CSV."""

    def body():
        grid = _load_case(case, essential)
        params = _build_params(grid, sigma_p, axes, correlation)
        spec = _build_metric_spec(grid, metrics)
        sol = solve_power_flow(grid, injections=params.apply(grid, params.means))
        if not sol.converged:
            raise NonConvergence(
                f"power flow did not converge (history: {list(sol.mismatch_history)})",
                solution=sol,
            )
        sens = hybrid_sensitivities(grid, sol, params, spec, seed=_resolve_seed(seed))
        sens.to_csv(out)
        click.echo(f"{len(sens.metric_buses)}x{len(sens.parameter_labels)} matrix "
                   f"written to {out}")

    _guarded(body)


@main.command("validate")
@click.option("--case", required=True)
def cmd_validate(case):
    """Check a case file against the model invariants (report only)."""

    def body():
        grid = parse_case(_resolve_case_path(case))
        report = validate_case(grid)
        click.echo(str(report))

    _guarded(body)


if __name__ == "__main__":
    main()
