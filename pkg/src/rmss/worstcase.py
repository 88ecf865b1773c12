"""Worst-case bound construction, dispatch recovery, and violation counting.

Given first-order sensitivities and a normal parameter model, the
worst-case value of each metric is an inverse-normal quantile excursion
around its nominal value, and the most probable dispatch achieving that
excursion has a closed form: the minimum-Mahalanobis-distance point on
the hyperplane of dispatches consistent with the excursion.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .exceptions import (
    DegenerateDirection,
    InvalidProbability,
    MissingLimits,
    NonConvergence,
)
from .model import GridCase
from .parameters import StochasticParameterSet
from .powerflow import (
    MetricSpec,
    NewtonOptions,
    build_admittance,
    default_metric_spec,
    evaluate_metrics,
    solve_power_flow,
)
from .sensitivity import hybrid_sensitivities

logger = logging.getLogger(__name__)

DEGENERATE_TOLERANCE = 1e-14

FRACTION = "fraction"  # sigma_c as a fraction of each metric's nominal value
ABSOLUTE = "pu"  # sigma_c as an absolute pu value shared by all metrics
PROPAGATED = "propagated"  # sigma_c from first-order propagation of the parameter covariance


def _quantile(rho: float) -> float:
    if not 0.0 < rho < 1.0:
        raise InvalidProbability(f"confidence level must be in (0, 1), got {rho}")
    return float(norm.ppf(rho))


def worst_case_metric(c_nom: float, sigma_c: float, rho: float, direction: str) -> float:
    """Quantile bound c_nom +/- z(rho) * sigma_c for direction "UB"/"LB"."""
    if sigma_c < 0:
        raise ValueError(f"sigma_c must be nonnegative, got {sigma_c}")
    if direction not in ("UB", "LB"):
        raise ValueError(f"direction must be 'UB' or 'LB', got {direction!r}")
    z = _quantile(rho)
    return c_nom + z * sigma_c if direction == "UB" else c_nom - z * sigma_c


def _deviation_vector(
    params: StochasticParameterSet, lam: np.ndarray, delta_c: float
) -> np.ndarray:
    """Parameter deviation of the most probable dispatch shifting the metric by delta_c."""
    lam = np.asarray(lam, dtype=float)
    sig_lam = params.sigma @ lam
    denom = float(lam @ sig_lam)
    if denom <= DEGENERATE_TOLERANCE:
        raise DegenerateDirection(
            f"metric insensitive to all varying parameters (lambda'Sigma lambda = {denom:.3e})"
        )
    return (delta_c / denom) * sig_lam


def worst_case_parameters(
    params: StochasticParameterSet,
    lam: np.ndarray,
    c_wc: float,
    c_nom: float,
) -> np.ndarray:
    """Closed-form most-probable dispatch on the hyperplane lam . (E - eta) = c_wc - c_nom."""
    return params.means + _deviation_vector(params, lam, c_wc - c_nom)


@dataclass(frozen=True, eq=False)
class SweepGrid:
    """Metric standard deviations to sweep when the true value is unknown."""

    values: tuple[float, ...]
    unit: str = FRACTION

    def __post_init__(self):
        if self.unit not in (FRACTION, ABSOLUTE):
            raise ValueError(f"unknown sweep unit {self.unit!r}")
        vals = tuple(float(v) for v in self.values)
        if not vals or any(v <= 0 for v in vals):
            raise ValueError("sweep values must be positive")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("sweep values must be strictly increasing")
        object.__setattr__(self, "values", vals)

    @classmethod
    def default(cls) -> "SweepGrid":
        # 20 log-spaced points between 0.1% and 5% of each nominal metric.
        return cls(tuple(np.geomspace(0.001, 0.05, 20)), FRACTION)


@dataclass(eq=False)
class WorstCaseResult:
    """Bounds and worst-case dispatch for one metric at one sigma_c."""

    bus: int
    metric_index: int
    sigma_label: float | str
    sigma_c: float  # absolute pu
    rho: float
    c_nom: float
    c_wc_ub: float
    c_wc_lb: float
    e_wc_ub: np.ndarray | None
    e_wc_lb: np.ndarray | None
    # single construction vector: e_wc_ub = means + dev, e_wc_lb = means - dev
    e_wc_deviation: np.ndarray | None
    e_wc_within_ci: tuple[bool, ...] | None
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "bus": self.bus,
            "sigma_c": self.sigma_c,
            "c_nom": self.c_nom,
            "c_wc_ub": self.c_wc_ub,
            "c_wc_lb": self.c_wc_lb,
            "e_wc_ub": None if self.e_wc_ub is None else self.e_wc_ub.tolist(),
            "e_wc_lb": None if self.e_wc_lb is None else self.e_wc_lb.tolist(),
            "e_wc_deviation": None
            if self.e_wc_deviation is None
            else self.e_wc_deviation.tolist(),
            "e_wc_within_ci": None
            if self.e_wc_within_ci is None
            else list(self.e_wc_within_ci),
            "degenerate": self.degenerate,
        }


@dataclass(eq=False)
class SweepPoint:
    label: float | str  # swept value in `unit` terms, or "propagated"
    sigma_abs: np.ndarray  # per-metric absolute sigma_c, pu
    results: tuple[WorstCaseResult, ...]

    def parameter_envelope(self) -> tuple[np.ndarray | None, np.ndarray | None]:
        """Per-parameter extremes across the per-metric worst-case dispatches."""
        ubs = [r.e_wc_ub for r in self.results if r.e_wc_ub is not None]
        lbs = [r.e_wc_lb for r in self.results if r.e_wc_lb is not None]
        if not ubs:
            return None, None
        return np.max(ubs, axis=0), np.min(lbs, axis=0)

    def to_dict(self) -> dict:
        env_ub, env_lb = self.parameter_envelope()
        return {
            "label": self.label,
            "sigma_abs": self.sigma_abs.tolist(),
            "results": [r.to_dict() for r in self.results],
            "parameter_envelope_ub": None if env_ub is None else env_ub.tolist(),
            "parameter_envelope_lb": None if env_lb is None else env_lb.tolist(),
        }


@dataclass(frozen=True)
class ViolationRecord:
    sigma_label: float | str
    bus: int
    side: str  # "UB" | "LB"
    value: float
    limit: float
    margin: float  # overshoot beyond the limit, pu

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma_label,
            "bus": self.bus,
            "side": self.side,
            "value": self.value,
            "limit": self.limit,
            "margin": self.margin,
        }


@dataclass(eq=False)
class PointViolations:
    sigma_label: float | str
    ub_total: int
    lb_total: int
    per_bus: dict[int, int]
    worst_violator: int | None
    records: tuple[ViolationRecord, ...]

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma_label,
            "ub_total": self.ub_total,
            "lb_total": self.lb_total,
            "per_bus": {str(k): v for k, v in sorted(self.per_bus.items())},
            "worst_violator": self.worst_violator,
            "records": [r.to_dict() for r in self.records],
        }


@dataclass(eq=False)
class ViolationReport:
    points: tuple[PointViolations, ...]
    per_bus_total: dict[int, int]
    worst_violator: int | None  # max tally across the sweep, ties to lowest bus id

    def to_dict(self) -> dict:
        return {
            "points": [p.to_dict() for p in self.points],
            "per_bus_total": {str(k): v for k, v in sorted(self.per_bus_total.items())},
            "worst_violator": self.worst_violator,
        }


def _worst_bus(tallies: dict[int, int]) -> int | None:
    nonzero = {b: t for b, t in tallies.items() if t > 0}
    if not nonzero:
        return None
    best = max(nonzero.values())
    return min(b for b, t in nonzero.items() if t == best)


def count_violations(
    bounds: Sequence[WorstCaseResult],
    case: GridCase,
    limits: dict[int, tuple[float, float]] | None = None,
) -> ViolationReport:
    """Tally bound excursions beyond per-bus voltage limits.

    ``limits`` maps bus id to (v_min, v_max); when omitted the case's own
    bus limits apply. Results are grouped by their sigma label in first-seen
    order (run reports are already sorted by sigma then metric).
    """
    if limits is None:
        limits = {}
        for b in case.buses:
            if b.v_min is None or b.v_max is None:
                continue
            limits[b.id] = (b.v_min, b.v_max)

    grouped: dict[float | str, list[WorstCaseResult]] = {}
    for r in bounds:
        grouped.setdefault(r.sigma_label, []).append(r)

    points: list[PointViolations] = []
    total_tally: dict[int, int] = {}
    for label, results in grouped.items():
        records: list[ViolationRecord] = []
        tally: dict[int, int] = {}
        ub_total = lb_total = 0
        for r in results:
            if r.bus not in limits:
                raise MissingLimits(f"bus {r.bus} has no voltage limits")
            v_min, v_max = limits[r.bus]
            if r.c_wc_ub > v_max:
                ub_total += 1
                tally[r.bus] = tally.get(r.bus, 0) + 1
                records.append(
                    ViolationRecord(label, r.bus, "UB", r.c_wc_ub, v_max, r.c_wc_ub - v_max)
                )
            if r.c_wc_lb < v_min:
                lb_total += 1
                tally[r.bus] = tally.get(r.bus, 0) + 1
                records.append(
                    ViolationRecord(label, r.bus, "LB", r.c_wc_lb, v_min, v_min - r.c_wc_lb)
                )
        points.append(
            PointViolations(
                sigma_label=label,
                ub_total=ub_total,
                lb_total=lb_total,
                per_bus=tally,
                worst_violator=_worst_bus(tally),
                records=tuple(records),
            )
        )
        for b, t in tally.items():
            total_tally[b] = total_tally.get(b, 0) + t

    return ViolationReport(
        points=tuple(points),
        per_bus_total=total_tally,
        worst_violator=_worst_bus(total_tally),
    )


@dataclass(eq=False)
class RmssReport:
    """Everything the risk-managed analysis produced for one case."""

    case_name: str
    rho: float
    metric_buses: tuple[int, ...]
    parameter_labels: tuple[str, ...]
    parameter_means: np.ndarray
    parameter_stdevs: np.ndarray
    c_nom: np.ndarray
    sigma_mode: str  # "known" | "sweep" | "propagated"
    sigma_unit: str
    points: tuple[SweepPoint, ...]
    violations: ViolationReport
    sensitivity_methods: tuple[str, ...]
    runtime_s: float

    def to_dict(self) -> dict:
        return {
            "case": self.case_name,
            "rho": self.rho,
            "metric_buses": list(self.metric_buses),
            "parameters": {
                "labels": list(self.parameter_labels),
                "means": self.parameter_means.tolist(),
                "stdevs": self.parameter_stdevs.tolist(),
            },
            "c_nom": self.c_nom.tolist(),
            "sigma_mode": self.sigma_mode,
            "sigma_unit": self.sigma_unit,
            "points": [p.to_dict() for p in self.points],
            "violations": self.violations.to_dict(),
            "sensitivity_methods": list(self.sensitivity_methods),
            "runtime_s": self.runtime_s,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RmssReport":
        points = []
        for p in data["points"]:
            results = []
            for i, r in enumerate(p["results"]):
                results.append(
                    WorstCaseResult(
                        bus=r["bus"],
                        metric_index=i,
                        sigma_label=p["label"],
                        sigma_c=r["sigma_c"],
                        rho=data["rho"],
                        c_nom=r["c_nom"],
                        c_wc_ub=r["c_wc_ub"],
                        c_wc_lb=r["c_wc_lb"],
                        e_wc_ub=None if r["e_wc_ub"] is None else np.array(r["e_wc_ub"]),
                        e_wc_lb=None if r["e_wc_lb"] is None else np.array(r["e_wc_lb"]),
                        e_wc_deviation=None
                        if r["e_wc_deviation"] is None
                        else np.array(r["e_wc_deviation"]),
                        e_wc_within_ci=None
                        if r["e_wc_within_ci"] is None
                        else tuple(r["e_wc_within_ci"]),
                        degenerate=r["degenerate"],
                    )
                )
            points.append(
                SweepPoint(
                    label=p["label"],
                    sigma_abs=np.array(p["sigma_abs"]),
                    results=tuple(results),
                )
            )
        violations = ViolationReport(
            points=tuple(
                PointViolations(
                    sigma_label=v["sigma"],
                    ub_total=v["ub_total"],
                    lb_total=v["lb_total"],
                    per_bus={int(k): t for k, t in v["per_bus"].items()},
                    worst_violator=v["worst_violator"],
                    records=tuple(
                        ViolationRecord(
                            sigma_label=r["sigma"],
                            bus=r["bus"],
                            side=r["side"],
                            value=r["value"],
                            limit=r["limit"],
                            margin=r["margin"],
                        )
                        for r in v["records"]
                    ),
                )
                for v in data["violations"]["points"]
            ),
            per_bus_total={
                int(k): t for k, t in data["violations"]["per_bus_total"].items()
            },
            worst_violator=data["violations"]["worst_violator"],
        )
        return cls(
            case_name=data["case"],
            rho=data["rho"],
            metric_buses=tuple(data["metric_buses"]),
            parameter_labels=tuple(data["parameters"]["labels"]),
            parameter_means=np.array(data["parameters"]["means"]),
            parameter_stdevs=np.array(data["parameters"]["stdevs"]),
            c_nom=np.array(data["c_nom"]),
            sigma_mode=data["sigma_mode"],
            sigma_unit=data["sigma_unit"],
            points=tuple(points),
            violations=violations,
            sensitivity_methods=tuple(data["sensitivity_methods"]),
            runtime_s=data["runtime_s"],
        )


def _resolve_sigma_points(
    sigma_c, c_nom: np.ndarray, propagated_abs: np.ndarray
) -> tuple[str, str, list[tuple[float | str, np.ndarray]]]:
    """Map the sigma_c argument onto (mode, unit, [(label, per-metric abs sigma)])."""
    if sigma_c is None:
        sigma_c = SweepGrid.default()
    if isinstance(sigma_c, str):
        if sigma_c != PROPAGATED:
            raise ValueError(f"unknown sigma_c mode {sigma_c!r}")
        return PROPAGATED, ABSOLUTE, [(PROPAGATED, propagated_abs)]
    if isinstance(sigma_c, SweepGrid):
        mode = "sweep" if len(sigma_c.values) > 1 else "known"
        points = []
        for v in sigma_c.values:
            abs_sigma = v * c_nom if sigma_c.unit == FRACTION else np.full_like(c_nom, v)
            points.append((v, abs_sigma))
        return mode, sigma_c.unit, points
    value = float(sigma_c)
    if value < 0:
        raise ValueError(f"sigma_c must be nonnegative, got {value}")
    return "known", ABSOLUTE, [(value, np.full_like(c_nom, value))]


def run_rmss(
    case: GridCase,
    params: StochasticParameterSet,
    spec: MetricSpec | None = None,
    rho: float = 0.975,
    sigma_c: SweepGrid | float | str | None = None,
    limits: dict[int, tuple[float, float]] | float | str = "case",
    nonlinearity_threshold: float = 0.02,
    seed: int = 0,
    options: NewtonOptions | None = None,
) -> RmssReport:
    """Full risk-managed analysis: nominal solve, sensitivities, bounds, violations.

    ``sigma_c`` may be a known absolute value, a :class:`SweepGrid`,
    ``"propagated"`` to take each metric's first-order standard deviation
    from the parameter covariance, or None for the default sweep.
    ``limits`` is ``"case"`` for the per-bus limits carried by the case, a
    float band fraction applied around each nominal metric value, or an
    explicit ``{bus: (v_min, v_max)}`` map.
    """
    t0 = time.perf_counter()
    z = _quantile(rho)

    ybus = build_admittance(case)
    sol = solve_power_flow(
        case, options, injections=params.apply(case, params.means), ybus=ybus
    )
    if not sol.converged:
        raise NonConvergence(
            "nominal power flow did not converge "
            f"(mismatch history: {[f'{m:.3e}' for m in sol.mismatch_history]})",
            solution=sol,
        )
    spec = spec if spec is not None else default_metric_spec(case)
    c_nom = evaluate_metrics(sol, spec)

    sens = hybrid_sensitivities(
        case, sol, params, spec, nonlinearity_threshold, seed=seed, ybus=ybus
    )
    sig_lam = sens.values @ params.sigma  # (m, d)
    quad = np.einsum("md,md->m", sens.values, sig_lam)  # lambda' Sigma lambda per metric
    propagated_abs = np.sqrt(np.clip(quad, 0.0, None))

    mode, unit, sigma_points = _resolve_sigma_points(sigma_c, c_nom, propagated_abs)

    means = params.means
    ci_half = z * params.stdevs
    points: list[SweepPoint] = []
    degenerate_logged: set[int] = set()
    for label, sigma_abs in sigma_points:
        results = []
        for i in range(len(spec)):
            t = z * sigma_abs[i]
            c_ub, c_lb = c_nom[i] + t, c_nom[i] - t
            if quad[i] <= DEGENERATE_TOLERANCE:
                if i not in degenerate_logged:
                    logger.warning(
                        "metric bus %s: direction degenerate, dispatch skipped",
                        spec.buses[i],
                    )
                    degenerate_logged.add(i)
                delta = e_ub = e_lb = None
                within = None
                degenerate = True
            else:
                delta = (t / quad[i]) * sig_lam[i]
                e_ub = means + delta
                e_lb = means - delta
                within = tuple(bool(w) for w in np.abs(delta) <= ci_half * (1 + 1e-12))
                degenerate = False
            results.append(
                WorstCaseResult(
                    bus=spec.buses[i],
                    metric_index=i,
                    sigma_label=label,
                    sigma_c=float(sigma_abs[i]),
                    rho=rho,
                    c_nom=float(c_nom[i]),
                    c_wc_ub=float(c_ub),
                    c_wc_lb=float(c_lb),
                    e_wc_ub=e_ub,
                    e_wc_lb=e_lb,
                    e_wc_deviation=delta,
                    e_wc_within_ci=within,
                    degenerate=degenerate,
                )
            )
        points.append(SweepPoint(label=label, sigma_abs=sigma_abs, results=tuple(results)))

    if limits == "case":
        limit_map = None
    elif isinstance(limits, dict):
        limit_map = limits
    else:
        band = float(limits)
        limit_map = {
            spec.buses[i]: (c_nom[i] * (1 - band), c_nom[i] * (1 + band))
            for i in range(len(spec))
        }
    all_results = [r for p in points for r in p.results]
    violations = count_violations(all_results, case, limits=limit_map)

    return RmssReport(
        case_name=case.name,
        rho=rho,
        metric_buses=spec.buses,
        parameter_labels=params.labels(),
        parameter_means=means,
        parameter_stdevs=params.stdevs,
        c_nom=c_nom,
        sigma_mode=mode,
        sigma_unit=unit,
        points=tuple(points),
        violations=violations,
        sensitivity_methods=sens.methods,
        runtime_s=time.perf_counter() - t0,
    )
