"""First-order metric sensitivities w.r.t. essential component injections.

Primary path is adjoint analysis at the converged operating point: the
network Jacobian is factorized once and each metric costs a single
transposed-system solve, so the parameter count never enters the linear
algebra. Central finite differences serve as the independent cross-check
and as the nonlinearity detector for the statistical fallback.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    ModelEvaluationError,
    NonConvergence,
    NotConverged,
    TopologyError,
    UnknownBus,
    ZeroStep,
)
from .model import BusKind, GridCase
from .parameters import Axis, StochasticParameterSet
from .powerflow import (
    AdmittanceMatrix,
    CurrentInjectionSystem,
    MetricSpec,
    NewtonOptions,
    PowerFlowSolution,
    build_admittance,
    evaluate_metrics,
    solve_power_flow,
)
from .sobol import sobol_rescaled_slopes

logger = logging.getLogger(__name__)

METHOD_ADJOINT = "adjoint"
METHOD_FD = "finite-difference"
METHOD_SOBOL = "sobol-rescaled"

_FD_TOLERANCE = 1e-12  # perturbed solves need slack below the FD step


@dataclass(eq=False)
class SensitivityMatrix:
    """d(metric)/d(parameter) rows per metric, with a method tag per row."""

    values: np.ndarray  # (n_metrics, d) pu/pu
    metric_buses: tuple[int, ...]
    parameter_labels: tuple[str, ...]
    methods: tuple[str, ...]
    adjoint_solves: int = 0

    def to_csv(self, path) -> None:
        header = "metric_bus,method," + ",".join(self.parameter_labels)
        lines = [header]
        for i, bus in enumerate(self.metric_buses):
            row = ",".join(repr(float(v)) for v in self.values[i])
            lines.append(f"{bus},{self.methods[i]},{row}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _require_pq_parameters(case: GridCase, params: StochasticParameterSet) -> None:
    kind_of = {b.id: b.kind for b in case.buses}
    for entry in params.entries:
        bus = case.component(entry.component).bus
        if kind_of[bus] is not BusKind.PQ:
            raise TopologyError(
                f"parameter {entry.component}.{entry.axis.value} sits on non-PQ bus {bus}"
            )


def adjoint_sensitivities(
    case: GridCase,
    sol: PowerFlowSolution,
    params: StochasticParameterSet,
    spec: MetricSpec,
    ybus: AdmittanceMatrix | None = None,
) -> SensitivityMatrix:
    """Gradient of every metric via one transposed solve per metric.

    The residual at the solution is differentiated in-place: injection
    parameters enter only the excitation side of the network equations, so
    each gradient entry is an inner product of the adjoint vector with the
    two local current-derivative terms of the host bus.
    """
    if not sol.converged:
        raise NotConverged("adjoint analysis requires a converged solution")
    _require_pq_parameters(case, params)

    system = CurrentInjectionSystem(
        case, ybus=ybus, injections=params.apply(case, params.means)
    )
    x = system.initial_state(sol)
    lu = system.factorize(x)

    pos = {bus_id: i for i, bus_id in enumerate(sol.bus_ids)}
    e, f = sol.v.real, sol.v.imag
    d = e * e + f * f
    buses = params.bus_map(case)
    axes = np.array([entry.axis is Axis.P for entry in params.entries])

    # dF/dparam columns: only the host bus current rows are nonzero.
    dfr = np.where(axes, e[buses], f[buses]) / d[buses]
    dfi = np.where(axes, f[buses], -e[buses]) / d[buses]

    values = np.zeros((len(spec), len(params)))
    solves = 0
    for i, metric in enumerate(spec.entries):
        if metric.bus not in pos:
            raise UnknownBus(f"metric references unknown bus {metric.bus}")
        k = pos[metric.bus]
        mag = np.hypot(e[k], f[k])
        if mag <= 1e-9:
            warnings.warn(
                f"metric bus {metric.bus} voltage near origin; gradient set to zero",
                stacklevel=2,
            )
            continue
        g = np.zeros(system.dim)
        g[2 * k] = e[k] / mag
        g[2 * k + 1] = f[k] / mag
        lam = lu.solve(g, trans="T")
        solves += 1
        values[i] = -(lam[2 * buses] * dfr + lam[2 * buses + 1] * dfi)

    return SensitivityMatrix(
        values=values,
        metric_buses=spec.buses,
        parameter_labels=params.labels(),
        methods=(METHOD_ADJOINT,) * len(spec),
        adjoint_solves=solves,
    )


def finite_difference_sensitivities(
    case: GridCase,
    sol: PowerFlowSolution,
    params: StochasticParameterSet,
    spec: MetricSpec,
    step: float = 1e-6,
    ybus: AdmittanceMatrix | None = None,
    columns: np.ndarray | None = None,
) -> SensitivityMatrix:
    """Central-difference estimate, two warm-started solves per parameter.

    ``columns`` restricts the differencing to a subset of parameters
    (others stay zero); used by the hybrid probe.
    """
    if step <= 0:
        raise ZeroStep(f"finite-difference step must be positive, got {step}")
    if not sol.converged:
        raise NotConverged("finite differences require a converged base solution")
    ybus = ybus if ybus is not None else build_admittance(case)
    opts = NewtonOptions(tolerance=_FD_TOLERANCE, max_iter=60)

    cols = np.arange(len(params)) if columns is None else np.asarray(columns)
    values = np.zeros((len(spec), len(params)))
    for j in cols:
        shifted = {}
        for sign in (+1.0, -1.0):
            vals = params.means
            vals[j] += sign * step
            pert = solve_power_flow(
                case, opts, injections=params.apply(case, vals), start=sol, ybus=ybus
            )
            if not pert.converged:
                raise NonConvergence(
                    f"perturbed solve diverged at {params.labels()[j]} "
                    f"{'+' if sign > 0 else '-'}{step}",
                    solution=pert,
                )
            shifted[sign] = evaluate_metrics(pert, spec)
        values[:, j] = (shifted[+1.0] - shifted[-1.0]) / (2.0 * step)

    return SensitivityMatrix(
        values=values,
        metric_buses=spec.buses,
        parameter_labels=params.labels(),
        methods=(METHOD_FD,) * len(spec),
        adjoint_solves=0,
    )


def _probe_columns(d: int, limit: int = 4) -> np.ndarray:
    if d <= max(limit, 6):
        return np.arange(d)
    return np.unique(np.linspace(0, d - 1, limit).round().astype(int))


def _powerflow_evaluator(case, params, spec, base_sol, ybus):
    """Batched parameter-matrix -> metric-matrix evaluator for Sobol runs."""

    opts = NewtonOptions()

    def evaluate(x: np.ndarray) -> np.ndarray:
        out = np.empty((x.shape[0], len(spec)))
        for i, row in enumerate(x):
            pert = solve_power_flow(
                case, opts, injections=params.apply(case, row), start=base_sol, ybus=ybus
            )
            if not pert.converged:
                raise ModelEvaluationError("power flow diverged", sample_index=i)
            out[i] = evaluate_metrics(pert, spec)
        return out

    return evaluate


def hybrid_sensitivities(
    case: GridCase,
    sol: PowerFlowSolution,
    params: StochasticParameterSet,
    spec: MetricSpec,
    nonlinearity_threshold: float = 0.02,
    fd_step: float = 1e-6,
    sobol_n_base: int = 256,
    seed: int = 0,
    ybus: AdmittanceMatrix | None = None,
) -> SensitivityMatrix:
    """Adjoint rows by default, statistical re-estimation where they misbehave.

    Each adjoint row is probed against central finite differences on a
    small parameter subset; rows whose relative disagreement exceeds the
    threshold are flagged highly nonlinear, re-estimated from a Saltelli
    sample as signed index-rescaled slopes, and tagged accordingly.
    """
    ybus = ybus if ybus is not None else build_admittance(case)
    adj = adjoint_sensitivities(case, sol, params, spec, ybus=ybus)
    cols = _probe_columns(len(params))
    probe = finite_difference_sensitivities(
        case, sol, params, spec, step=fd_step, ybus=ybus, columns=cols
    )

    diff = np.abs(adj.values[:, cols] - probe.values[:, cols]).max(axis=1)
    scale = np.maximum(np.abs(probe.values[:, cols]).max(axis=1), 1e-9)
    nonlinear = diff / scale > nonlinearity_threshold
    if not np.any(nonlinear):
        return adj

    flagged = np.flatnonzero(nonlinear)
    logger.warning(
        "metrics at buses %s are highly nonlinear (adjoint/FD disagreement > %.3g); "
        "re-estimating statistically",
        [spec.buses[i] for i in flagged],
        nonlinearity_threshold,
    )
    sub_spec = MetricSpec(tuple(spec.entries[i] for i in flagged))
    model = _powerflow_evaluator(case, params, sub_spec, sol, ybus)
    slopes = sobol_rescaled_slopes(model, params, n_base=sobol_n_base, seed=seed)

    values = adj.values.copy()
    methods = list(adj.methods)
    for row, i in enumerate(flagged):
        values[i] = slopes[row]
        methods[i] = METHOD_SOBOL
    return SensitivityMatrix(
        values=values,
        metric_buses=adj.metric_buses,
        parameter_labels=adj.parameter_labels,
        methods=tuple(methods),
        adjoint_solves=adj.adjoint_solves,
    )
