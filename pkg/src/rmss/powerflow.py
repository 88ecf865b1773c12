"""Steady-state AC power flow on the network system Y(x)V = J.

The solver runs Newton iterations on bus current-injection mismatch
equations in rectangular voltage coordinates, so every iterate solves a
sparse linear system in the network matrix shape that the adjoint
sensitivity engine reuses. Slack voltage is held by identity rows; PV
buses carry their net reactive injection as an extra unknown pinned by a
voltage-magnitude equation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .exceptions import (
    JacobianSingular,
    NotConverged,
    SingularityWarning,
    TopologyError,
    UnknownBus,
)
from .model import BusKind, GridCase


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Sparse complex bus admittance matrix in case bus order."""

    y: sparse.csr_matrix
    bus_ids: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.bus_ids)


def build_admittance(case: GridCase) -> AdmittanceMatrix:
    """Stamp in-service branches into the bus admittance matrix.

    Each branch contributes the standard two-port pi-model with an
    off-nominal complex turns ratio tap*exp(j*shift) on the from side.
    """
    idx = case.bus_index()
    n = len(case.buses)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []
    for br in case.branches:
        if not br.status:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        y = 1.0 / complex(br.r, br.x)
        bc = 1j * br.b_shunt / 2.0
        ratio = br.tap * np.exp(1j * br.phase_shift)
        rows += [f, f, t, t]
        cols += [f, t, f, t]
        vals += [
            (y + bc) / (br.tap * br.tap),
            -y / np.conj(ratio),
            -y / ratio,
            y + bc,
        ]
    y_bus = sparse.coo_matrix(
        (np.array(vals, dtype=complex), (rows, cols)), shape=(n, n)
    ).tocsr()

    touched = np.zeros(n, dtype=bool)
    touched[rows] = True
    for i in np.flatnonzero(~touched):
        warnings.warn(
            f"bus {case.buses[i].id} has no incident admittance",
            SingularityWarning,
            stacklevel=2,
        )
    return AdmittanceMatrix(y=y_bus, bus_ids=tuple(b.id for b in case.buses))


@dataclass
class NewtonOptions:
    tolerance: float = 1e-8  # pu power mismatch
    max_iter: int = 50
    flat_start: bool = True  # 1.0 at angle 0; a supplied start solution overrides


@dataclass(eq=False)
class PowerFlowSolution:
    """Converged (or best-iterate) complex bus voltages plus diagnostics."""

    v: np.ndarray  # complex, case bus order
    bus_ids: tuple[int, ...]
    iterations: int
    max_mismatch: float
    converged: bool
    mismatch_history: tuple[float, ...]
    q_pv: dict[int, float] = field(default_factory=dict)  # solved net Q at PV buses


class CurrentInjectionSystem:
    """Residual/Jacobian of the rectangular current-injection equations.

    State layout: [e_0, f_0, e_1, f_1, ..., Q at PV buses]. Slack rows are
    identity constraints on the slack voltage; PV buses get an extra
    squared-magnitude row paired with their reactive-injection column.
    """

    def __init__(
        self,
        case: GridCase,
        ybus: AdmittanceMatrix | None = None,
        injections: tuple[np.ndarray, np.ndarray] | None = None,
    ):
        self.case = case
        self.n = n = len(case.buses)
        ybus = ybus if ybus is not None else build_admittance(case)
        self.y = ybus.y
        kinds = [b.kind for b in case.buses]
        if BusKind.SLACK not in kinds:
            raise TopologyError("case has no slack bus")
        self.slack = kinds.index(BusKind.SLACK)
        self.pv = np.array([i for i, k in enumerate(kinds) if k is BusKind.PV], dtype=int)
        self.pq = np.array([i for i, k in enumerate(kinds) if k is BusKind.PQ], dtype=int)
        self.nonslack = np.array([i for i in range(n) if i != self.slack], dtype=int)
        self.dim = 2 * n + len(self.pv)

        p, q = injections if injections is not None else case.injections()
        self.p = np.asarray(p, dtype=float)
        self.q = np.asarray(q, dtype=float)

        slack_bus = case.buses[self.slack]
        ang = slack_bus.angle_setpoint or 0.0
        self.slack_e = slack_bus.v_setpoint * np.cos(ang)
        self.slack_f = slack_bus.v_setpoint * np.sin(ang)
        self.v_set_pv = np.array([case.buses[i].v_setpoint for i in self.pv])

        coo = self.y.tocoo()
        keep = coo.row != self.slack  # slack rows are identity, not KCL
        yr, yc, yv = coo.row[keep], coo.col[keep], coo.data[keep]
        g, b = yv.real, yv.imag
        const_rows = np.concatenate(
            [2 * yr, 2 * yr, 2 * yr + 1, 2 * yr + 1, [2 * self.slack, 2 * self.slack + 1]]
        )
        const_cols = np.concatenate(
            [2 * yc, 2 * yc + 1, 2 * yc, 2 * yc + 1, [2 * self.slack, 2 * self.slack + 1]]
        )
        self._const_vals = np.concatenate([-g, b, -b, -g, [1.0, 1.0]])

        ns = self.nonslack
        inj_rows = np.repeat(2 * ns, 4) + np.tile([0, 0, 1, 1], len(ns))
        inj_cols = np.repeat(2 * ns, 4) + np.tile([0, 1, 0, 1], len(ns))
        qcol = 2 * n + np.arange(len(self.pv))
        pvq_rows = np.column_stack([2 * self.pv, 2 * self.pv + 1]).ravel()
        pvq_cols = np.repeat(qcol, 2)
        mag_rows = np.repeat(qcol, 2)
        mag_cols = np.column_stack([2 * self.pv, 2 * self.pv + 1]).ravel()

        self._rows = np.concatenate([const_rows, inj_rows, pvq_rows, mag_rows])
        self._cols = np.concatenate([const_cols, inj_cols, pvq_cols, mag_cols])

    def initial_state(self, start: PowerFlowSolution | None = None) -> np.ndarray:
        x = np.zeros(self.dim)
        if start is not None:
            x[0 : 2 * self.n : 2] = start.v.real
            x[1 : 2 * self.n : 2] = start.v.imag
            for j, i in enumerate(self.pv):
                x[2 * self.n + j] = start.q_pv.get(self.case.buses[i].id, self.q[i])
        else:
            x[0 : 2 * self.n : 2] = 1.0
            x[0 + 2 * self.pv] = self.v_set_pv
            x[2 * self.n :] = self.q[self.pv]
        x[2 * self.slack] = self.slack_e
        x[2 * self.slack + 1] = self.slack_f
        return x

    def _split(self, x: np.ndarray):
        e = x[0 : 2 * self.n : 2]
        f = x[1 : 2 * self.n : 2]
        q_eff = self.q.copy()
        q_eff[self.pv] = x[2 * self.n :]
        return e, f, q_eff

    def residual(self, x: np.ndarray) -> np.ndarray:
        e, f, q_eff = self._split(x)
        v = e + 1j * f
        i_net = self.y @ v
        d = e * e + f * f
        res = np.empty(self.dim)
        res[0 : 2 * self.n : 2] = (self.p * e + q_eff * f) / d - i_net.real
        res[1 : 2 * self.n : 2] = (self.p * f - q_eff * e) / d - i_net.imag
        res[2 * self.slack] = e[self.slack] - self.slack_e
        res[2 * self.slack + 1] = f[self.slack] - self.slack_f
        res[2 * self.n :] = e[self.pv] ** 2 + f[self.pv] ** 2 - self.v_set_pv**2
        return res

    def jacobian(self, x: np.ndarray) -> sparse.csc_matrix:
        e, f, q_eff = self._split(x)
        d = e * e + f * f
        ns = self.nonslack
        a = (self.p * (f * f - e * e) - 2.0 * q_eff * e * f) / (d * d)
        b = (q_eff * (e * e - f * f) - 2.0 * self.p * e * f) / (d * d)
        inj_vals = np.column_stack([a[ns], b[ns], b[ns], -a[ns]]).ravel()
        pvq_vals = np.column_stack([f[self.pv] / d[self.pv], -e[self.pv] / d[self.pv]]).ravel()
        mag_vals = np.column_stack([2.0 * e[self.pv], 2.0 * f[self.pv]]).ravel()
        vals = np.concatenate([self._const_vals, inj_vals, pvq_vals, mag_vals])
        return sparse.csc_matrix((vals, (self._rows, self._cols)), shape=(self.dim, self.dim))

    def power_mismatch(self, x: np.ndarray) -> float:
        """Worst specified-vs-computed power mismatch over non-slack buses, pu."""
        e, f, q_eff = self._split(x)
        v = e + 1j * f
        s_calc = v * np.conj(self.y @ v)
        dp = np.abs(self.p[self.nonslack] - s_calc.real[self.nonslack])
        dq = np.abs(self.q[self.pq] - s_calc.imag[self.pq])
        dv = np.abs(np.abs(v[self.pv]) - self.v_set_pv)
        parts = [dp, dq, dv]
        return max(float(np.max(part)) if len(part) else 0.0 for part in parts)

    def factorize(self, x: np.ndarray):
        jac = self.jacobian(x)
        try:
            return splu(jac)
        except RuntimeError as exc:
            row_mass = np.asarray(np.abs(jac).sum(axis=1)).ravel()
            if np.any(row_mass == 0.0):
                row = int(np.flatnonzero(row_mass == 0.0)[0])
                bus = self.case.buses[row // 2 if row < 2 * self.n else self.pv[row - 2 * self.n]]
                raise JacobianSingular(
                    f"singular Jacobian: no equations couple bus {bus.id}"
                ) from exc
            raise JacobianSingular(f"factorization failed: {exc}") from exc

    def pin_slack(self, x: np.ndarray) -> np.ndarray:
        """Hold the slack voltage at its setpoint bit-exactly."""
        x[2 * self.slack] = self.slack_e
        x[2 * self.slack + 1] = self.slack_f
        return x

    def solution_from_state(
        self, x: np.ndarray, iterations: int, history: list[float], converged: bool
    ) -> PowerFlowSolution:
        e, f, q_eff = self._split(x)
        return PowerFlowSolution(
            v=e + 1j * f,
            bus_ids=tuple(b.id for b in self.case.buses),
            iterations=iterations,
            max_mismatch=history[-1],
            converged=converged,
            mismatch_history=tuple(history),
            q_pv={self.case.buses[i].id: float(x[2 * self.n + j]) for j, i in enumerate(self.pv)},
        )


_DIVERGENCE_LIMIT = 1e8


def solve_power_flow(
    case: GridCase,
    options: NewtonOptions | None = None,
    injections: tuple[np.ndarray, np.ndarray] | None = None,
    start: PowerFlowSolution | None = None,
    ybus: AdmittanceMatrix | None = None,
) -> PowerFlowSolution:
    """Newton power flow; deterministic for fixed inputs.

    Returns a solution with ``converged=False`` plus the mismatch history
    when the iteration fails, rather than raising; callers that need a
    converged base point raise on that flag.
    """
    opts = options or NewtonOptions()
    system = CurrentInjectionSystem(case, ybus=ybus, injections=injections)
    x = system.initial_state(start)

    history: list[float] = []
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for it in range(opts.max_iter + 1):
            mismatch = system.power_mismatch(x)
            history.append(mismatch)
            if not np.isfinite(mismatch) or mismatch > _DIVERGENCE_LIMIT:
                return system.solution_from_state(x, it, history, converged=False)
            if mismatch <= opts.tolerance:
                return system.solution_from_state(x, it, history, converged=True)
            if it == opts.max_iter:
                break
            lu = system.factorize(x)
            x = system.pin_slack(x + lu.solve(-system.residual(x)))
            if not np.all(np.isfinite(x)):
                history.append(float("inf"))
                return system.solution_from_state(x, it + 1, history, converged=False)
    return system.solution_from_state(x, opts.max_iter, history, converged=False)


class MetricKind(Enum):
    BUS_VOLTAGE_MAGNITUDE = "bus_voltage_magnitude"


@dataclass(frozen=True)
class Metric:
    kind: MetricKind
    bus: int


@dataclass(frozen=True)
class MetricSpec:
    """Ordered list of critical performance metrics to track."""

    entries: tuple[Metric, ...]

    @classmethod
    def voltages_at(cls, bus_ids) -> "MetricSpec":
        return cls(tuple(Metric(MetricKind.BUS_VOLTAGE_MAGNITUDE, int(b)) for b in bus_ids))

    @property
    def buses(self) -> tuple[int, ...]:
        return tuple(m.bus for m in self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def default_metric_spec(case: GridCase) -> MetricSpec:
    """Voltage magnitude at every nonzero-injection PQ bus, in bus order."""
    p, q = case.injections()
    idx = case.bus_index()
    buses = [
        b.id
        for b in case.buses
        if b.kind is BusKind.PQ and (p[idx[b.id]] != 0.0 or q[idx[b.id]] != 0.0)
    ]
    return MetricSpec.voltages_at(buses)


def evaluate_metrics(sol: PowerFlowSolution, spec: MetricSpec) -> np.ndarray:
    """Metric values in spec order; requires a converged solution."""
    if not sol.converged:
        raise NotConverged("metrics requested on a non-converged power flow")
    pos = {bus_id: i for i, bus_id in enumerate(sol.bus_ids)}
    out = np.empty(len(spec))
    for i, metric in enumerate(spec.entries):
        if metric.bus not in pos:
            raise UnknownBus(f"metric references unknown bus {metric.bus}")
        out[i] = abs(sol.v[pos[metric.bus]])
    return out
