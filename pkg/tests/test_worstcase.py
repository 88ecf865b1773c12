"""Closed-form worst-case construction, sweeps, and violation counting."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from rmss import (
    MetricSpec,
    default_metric_spec,
    run_monte_carlo,
    run_rmss,
    tag_essential,
    worst_case_metric,
    worst_case_parameters,
)
from rmss.exceptions import DegenerateDirection, InvalidProbability, MissingLimits
from rmss.parameters import Axis, ParameterEntry, StochasticParameterSet
from rmss.worstcase import (
    FRACTION,
    RmssReport,
    SweepGrid,
    WorstCaseResult,
    count_violations,
)

from test_powerflow import two_bus


def bisected_normal_quantile(rho: float) -> float:
    """Independent inverse-CDF oracle built on math.erf only."""
    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if 0.5 * (1 + math.erf(mid / math.sqrt(2))) < rho:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def pset(means, stdevs, sigma=None):
    entries = tuple(
        ParameterEntry(f"g{i + 1}", Axis.P, m, s) for i, (m, s) in enumerate(zip(means, stdevs))
    )
    return StochasticParameterSet(
        entries=entries,
        sigma=np.diag(np.asarray(stdevs, dtype=float) ** 2) if sigma is None else sigma,
    )


class TestWorstCaseMetric:
    def test_zero_spread_returns_nominal(self):
        assert worst_case_metric(1.0, 0.0, 0.975, "UB") == 1.0

    def test_median_confidence_returns_nominal(self):
        assert worst_case_metric(1.0, 0.01, 0.5, "UB") == pytest.approx(1.0, abs=1e-15)

    def test_975_quantile_against_erf_bisection_oracle(self):
        z = bisected_normal_quantile(0.975)
        assert z == pytest.approx(1.959963985, abs=1e-8)
        assert worst_case_metric(1.0, 0.01, 0.975, "UB") == pytest.approx(1.0 + 0.01 * z, abs=1e-9)
        assert worst_case_metric(1.0, 0.01, 0.975, "LB") == pytest.approx(1.0 - 0.01 * z, abs=1e-9)

    def test_invalid_probability(self):
        for rho in (0.0, 1.0, -0.2, 1.7):
            with pytest.raises(InvalidProbability):
                worst_case_metric(1.0, 0.01, rho, "UB")

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            worst_case_metric(1.0, -0.01, 0.975, "UB")


class TestWorstCaseParameters:
    def test_zero_deviation_returns_nominal(self):
        params = pset([0.4, 0.2], [0.01, 0.01])
        out = worst_case_parameters(params, np.array([0.3, 0.1]), 1.0, 1.0)
        assert np.array_equal(out, params.means)

    def test_identity_covariance_single_axis(self):
        params = pset([0.0, 0.0], [1.0, 1.0])
        out = worst_case_parameters(params, np.array([1.0, 0.0]), 0.7, 0.0)
        assert np.allclose(out, [0.7, 0.0])

    def test_correlated_covariance_against_bruteforce_minimizer(self):
        sigma = np.array([[1.0, 0.5], [0.5, 1.0]])
        params = pset([0.0, 0.0], [1.0, 1.0], sigma=sigma)
        lam = np.array([1.0, 0.0])
        out = worst_case_parameters(params, lam, 1.0, 0.0)

        # constraint fixes x1 = 1; minimize the normalized distance over x2
        inv = np.linalg.inv(sigma)

        def maha(x2):
            x = np.array([1.0, x2])
            return float(x @ inv @ x)

        best = minimize_scalar(maha, bounds=(-5, 5), method="bounded")
        assert np.allclose(out, [1.0, best.x], atol=1e-6)
        assert np.allclose(out, [1.0, 0.5], atol=1e-9)

    def test_insensitive_metric_raises_degenerate_direction(self):
        params = pset([0.4], [0.01])
        with pytest.raises(DegenerateDirection):
            worst_case_parameters(params, np.array([0.0]), 1.01, 1.0)


@st.composite
def random_direction_instances(draw):
    d = draw(st.integers(min_value=1, max_value=4))
    fl = st.floats(-2.0, 2.0, allow_nan=False)
    a = np.array([[draw(fl) for _ in range(d)] for _ in range(d)])
    sigma = a @ a.T + 0.1 * np.eye(d)
    lam = np.array([draw(st.floats(-3.0, 3.0, allow_nan=False)) for _ in range(d)])
    delta = draw(st.floats(-0.5, 0.5, allow_nan=False))
    means = np.array([draw(st.floats(-1.0, 1.0, allow_nan=False)) for _ in range(d)])
    return means, sigma, lam, delta


class TestClosedFormProperties:
    @settings(max_examples=60, deadline=None)
    @given(random_direction_instances())
    def test_hyperplane_membership(self, instance):
        means, sigma, lam, delta = instance
        if float(lam @ sigma @ lam) < 1e-10:
            return
        params = pset(means, np.sqrt(np.diag(sigma)), sigma=sigma)
        out = worst_case_parameters(params, lam, 1.0 + delta, 1.0)
        assert abs(lam @ (out - means) - delta) <= 1e-10

    @settings(max_examples=30, deadline=None)
    @given(random_direction_instances())
    def test_covariance_scale_cancels(self, instance):
        means, sigma, lam, delta = instance
        if float(lam @ sigma @ lam) < 1e-10:
            return
        params = pset(means, np.sqrt(np.diag(sigma)), sigma=sigma)
        scaled = pset(means, 3.0 * np.sqrt(np.diag(sigma)), sigma=9.0 * sigma)
        a = worst_case_parameters(params, lam, 1.0 + delta, 1.0)
        b = worst_case_parameters(scaled, lam, 1.0 + delta, 1.0)
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(random_direction_instances(), st.integers(0, 2**31 - 1))
    def test_no_random_hyperplane_point_is_more_probable(self, instance, seed):
        means, sigma, lam, delta = instance
        if float(lam @ sigma @ lam) < 1e-10:
            return
        params = pset(means, np.sqrt(np.diag(sigma)), sigma=sigma)
        out = worst_case_parameters(params, lam, 1.0 + delta, 1.0)
        dev = out - means
        best = float(dev @ np.linalg.solve(sigma, dev))

        rng = np.random.default_rng(seed)
        z = rng.standard_normal((2000, len(means)))
        z += ((delta - z @ lam) / (lam @ lam))[:, None] * lam[None, :]
        maha = np.einsum("nd,nd->n", z, np.linalg.solve(sigma, z.T).T)
        assert np.all(maha >= best - 1e-9)


class TestSweepGrid:
    def test_default_spans_tenth_to_five_percent(self):
        grid = SweepGrid.default()
        assert len(grid.values) == 20
        assert grid.values[0] == pytest.approx(0.001)
        assert grid.values[-1] == pytest.approx(0.05)
        assert grid.unit == FRACTION

    def test_rejects_unsorted_or_nonpositive(self):
        with pytest.raises(ValueError):
            SweepGrid((0.01, 0.005))
        with pytest.raises(ValueError):
            SweepGrid((0.0, 0.01))
        with pytest.raises(ValueError):
            SweepGrid((), FRACTION)
        with pytest.raises(ValueError):
            SweepGrid((0.01,), unit="percentish")


def make_bound(bus, c_nom, c_ub, c_lb, sigma_label=0.01):
    return WorstCaseResult(
        bus=bus,
        metric_index=0,
        sigma_label=sigma_label,
        sigma_c=0.01,
        rho=0.975,
        c_nom=c_nom,
        c_wc_ub=c_ub,
        c_wc_lb=c_lb,
        e_wc_ub=None,
        e_wc_lb=None,
        e_wc_deviation=None,
        e_wc_within_ci=None,
        degenerate=True,
    )


class TestCountViolations:
    def test_all_inside_limits(self, case14):
        bounds = [make_bound(4, 1.0, 1.01, 0.99)]
        report = count_violations(bounds, case14)
        assert report.points[0].ub_total == 0
        assert report.points[0].lb_total == 0
        assert report.worst_violator is None

    def test_three_ub_violations_counted(self, case14):
        bounds = [make_bound(b, 1.0, 1.2, 0.99) for b in (4, 5, 6)]
        report = count_violations(bounds, case14)
        point = report.points[0]
        assert point.ub_total == 3
        assert point.lb_total == 0
        assert point.per_bus == {4: 1, 5: 1, 6: 1}
        assert point.ub_total + point.lb_total == sum(point.per_bus.values())
        assert point.worst_violator == 4  # tie broken to the lowest id

    def test_band_limits_violate_only_beyond_two_percent(self, case14):
        setpoints = {4: 1.0, 5: 1.0}
        limits = {b: (s * 0.98, s * 1.02) for b, s in setpoints.items()}
        inside = make_bound(4, 1.0, 1.019, 0.981)
        outside = make_bound(5, 1.0, 1.021, 0.985)
        report = count_violations([inside, outside], case14, limits=limits)
        assert report.per_bus_total == {5: 1}
        records = report.points[0].records
        assert len(records) == 1
        assert records[0].side == "UB"
        assert records[0].margin == pytest.approx(0.001)

    def test_missing_limits(self):
        from rmss.model import Bus, BusKind, GridCase

        case = GridCase(
            base_mva=100.0,
            buses=(Bus(1, BusKind.SLACK, v_setpoint=1.0, angle_setpoint=0.0),),
            branches=(),
            generators=(),
            loads=(),
        )
        with pytest.raises(MissingLimits):
            count_violations([make_bound(1, 1.0, 1.1, 0.9)], case)

    def test_margins_recorded_in_pu(self, case14):
        report = count_violations([make_bound(4, 1.0, 1.07, 0.93)], case14)
        by_side = {r.side: r for r in report.points[0].records}
        assert by_side["UB"].margin == pytest.approx(1.07 - 1.05)
        assert by_side["LB"].margin == pytest.approx(0.95 - 0.93)


@pytest.fixture(scope="module")
def two_bus_stochastic():
    case = tag_essential(two_bus(p_load=1.0), ["l1"])
    params = StochasticParameterSet.from_case(case, sigma_frac=0.02)
    return case, params


class TestRunRmss:
    def test_zero_sigma_degenerates_to_nominal(self, two_bus_stochastic):
        case, params = two_bus_stochastic
        report = run_rmss(case, params, sigma_c=0.0)
        (point,) = report.points
        for r in point.results:
            assert r.c_wc_ub == r.c_nom
            assert r.c_wc_lb == r.c_nom
        assert report.violations.worst_violator is None

    def test_default_sweep_spans_declared_range(self, two_bus_stochastic):
        case, params = two_bus_stochastic
        report = run_rmss(case, params)
        assert report.sigma_mode == "sweep"
        labels = [p.label for p in report.points]
        assert len(labels) == 20
        assert labels[0] == pytest.approx(0.001)
        assert labels[-1] == pytest.approx(0.05)
        # per-metric absolute sigma is the fraction of the nominal value
        first = report.points[0]
        assert first.sigma_abs[0] == pytest.approx(0.001 * report.c_nom[0])

    def test_bound_ordering_and_linear_consistency(self, case14_solar, case14_solution):
        from rmss.sensitivity import adjoint_sensitivities

        params = StochasticParameterSet.from_case(case14_solar)
        spec = default_metric_spec(case14_solar)
        lam = adjoint_sensitivities(case14_solar, case14_solution, params, spec).values
        report = run_rmss(case14_solar, params, spec, sigma_c="propagated")
        assert len(report.sensitivity_methods) == len(report.metric_buses)
        for point in report.points:
            for i, r in enumerate(point.results):
                assert r.c_wc_lb <= r.c_nom <= r.c_wc_ub
                if r.degenerate:
                    continue
                # the dispatch really lives on the bound hyperplane
                shift = lam[i] @ (r.e_wc_ub - report.parameter_means)
                assert abs(shift - (r.c_wc_ub - r.c_nom)) <= 1e-10

    def test_ub_lb_deviations_are_exact_negations(self, case14_solar):
        # both dispatches derive from the single stored deviation vector,
        # so the +/- symmetry is bitwise
        params = StochasticParameterSet.from_case(case14_solar)
        report = run_rmss(case14_solar, params, sigma_c="propagated")
        means = report.parameter_means
        for r in report.points[0].results:
            if r.degenerate:
                continue
            assert np.array_equal(r.e_wc_ub, means + r.e_wc_deviation)
            assert np.array_equal(r.e_wc_lb, means - r.e_wc_deviation)

    def test_within_ci_flags_present(self, two_bus_stochastic):
        case, params = two_bus_stochastic
        report = run_rmss(case, params, sigma_c="propagated")
        (point,) = report.points
        (result,) = point.results
        # single parameter drives the metric fully, so its worst-case value
        # sits exactly on the parameter confidence bound
        assert result.e_wc_within_ci == (True,)

    def test_monotone_violations_over_band_sweep(self, case14_solar):
        params = StochasticParameterSet.from_case(case14_solar)
        report = run_rmss(case14_solar, params, limits=0.02)
        totals = [p.ub_total + p.lb_total for p in report.violations.points]
        assert all(b >= a for a, b in zip(totals, totals[1:]))
        assert totals[-1] > 0  # a 5% sweep tail must breach a 2% band

    def test_report_json_round_trip(self, case14_solar):
        params = StochasticParameterSet.from_case(case14_solar)
        report = run_rmss(case14_solar, params, limits=0.02)
        blob = json.dumps(report.to_dict())
        again = RmssReport.from_dict(json.loads(blob))
        assert json.dumps(again.to_dict()) == blob

    def test_degenerate_metric_keeps_bounds_without_dispatch(self, two_bus_stochastic):
        case, params = two_bus_stochastic
        # the slack voltage is pinned, so its direction is degenerate
        spec = MetricSpec.voltages_at([1, 2])
        report = run_rmss(case, params, spec, sigma_c=0.01)
        slack_r, pq_r = report.points[0].results
        assert slack_r.degenerate
        assert slack_r.e_wc_ub is None and slack_r.e_wc_lb is None
        assert slack_r.c_wc_ub > slack_r.c_nom > slack_r.c_wc_lb
        assert not pq_r.degenerate

    def test_two_bus_bounds_match_monte_carlo_interval(self, two_bus_stochastic):
        # independent oracle: percentile bounds of 10,000 sampled solves
        case, params = two_bus_stochastic
        spec = MetricSpec.voltages_at([2])
        report = run_rmss(case, params, spec, sigma_c="propagated")
        mc = run_monte_carlo(case, params, spec, n=10_000, seed=99)
        (point,) = report.points
        (r,) = point.results
        assert abs(r.c_wc_ub - mc.metric_ci_ub[0]) < 0.01
        assert abs(r.c_wc_lb - mc.metric_ci_lb[0]) < 0.01
