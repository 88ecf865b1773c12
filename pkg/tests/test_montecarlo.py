"""Seeded sampling, deterministic parallel solves, and the MAE comparison."""

import numpy as np
import pytest

from rmss import (
    MetricSpec,
    mae_compare,
    run_monte_carlo,
    run_rmss,
    sample_parameters,
    tag_essential,
)
from rmss.exceptions import (
    AllSamplesFailed,
    DimensionMismatch,
    ExcessiveFailureRate,
    NotPSD,
)
from rmss.montecarlo import CI_MEAN, McReport
from rmss.parameters import Axis, ParameterEntry, StochasticParameterSet

from test_powerflow import two_bus


def pset(means, stdevs, sigma=None):
    entries = tuple(
        ParameterEntry(f"g{i + 1}", Axis.P, m, s)
        for i, (m, s) in enumerate(zip(means, stdevs))
    )
    return StochasticParameterSet(
        entries=entries,
        sigma=np.diag(np.asarray(stdevs, dtype=float) ** 2) if sigma is None else sigma,
    )


@pytest.fixture(scope="module")
def two_bus_stochastic():
    case = tag_essential(two_bus(p_load=1.0), ["l1"])
    params = StochasticParameterSet.from_case(case, sigma_frac=0.02)
    return case, params


class TestSampling:
    def test_zero_samples_gives_empty_batch(self):
        batch = sample_parameters(pset([0.5], [0.01]), 0, seed=1)
        assert batch.values.shape == (0, 1)

    def test_same_seed_same_batch(self):
        params = pset([0.5, 0.3], [0.01, 0.02])
        a = sample_parameters(params, 1000, seed=7)
        b = sample_parameters(params, 1000, seed=7)
        assert np.array_equal(a.values, b.values)

    def test_different_seed_differs(self):
        params = pset([0.5], [0.01])
        a = sample_parameters(params, 100, seed=1)
        b = sample_parameters(params, 100, seed=2)
        assert not np.array_equal(a.values, b.values)

    def test_correlated_draws_reproduce_target_correlation(self):
        rho = 0.5
        stdevs = np.array([0.02, 0.03])
        sigma = np.array([[1.0, rho], [rho, 1.0]]) * np.outer(stdevs, stdevs)
        batch = sample_parameters(pset([0.5, 0.4], stdevs, sigma=sigma), 10_000, seed=11)
        empirical = np.corrcoef(batch.values.T)[0, 1]
        assert empirical == pytest.approx(rho, abs=0.05)

    def test_sample_mean_within_clt_bound(self):
        mean, stdev, n = 0.5, 0.02, 10_000
        batch = sample_parameters(pset([mean], [stdev]), n, seed=5)
        assert abs(batch.values.mean() - mean) <= 4 * stdev / np.sqrt(n)

    def test_asymmetric_covariance_rejected(self):
        with pytest.raises(NotPSD):
            pset([0.5, 0.4], [0.01, 0.01], sigma=np.array([[1e-4, 1e-5], [5e-5, 1e-4]]))

    def test_indefinite_covariance_rejected(self):
        with pytest.raises(NotPSD):
            pset([0.5, 0.4], [0.01, 0.01],
                 sigma=np.array([[1e-4, -2e-4], [-2e-4, 1e-4]]))


class TestRunMonteCarlo:
    def test_zero_spread_collapses_to_nominal(self, two_bus_stochastic):
        case, _ = two_bus_stochastic
        params = StochasticParameterSet.from_case(case, sigma_abs=0.0)
        spec = MetricSpec.voltages_at([2])
        mc = run_monte_carlo(case, params, spec, n=50, seed=3)
        # every sample is bitwise the nominal draw, so the interval is a point
        assert mc.metric_ci_ub[0] == mc.metric_ci_lb[0]
        assert mc.metric_stdev[0] == pytest.approx(0.0, abs=1e-14)
        from rmss import evaluate_metrics, solve_power_flow

        nominal = evaluate_metrics(solve_power_flow(case), spec)
        assert mc.metric_ci_ub[0] == nominal[0]
        assert mc.metric_mean[0] == pytest.approx(nominal[0], abs=1e-14)

    def test_workers_do_not_change_statistics(self, two_bus_stochastic):
        case, params = two_bus_stochastic
        spec = MetricSpec.voltages_at([2])
        serial = run_monte_carlo(case, params, spec, n=120, seed=9, workers=1)
        parallel = run_monte_carlo(case, params, spec, n=120, seed=9, workers=3)
        assert serial.statistics_dict() == parallel.statistics_dict()
        assert np.array_equal(serial.metric_mean, parallel.metric_mean)

    def test_mean_ci_narrower_than_percentiles(self, two_bus_stochastic):
        case, params = two_bus_stochastic
        spec = MetricSpec.voltages_at([2])
        pct = run_monte_carlo(case, params, spec, n=400, seed=5)
        mean_ci = run_monte_carlo(case, params, spec, n=400, seed=5, ci_method=CI_MEAN)
        assert (mean_ci.metric_ci_ub - mean_ci.metric_ci_lb)[0] < (
            pct.metric_ci_ub - pct.metric_ci_lb
        )[0]

    def test_nominal_divergence_aborts(self):
        case = tag_essential(two_bus(p_load=6.0), ["l1"])
        params = StochasticParameterSet.from_case(case, sigma_frac=0.02)
        with pytest.raises(AllSamplesFailed, match="nominal"):
            run_monte_carlo(case, params, MetricSpec.voltages_at([2]), n=10, seed=0)

    def test_failed_samples_tallied_not_fatal(self):
        # nominal load sits just under the 5 pu transfer limit, so a fat
        # spread pushes a fraction of the draws past it
        case = tag_essential(two_bus(p_load=4.9), ["l1"])
        params = StochasticParameterSet.from_case(case, sigma_abs=0.08)
        mc = run_monte_carlo(case, params, MetricSpec.voltages_at([2]), n=200, seed=21)
        assert 0 < mc.n_failed < 200
        assert np.isfinite(mc.metric_mean).all()

    def test_runtime_accounting(self, two_bus_stochastic):
        case, params = two_bus_stochastic
        mc = run_monte_carlo(case, params, MetricSpec.voltages_at([2]), n=50, seed=1)
        n_converged = mc.n_samples - mc.n_failed
        assert mc.total_runtime_s >= n_converged * mc.per_solve_min_s
        assert mc.per_solve_min_s > 0

    def test_protocol_sample_size_one_thousand(self, two_bus_stochastic):
        # 1,000 here; 10,000 and 100,000 run in the stability test below
        case, params = two_bus_stochastic
        mc = run_monte_carlo(case, params, MetricSpec.voltages_at([2]), n=1_000, seed=4)
        assert mc.n_samples == 1_000
        assert mc.metric_ci_lb[0] < mc.metric_mean[0] < mc.metric_ci_ub[0]

    def test_ci_bounds_stable_across_sample_sizes(self, two_bus_stochastic):
        # the interval at 100k must sit within the 10k interval's half-width
        case, params = two_bus_stochastic
        spec = MetricSpec.voltages_at([2])
        at_10k = run_monte_carlo(case, params, spec, n=10_000, seed=13)
        at_100k = run_monte_carlo(case, params, spec, n=100_000, seed=13)
        half_width = (at_10k.metric_ci_ub - at_10k.metric_ci_lb) / 2
        assert np.all(np.abs(at_100k.metric_ci_ub - at_10k.metric_ci_ub) < half_width)
        assert np.all(np.abs(at_100k.metric_ci_lb - at_10k.metric_ci_lb) < half_width)

    def test_report_dict_round_trip(self, two_bus_stochastic):
        case, params = two_bus_stochastic
        mc = run_monte_carlo(case, params, MetricSpec.voltages_at([2]), n=30, seed=2)
        again = McReport.from_dict(mc.to_dict())
        assert again.statistics_dict() == mc.statistics_dict()
        assert again.total_runtime_s == mc.total_runtime_s


class TestMaeCompare:
    def _reports(self, two_bus_stochastic, offset=0.0):
        case, params = two_bus_stochastic
        spec = MetricSpec.voltages_at([2])
        rmss = run_rmss(case, params, spec, sigma_c="propagated")
        mc = run_monte_carlo(case, params, spec, n=300, seed=8)
        if offset:
            mc.metric_ci_ub = mc.metric_ci_ub + offset
            mc.metric_ci_lb = mc.metric_ci_lb + offset
        return rmss, mc

    def test_identical_bounds_give_zero_mae(self, two_bus_stochastic):
        rmss, mc = self._reports(two_bus_stochastic)
        mc.metric_ci_ub = np.array([r.c_wc_ub for r in rmss.points[0].results])
        mc.metric_ci_lb = np.array([r.c_wc_lb for r in rmss.points[0].results])
        env_ub, env_lb = rmss.points[0].parameter_envelope()
        mc.param_ci_ub, mc.param_ci_lb = env_ub, env_lb
        comp = mae_compare(rmss, mc)
        assert comp.mae_c_ub == comp.mae_c_lb == 0.0
        assert comp.mae_e_ub == comp.mae_e_lb == 0.0

    def test_constant_offset_is_the_mae(self, two_bus_stochastic):
        rmss, mc = self._reports(two_bus_stochastic)
        # align exactly, then shift the sampled interval by 0.01 pu elementwise
        mc.metric_ci_ub = np.array([r.c_wc_ub + 0.01 for r in rmss.points[0].results])
        mc.metric_ci_lb = np.array([r.c_wc_lb + 0.01 for r in rmss.points[0].results])
        comp = mae_compare(rmss, mc)
        assert comp.mae_c_ub == pytest.approx(0.01, abs=1e-15)
        assert comp.mae_c_lb == pytest.approx(0.01, abs=1e-15)
        assert comp.mae_pct["c_ub"] == pytest.approx(1.0, abs=1e-12)

    def test_speedup_is_runtime_ratio(self, two_bus_stochastic):
        rmss, mc = self._reports(two_bus_stochastic)
        comp = mae_compare(rmss, mc)
        assert comp.speedup == pytest.approx(mc.total_runtime_s / rmss.runtime_s)
        assert comp.speedup > 0

    def test_dimension_mismatch_rejected(self, two_bus_stochastic):
        rmss, mc = self._reports(two_bus_stochastic)
        mc.metric_buses = (2, 3)
        with pytest.raises(DimensionMismatch):
            mae_compare(rmss, mc)

    def test_excessive_failure_rate_aborts(self, two_bus_stochastic):
        rmss, mc = self._reports(two_bus_stochastic)
        mc.n_failed = int(0.05 * mc.n_samples)
        with pytest.raises(ExcessiveFailureRate):
            mae_compare(rmss, mc)

    def test_sweep_comparison_picks_best_fit_point(self, two_bus_stochastic):
        case, params = two_bus_stochastic
        spec = MetricSpec.voltages_at([2])
        rmss = run_rmss(case, params, spec)  # default sweep
        mc = run_monte_carlo(case, params, spec, n=2000, seed=8)
        comp = mae_compare(rmss, mc)
        assert comp.sigma_label in [p.label for p in rmss.points]
        assert len(comp.per_point) == len(rmss.points)
        best = min(a + b for _, a, b in comp.per_point)
        assert comp.mae_c_ub + comp.mae_c_lb == pytest.approx(best)
