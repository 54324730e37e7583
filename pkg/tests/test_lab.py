import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from wdnpse.errors import ConvergenceError, NumericError, ScenarioError
from wdnpse.hydraulics import solve_operating_point
from wdnpse.lab import (
    SourceGroup, compare, empirical_covariance, histogram_sup_error, ks_normality_test,
    pipe_headloss_pdf, pump_headgain_pdf, run_mcs, sample_group, sample_linearized,
    source_impact_sweep,
)
from wdnpse.lab.pdfs import total_mass
from wdnpse.lab.sampling import sample_stream, standard_variates
from wdnpse.pse import run_algorithm1
from wdnpse.scenario import Scenario


def group(var, family="normal", mean=100.0):
    return SourceGroup("demand", ("J",), np.array([mean]), np.array([var]), family)


class TestSampling:
    def test_zero_variance(self):
        assert np.all(sample_group(group(0.0), 50, 3) == 100.0)

    def test_normal_moments(self):
        x = sample_group(group(60.28), 10**5, 1)[:, 0]
        assert x.var(ddof=1) == pytest.approx(60.28, rel=0.03)
        assert x.mean() == pytest.approx(100.0, abs=0.1)

    def test_uniform_bounds(self):
        x = sample_group(group(60.28, "uniform"), 10**5, 2)[:, 0]
        half = np.sqrt(60.28) * np.sqrt(3)
        assert x.min() >= 100 - half and x.max() <= 100 + half
        assert x.var(ddof=1) == pytest.approx(60.28, rel=0.03)

    @pytest.mark.parametrize("family", ["normal", "uniform", "laplace"])
    def test_unit_variates(self, family):
        z = standard_variates(np.random.default_rng(5), family, 10**5)
        assert abs(z.mean()) < 0.02 and z.var() == pytest.approx(1.0, rel=0.03)

    def test_unknown_family(self):
        with pytest.raises(ScenarioError):
            group(1.0, "cauchy")

    def test_counter_based(self):
        g = group(4.0)
        full = sample_group(g, 20, 9)
        assert np.array_equal(full[5:12], sample_group(g, 7, 9, start=5))
        assert not np.array_equal(full, sample_group(g, 20, 10))

    def test_streams_independent(self):
        a = sample_stream(0, 0, 0).standard_normal(5)
        b = sample_stream(0, 0, 1).standard_normal(5)
        assert not np.array_equal(a, b)

    @settings(max_examples=20)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 30))
    def test_reproducible(self, seed, n):
        g = group(2.0, "laplace")
        assert np.array_equal(sample_group(g, n, seed), sample_group(g, n, seed))


class TestMcs:
    def test_zero_variance(self, three_node):
        batch = run_mcs(three_node, Scenario(), 5, seed=0)
        det = solve_operating_point(three_node).x
        assert np.allclose(batch.X, det, atol=1e-9)
        assert np.allclose(empirical_covariance(batch), 0.0, atol=1e-15)

    def test_three_node_variances(self, three_node, three_scenario):
        batch = run_mcs(three_node, three_scenario, 1000, seed=1)
        K = empirical_covariance(batch)
        i23, i2 = three_node.state_index("q:P23"), three_node.state_index("h:J2")
        assert np.sqrt(K[i23, i23]) == pytest.approx(np.sqrt(55.46), rel=0.10)
        assert np.sqrt(K[i2, i2]) == pytest.approx(np.sqrt(0.65), rel=0.10)
        assert batch.excluded == []

    def test_overdetermined_refused(self, three_node, overdetermined):
        with pytest.raises(ScenarioError, match="sufficient"):
            run_mcs(three_node, overdetermined, 10)

    def test_parallel_bit_identical(self, three_node, three_scenario):
        a = run_mcs(three_node, three_scenario, 40, seed=4, workers=1)
        b = run_mcs(three_node, three_scenario, 40, seed=4, workers=4)
        assert np.array_equal(a.X, b.X)

    def test_thread_env(self, three_node, three_scenario, monkeypatch):
        monkeypatch.setenv("WDNPSE_THREADS", "3")
        a = run_mcs(three_node, three_scenario, 12, seed=2)
        assert np.array_equal(a.X, run_mcs(three_node, three_scenario, 12, seed=2, workers=1).X)

    def test_manifest(self, three_node, three_scenario):
        m = run_mcs(three_node, three_scenario, 3, seed=8).manifest()
        assert m["seed"] == 8 and m["N"] == 3 and m["excluded"] == [] and len(m["spec_hash"]) == 64

    def test_failures(self, three_node, three_scenario, monkeypatch):
        import wdnpse.lab.mcs as mcs
        real = mcs.solve_operating_point
        calls = {"n": 0}

        def flaky(*a, **k):
            calls["n"] += 1
            if calls["n"] <= limit:
                raise ConvergenceError("forced")
            return real(*a, **k)

        monkeypatch.setattr(mcs, "solve_operating_point", flaky)
        limit = 1
        batch = run_mcs(three_node, three_scenario, 200, seed=0, workers=1)
        assert batch.excluded == [0] and batch.good.shape[0] == 199
        calls["n"], limit = 0, 5
        with pytest.raises(ConvergenceError):
            run_mcs(three_node, three_scenario, 200, seed=0, workers=1)


class TestCovariance:
    def test_identical(self):
        assert np.all(empirical_covariance(np.ones((10, 3))) == 0)

    def test_linear(self):
        u = np.random.default_rng(3).standard_normal(10**4)
        assert empirical_covariance((2 * u)[:, None])[0, 0] == pytest.approx(4.0, rel=0.05)

    def test_too_few(self):
        with pytest.raises(ScenarioError):
            empirical_covariance(np.ones((1, 3)))

    def test_linearized_chi2_band(self, three_node, three_scenario):
        (res,) = run_algorithm1(three_node, three_scenario)
        N = 10**4
        batch = sample_linearized(three_node, three_scenario, N, seed=11)
        s2 = np.diag(empirical_covariance(batch))
        lo, hi = stats.chi2.ppf([0.0005, 0.9995], N - 1) / (N - 1)
        for v_mcs, v_pse in zip(s2, res.variance):
            if v_pse > 1e-20:
                assert lo <= v_mcs / v_pse <= hi


class TestCompare:
    def test_identical(self):
        K = np.diag([1.0, 4.0])
        rep = compare(K, K)
        assert np.all(rep.ae == 0) and rep.mean_re == 0.0

    def test_sigma_row_metrics(self):
        rep = compare(np.diag([4.183**2]), np.diag([4.276**2]))
        assert rep.ae[0] == pytest.approx(0.094, abs=0.002)
        assert rep.re[0] == pytest.approx(2.191, abs=0.05)

    def test_zero_mcs_sigma(self):
        rep = compare(np.diag([0.0, 1.0]), np.diag([0.0, 1.1]))
        assert np.isnan(rep.re[0]) and np.isfinite(rep.re[1])

    def test_mismatch(self):
        with pytest.raises(ScenarioError):
            compare(np.eye(2), np.eye(3))


class TestKs:
    def test_normal_passes(self):
        assert ks_normality_test(np.random.default_rng(0).standard_normal(1000)).passed

    def test_uniform_fails(self):
        r = ks_normality_test(np.random.default_rng(0).uniform(size=1000))
        assert not r.passed and r.statistic > r.critical

    def test_linearized_states_normal(self, eight_node, eight_scenario):
        batch = sample_linearized(eight_node, eight_scenario, 1000, seed=3)
        for j in range(batch.X.shape[1]):
            if batch.X[:, j].std() > 1e-9:
                assert ks_normality_test(batch.X[:, j]).passed

    def test_too_few(self):
        with pytest.raises(ScenarioError):
            ks_normality_test(np.zeros(10))

    def test_degenerate(self):
        with pytest.raises(NumericError):
            ks_normality_test(np.ones(100))


class TestPdfs:
    pump = (338.0, 0.015, 1.8)

    def test_pump_normalized(self):
        h0 = self.pump[0]
        mass = total_mass(lambda d: pump_headgain_pdf(self.pump, (120.0, 8.0), d), -h0, 200.0, points=[-100.0])
        assert mass == pytest.approx(1.0, abs=1e-6)

    def test_pipe_normalized(self):
        mass = total_mass(lambda d: pipe_headloss_pdf(0.01, 1.852, (50.0, 5.0), d), 0.0, 200.0, points=[13.0, 20.0])
        assert mass == pytest.approx(1.0, abs=1e-6)

    def test_pump_histogram(self):
        h0, r, beta = self.pump
        q = np.random.default_rng(1).normal(120.0, 8.0, 10**5)
        dh = -(h0 - r * q**beta)
        edges = np.linspace(np.percentile(dh, 0.1), np.percentile(dh, 99.9), 41)
        err = histogram_sup_error(dh, lambda d: pump_headgain_pdf(self.pump, (120.0, 8.0), d), edges)
        assert err < 0.02

    def test_pipe_histogram(self):
        q = np.random.default_rng(2).normal(50.0, 5.0, 10**5)
        dh = 0.01 * q**1.852
        edges = np.linspace(np.percentile(dh, 0.1), np.percentile(dh, 99.9), 41)
        err = histogram_sup_error(dh, lambda d: pipe_headloss_pdf(0.01, 1.852, (50.0, 5.0), d), edges)
        assert err < 0.02

    def test_linear_pump(self):
        d = np.linspace(-150, 0, 7)
        expected = stats.norm(100.0, 10.0).pdf((200.0 + d) / 2.0) / 2.0
        assert np.allclose(pump_headgain_pdf((200.0, 2.0, 1.0), (100.0, 10.0), d), expected)

    def test_linear_pipe(self):
        d = np.linspace(1, 40, 9)
        expected = stats.norm(10.0, 2.0).pdf(d / 3.0) / 3.0
        assert np.allclose(pipe_headloss_pdf(3.0, 1.0, (10.0, 2.0), d), expected)

    def test_outside_support(self):
        assert pipe_headloss_pdf(1.0, 1.852, (5.0, 1.0), -1.0) == 0.0
        assert pump_headgain_pdf(self.pump, (10.0, 1.0), -400.0) == 0.0

    @given(st.floats(-500, 500))
    def test_nonnegative(self, d):
        assert pipe_headloss_pdf(0.01, 1.852, (50.0, 5.0), d) >= 0
        assert pump_headgain_pdf(self.pump, (120.0, 8.0), d) >= 0


class TestSweep:
    def test_all_zero(self, eight_node, eight_scenario):
        t = source_impact_sweep(eight_node, eight_scenario,
                                {"demand": {"values": [0.0], "fixed": {"roughness": 0.0, "noise": 0.0}}})
        assert all(s == 0.0 for s in t.sigmas("demand", 0.0).values())

    def test_noise_only_pins(self, eight_node, eight_scenario):
        t = source_impact_sweep(eight_node, eight_scenario, {"noise": {"values": [5.0]}}, isolated=True)
        sig = t.sigmas("noise", 5.0)
        assert sig["h:T8"] > 0 and sig["h:R1"] < 1e-12

    def test_demand_moves_flows_more(self, eight_node, eight_scenario):
        t = source_impact_sweep(eight_node, eight_scenario,
                                {"demand": {"values": [0.0, 30.0], "fixed": {"roughness": 15.0, "noise": 1.0}}})
        dq = t.mean_sigma("demand", 30.0, ("q",)) - t.mean_sigma("demand", 0.0, ("q",))
        dh = t.mean_sigma("demand", 30.0, ("h",)) - t.mean_sigma("demand", 0.0, ("h",))
        assert dq > 3 * dh > 0

    def test_single_point_matches_pse(self, three_node, three_scenario):
        grid = {"demand": {"values": [20.0], "fixed": {"roughness": 20.0, "noise": 1.0}}}
        t = source_impact_sweep(three_node, three_scenario, grid)
        (res,) = run_algorithm1(three_node, three_scenario)
        for lab, s in t.sigmas("demand", 20.0).items():
            assert s == pytest.approx(res.std(lab), rel=1e-12, abs=1e-15)

    def test_csv(self, three_node, three_scenario):
        t = source_impact_sweep(three_node, three_scenario, {"noise": {"values": [1.0]}})
        lines = t.to_csv().splitlines()
        assert lines[0] == "source,me_percent,state,sigma" and len(lines) == 1 + three_node.n_x

    def test_unknown_source(self, three_node, three_scenario):
        with pytest.raises(ValueError):
            source_impact_sweep(three_node, three_scenario, {"leak": {"values": [1.0]}})
