import math

import numpy as np
import pytest

from estfuse.combiner import Rule
from estfuse.errors import InvalidMomentsError
from estfuse.simgauss import (GaussianScenario, bias_threshold, check_bound, check_consistency,
                              check_unbounded_bias, draw_panel, make_mu_grid,
                              run_grid, run_scenario, scenario_for_shape, simulate_draws,
                              stratified_subsample, table2_grid)
from estfuse.baselines import BaselineConfig

SMALL = dict(reps=300, mu_grid=make_mu_grid(0.3, 0.05))


def test_mu_grid_lengths():
    assert len(make_mu_grid(1.5, 0.01)) == 151
    assert len(make_mu_grid(1.5, 0.002)) == 751
    assert make_mu_grid(1.5, 0.002)[-1] == 1.5


class TestScenario:
    def test_rejects_corr_with_zero_var_b(self):
        with pytest.raises(InvalidMomentsError):
            GaussianScenario(100, 1.0, 0.0, 0.5)

    def test_rejects_perfectly_aligned(self):
        with pytest.raises(InvalidMomentsError):
            GaussianScenario(100, 1.0, 1.0, 1.0)

    def test_rejects_small_n(self):
        with pytest.raises(InvalidMomentsError):
            GaussianScenario(1, 1.0, 1.0, 0.0)

    def test_population_moments(self):
        m = GaussianScenario(100, 4.0, 1.0, 0.5).moments
        assert (m.var_u, m.var_b, m.cov_bu) == pytest.approx((0.04, 0.01, 0.01))


class TestDrawPanel:
    def test_replay(self):
        scn = GaussianScenario(50, 1.0, 2.0, 0.3)
        a, pa = draw_panel(scn, 0.1, 7)
        b, pb = draw_panel(scn, 0.1, 7)
        assert a == b and np.array_equal(pa.phi_u, pb.phi_u)

    def test_zero_var_b(self):
        scn = GaussianScenario(50, 1.0, 0.0, 0.0, theta_0=1.0)
        d, panel = draw_panel(scn, 0.25, 0)
        assert d.theta_b == 1.25
        assert np.all(panel.phi_b == 0)

    def test_bias_only_shifts_theta_b(self):
        scn = GaussianScenario(50, 1.0, 1.0, 0.0)
        a, _ = draw_panel(scn, 0.0, 3)
        b, _ = draw_panel(scn, 0.5, 3)
        assert b.theta_u == a.theta_u
        assert b.theta_b - a.theta_b == pytest.approx(0.5)
        assert b.moments == a.moments

    def test_matches_bulk_draws(self):
        scn = GaussianScenario(40, 2.0, 1.0, -0.25, reps=70)
        bulk = simulate_draws(scn)
        for rep in (0, 63, 64, 69):
            d, _ = draw_panel(scn, 0.0, rep)
            assert d.theta_u - scn.theta_0 == pytest.approx(bulk.err_u[rep], abs=1e-15)
            assert d.moments.var_u == pytest.approx(bulk.var_u[rep], rel=1e-12)

    def test_correlation_construction(self):
        scn = GaussianScenario(20_000, 1.0, 4.0, 0.5)
        _, panel = draw_panel(scn, 0.0, 0)
        c = np.corrcoef(panel.phi_u, panel.phi_b)[0, 1]
        assert c == pytest.approx(0.5, abs=0.03)
        assert panel.phi_b.var() == pytest.approx(4.0, rel=0.05)


def test_draws_independent_of_workers():
    scn = GaussianScenario(30, 1.0, 1.0, 0.2, reps=200)
    a = simulate_draws(scn, workers=1)
    b = simulate_draws(scn, workers=3)
    for f in ("err_u", "err_b", "var_u", "var_b", "cov_bu"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_known_moments_mode():
    scn = GaussianScenario(30, 1.0, 2.0, 0.2, reps=10, known_moments=True)
    d = simulate_draws(scn)
    assert np.all(d.var_u == scn.moments.var_u)


class TestRunScenario:
    def test_unbiased_rule_is_exactly_one(self):
        scn = GaussianScenario(100, 1.0, 1.0, 0.0, **SMALL)
        res = run_scenario(scn, (Rule.UNBIASED, Rule.CORE))
        assert all(p.relative_mse == 1.0 for p in res.points if p.estimator is Rule.UNBIASED)

    def test_row_count_and_order(self):
        scn = GaussianScenario(100, 1.0, 1.0, 0.0, **SMALL)
        rules = (Rule.CORE, Rule.SHRINKAGE_CLIPPED)
        res = run_scenario(scn, rules)
        assert len(res.points) == len(scn.mu_grid) * 2
        assert [p.estimator for p in res.points[:2]] == list(rules)
        assert [p.mu for p in res.points[::2]] == list(scn.mu_grid)

    def test_summary_invariants(self):
        scn = GaussianScenario(100, 1.0, 1.0, 0.0, **SMALL)
        s = run_scenario(scn).summary
        for r in s.rules:
            assert s.best_rel_mse[r] <= s.worst_rel_mse[r]
            assert s.bias_threshold[r] in set(scn.mu_grid) | {0.0}
        assert s.excluded == 0

    def test_mc_se(self):
        scn = GaussianScenario(100, 1.0, 1.0, 0.0, **SMALL)
        res = run_scenario(scn, (Rule.CORE,))
        assert all(p.mc_se > 0 and p.mse >= 0 for p in res.points)

    def test_known_moments_variance_scaling(self):
        base = GaussianScenario(500, 1.0, 1.0, 0.0, reps=2000, mu_grid=(0.0,), known_moments=True)
        a = run_scenario(base, (Rule.UNBIASED,)).points[0]
        b = run_scenario(base.replace(n=1000), (Rule.UNBIASED,)).points[0]
        assert abs(b.mse - a.mse / 2) <= 3 * math.hypot(b.mc_se, a.mc_se / 2)

    def test_biased_rule_grows(self):
        scn = GaussianScenario(100, 1.0, 1.0, 0.0, reps=200, mu_grid=(0.0, 1.0, 2.0))
        rel = [p.relative_mse for p in run_scenario(scn, (Rule.BIASED,)).points]
        assert rel[0] < rel[1] < rel[2]
        assert rel[2] / rel[1] == pytest.approx(4.0, rel=0.05)

    def test_every_rule_runs(self):
        scn = GaussianScenario(100, 1.0, 1.0, 0.0, **SMALL)
        res = run_scenario(scn, tuple(Rule))
        assert len(res.points) == len(scn.mu_grid) * len(Rule)


class TestBiasThreshold:
    mu = (0.0, 0.1, 0.2, 0.3, 0.4)

    def test_first_crossing(self):
        assert bias_threshold(self.mu, [0.5, 0.9, 1.1, 0.9, 0.8]) == 0.1
        assert bias_threshold(self.mu, [0.5, 0.9, 1.1, 0.9, 0.8], "last") == 0.4

    def test_never_below(self):
        assert bias_threshold(self.mu, [1.0, 1.1, 1.2, 1.3, 1.0]) == 0.0

    def test_always_below(self):
        assert bias_threshold(self.mu, [0.5] * 5) == 0.4


class TestGrid:
    def test_table2_grid_skips_invalid(self):
        valid, skipped = table2_grid(reps=100)
        assert len(valid) + len(skipped) == 4 * 5 * 6 * 5
        assert len(skipped) == 4 * 5 * 4
        assert all(p["var_psi_b"] == 0 and p["corr"] != 0 for p, _ in skipped)

    def test_stratified_subsample(self):
        valid, _ = table2_grid(reps=100)
        sub = stratified_subsample(valid, 60)
        assert len(sub) == 60
        assert len({s.scenario_id for s in sub}) == 60
        assert {s.n for s in sub} == {500, 1000, 2000, 4000}
        assert {s.corr for s in sub} == {-0.5, -0.25, 0.0, 0.25, 0.5}
        assert {s.var_psi_b for s in sub} == {0.0, 1.0, 2.0, 4.0, 8.0, 16.0}
        assert sub == stratified_subsample(valid, 60)

    def test_run_grid_isolates_failures(self):
        good = GaussianScenario(50, 1.0, 1.0, 0.0, reps=50, mu_grid=(0.0, 0.1))
        bad = good.replace(n=60)
        object.__setattr__(bad, "reps", 0)  # breaks the run, not construction
        summaries, errors = run_grid([good, bad], (Rule.CORE,), BaselineConfig())
        assert len(summaries) == 1 and len(errors) == 1
        assert errors[0][0] == bad.scenario_id


class TestChecks:
    def test_consistency_single_point(self):
        base = GaussianScenario(100, 1.0, 1.0, 0.0, reps=200)
        rep = check_consistency(base, 0.5, [100])
        assert rep.lambda_decreasing is None and rep.bias_shrinks is None

    @pytest.mark.slow
    def test_lambda_does_not_vanish_without_bias(self):
        base = GaussianScenario(1000, 1.0, 1.0, 0.0, reps=2000)
        rep = check_consistency(base, 0.0, [500, 2000, 8000])
        assert all(m > 0.25 for m in rep.median_lambda)

    def test_unbounded_bias_precondition(self):
        scn = GaussianScenario(100, 1.0, 1.0, 0.0, reps=100)
        with pytest.raises(ValueError):
            check_unbounded_bias(scn, [0.0, 0.5])
        with pytest.raises(ValueError):
            check_unbounded_bias(scn, [3.0, 0.0])

    def test_unbounded_bias_start_below_one(self):
        scn = GaussianScenario(1000, 1.0, 1.0, 0.0, reps=1000)
        rep = check_unbounded_bias(scn, [0.0, 50 / math.sqrt(1000)])
        assert rep.relative_mse[0] < 1
        assert rep.relative_mse_biased[-1] > 100

    def test_bound_zero_var_b(self):
        scn = scenario_for_shape(0.0, 0.0, n=500, reps=500)
        rep = check_bound(scn, (0.0, 0.05, 0.1, 0.2), with_unknown_var=False)
        assert rep.bound == pytest.approx(2.25 * scn.moments.var_u)
        assert rep.ok

    def test_shape_round_trip(self):
        scn = scenario_for_shape(-0.5, 2.0, n=400)
        assert scn.shape.c == pytest.approx(2.0)
        assert scn.shape.rho == pytest.approx(-0.5)
