import math

import numpy as np
import pytest

from estfuse.errors import PositivityError
from estfuse.simsprint import (FIGURE_GAMMAS, TABLE_GAMMAS, Dataset, SprintModel,
                               crossover_gamma, ipw_ate, ipw_from_counts, run_gamma_sweep,
                               simulate_observational, simulate_trial)


def data(t, y, u=None):
    t = np.asarray(t, dtype=np.int8)
    return Dataset(np.zeros_like(t) if u is None else np.asarray(u), t, np.asarray(y, dtype=np.int8))


class TestModel:
    def test_effect(self):
        assert SprintModel().theta_0 == pytest.approx(-0.01644, abs=1e-5)
        assert SprintModel().theta_0 == pytest.approx(0.28 * (0.081 - 0.096) + 0.72 * (0.040 - 0.057))

    def test_treatment_probabilities(self):
        m = SprintModel(gamma=2.0)
        p1, p0 = float(m.p_treat_obs(1)), float(m.p_treat_obs(0))
        assert p1 == pytest.approx(0.7310585786, abs=1e-9)
        assert p0 == pytest.approx(0.2689414214, abs=1e-9)
        assert (p1 / (1 - p1)) / (p0 / (1 - p0)) == pytest.approx(math.exp(2.0))
        assert m.big_gamma == pytest.approx(math.exp(2.0))

    def test_no_confounding(self):
        m = SprintModel(gamma=0.0)
        assert float(m.p_treat_obs(1)) == float(m.p_treat_obs(0)) == 0.5
        assert m.observational_limit() == pytest.approx(m.theta_0, abs=1e-15)

    def test_validation(self):
        with pytest.raises(ValueError):
            SprintModel(p_u=1.0)
        with pytest.raises(ValueError):
            SprintModel(n_exp=1)

    def test_grids(self):
        assert len(TABLE_GAMMAS) == 41 and TABLE_GAMMAS[-1] == 2.0
        assert len(FIGURE_GAMMAS) == 20 and FIGURE_GAMMAS[0] == 0.0 and FIGURE_GAMMAS[-1] == 2.0


class TestUnitLevel:
    def test_trial_balance(self):
        d = simulate_trial(SprintModel(), seed=0, rep=0)
        assert len(d) == 9361
        assert abs(d.t.mean() - 0.5) <= 3 / math.sqrt(9361)

    def test_trial_ignores_gamma(self):
        a = simulate_trial(SprintModel(gamma=0.0), 0, 5)
        b = simulate_trial(SprintModel(gamma=2.0), 0, 5)
        assert np.array_equal(a.t, b.t) and np.array_equal(a.y, b.y)

    def test_replay(self):
        m = SprintModel(gamma=1.0, n_obs=5000)
        a = simulate_observational(m, 3, 1)
        b = simulate_observational(m, 3, 1)
        assert np.array_equal(a.y, b.y)

    def test_stratum_odds_ratio_within_rosenbaum_bound(self):
        m = SprintModel(gamma=1.0, n_obs=100_000)
        d = simulate_observational(m, 0, 0)
        p1 = d.t[d.u == 1].mean()
        p0 = d.t[d.u == 0].mean()
        ratio = (p1 / (1 - p1)) / (p0 / (1 - p0))
        assert ratio == pytest.approx(math.e, rel=0.05)
        assert 1 / m.big_gamma * 0.95 <= ratio <= m.big_gamma * 1.05

    def test_ipw_all_zero(self):
        assert ipw_ate(data([1, 0, 1, 0], [0, 0, 0, 0])) == (0.0, 0.0)

    def test_ipw_two_units(self):
        theta, var = ipw_ate(data([1, 0], [1, 0]))
        assert theta == pytest.approx(1.0) and var == pytest.approx(0.0)

    def test_ipw_empty_arm(self):
        with pytest.raises(PositivityError):
            ipw_ate(data([1, 1, 1], [0, 1, 0]))

    def test_counts_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            t = rng.integers(0, 2, 500)
            y = rng.integers(0, 2, 500)
            theta, var = ipw_ate(data(t, y))
            n1, n0 = t.sum(), (1 - t).sum()
            th2, v2 = ipw_from_counts(n1, y[t == 1].sum(), n0, y[t == 0].sum())
            assert th2 == pytest.approx(theta, abs=1e-14)
            assert v2 == pytest.approx(var, rel=1e-10)

    def test_counts_empty_arm_is_nan(self):
        theta, _ = ipw_from_counts(0, 0, 10, 3)
        assert math.isnan(theta)

    @pytest.mark.slow
    def test_observational_unbiased_without_confounding(self):
        m = SprintModel(gamma=0.0, n_obs=100_000)
        res = run_gamma_sweep(m, (0.0,), (100_000,), reps=10_000, seed=2, n_boot=10)
        assert abs(res[0].bias_b) <= 3 * res[0].bias_b_se


@pytest.fixture(scope="module")
def sweep():
    return run_gamma_sweep(gammas=TABLE_GAMMAS, n_obs_set=(10_000, 100_000), reps=400,
                           seed=1, n_boot=200)


class TestSweep:
    def test_shape(self, sweep):
        assert len(sweep) == 2 * 41
        assert [r.n_obs for r in sweep[:41]] == [10_000] * 41

    def test_invariants(self, sweep):
        for r in sweep:
            assert r.big_gamma == pytest.approx(math.exp(r.gamma))
            assert r.ci_low_unbiased <= r.rmse_unbiased <= r.ci_high_unbiased
            assert r.ci_low_combined <= r.rmse_combined <= r.ci_high_combined
            assert r.excluded == 0

    def test_unbiased_rmse_constant_in_gamma(self, sweep):
        assert len({r.rmse_unbiased for r in sweep}) == 1

    def test_bias_monotone(self, sweep):
        for n in (10_000, 100_000):
            rows = [r for r in sweep if r.n_obs == n]
            for a, b in zip(rows, rows[1:]):
                assert abs(b.bias_b) >= abs(a.bias_b) - 3 * math.hypot(a.bias_b_se, b.bias_b_se)

    def test_bias_tracks_population_limit(self, sweep):
        m = SprintModel()
        for r in sweep:
            lim = m.replace(gamma=r.gamma).observational_limit() - m.theta_0
            assert abs(r.bias_b - lim) <= 4 * r.bias_b_se + 1e-4

    def test_subset_replays(self, sweep):
        sub = run_gamma_sweep(gammas=TABLE_GAMMAS, n_obs_set=(100_000,), reps=400, seed=1,
                              n_boot=200)
        assert [r.rmse_combined for r in sub] == [r.rmse_combined for r in sweep[41:]]

    def test_crossover_convention(self, sweep):
        g = crossover_gamma(sweep, 10_000)
        rows = [r for r in sweep if r.n_obs == 10_000]
        for r in rows:
            if r.gamma <= g:
                assert r.rmse_combined < r.rmse_unbiased
        nxt = [r for r in rows if r.gamma > g][0]
        assert nxt.rmse_combined >= nxt.rmse_unbiased

    def test_workers(self):
        a = run_gamma_sweep(gammas=(0.0, 1.0), reps=200, n_boot=20, workers=1)
        b = run_gamma_sweep(gammas=(0.0, 1.0), reps=200, n_boot=20, workers=2)
        assert a == b

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            run_gamma_sweep(gammas=(), reps=10)
