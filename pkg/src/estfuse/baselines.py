"""Published alternative combination rules, adapted to correlated estimators.

* shrinkage: weight ``(vu - cbu) / (theta_u - theta_b)**2``, optionally clipped to [0, 1]
* hypothesis test: pool when a chi-square(1) test of zero bias does not reject
* adaptive hypothesis test: significance level looked up from a simulated table
* anchored thresholding: soft-threshold bias correction, then inverse-variance weighting
* n**-beta variant: the core weight with the squared difference scaled by ``n**-beta``

Each rule has a scalar form over :class:`EstimatorDraw` and an array form
used by the simulation engines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .combiner import (DENOM_FLOOR, CombinedEstimate, EstimatorDraw, Rule,
                       blend_array, combine)
from .errors import ConfigError, DegenerateInputError

DEFAULT_GAMMA_GRID = tuple(round(0.05 * k, 2) for k in range(21))


@dataclass(frozen=True)
class BaselineConfig:
    shrinkage_clip: bool = True
    anchored_lambda1: float = 0.5
    cheng_beta: float = 0.5
    test_gamma_grid: tuple[float, ...] = DEFAULT_GAMMA_GRID
    test_mu_grid: tuple[float, ...] | None = None
    test_pool_weights: tuple[int, int] = (1, 1)

    def __post_init__(self):
        g = self.test_gamma_grid
        if not g or any(not 0.0 <= x <= 1.0 for x in g) or list(g) != sorted(g):
            raise ConfigError("test_gamma_grid must be sorted values in [0, 1]",
                              key="test_gamma_grid")
        if not self.anchored_lambda1 > 0:
            raise ConfigError("anchored_lambda1 must be > 0", key="anchored_lambda1")
        if not self.cheng_beta > 0:
            raise ConfigError("cheng_beta must be > 0", key="cheng_beta")
        if min(self.test_pool_weights) < 0 or sum(self.test_pool_weights) <= 0:
            raise ConfigError("test_pool_weights must be nonnegative sample sizes",
                              key="test_pool_weights")

    @property
    def pool_lambda(self) -> float:
        """Weight on theta_b in the sample-size-weighted pooled average."""
        n_u, n_b = self.test_pool_weights
        return n_b / (n_u + n_b)


def chi2_cutoff(gamma):
    """Upper-``gamma`` quantile of chi-square(1); ``inf`` at 0 and ``0`` at 1."""
    return stats.chi2.isf(gamma, 1)


def _require_var_diff(d: EstimatorDraw) -> float:
    v = d.moments.var_diff
    if not v > DENOM_FLOOR:
        raise DegenerateInputError(f"variance of theta_u - theta_b is {v}")
    return v


# -- shrinkage ---------------------------------------------------------------

def shrinkage_weight_array(diff, var_u, cov_bu, clip: bool):
    diff = np.asarray(diff, dtype=float)
    num = var_u - cov_bu
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = num / (diff * diff)
    if clip:
        # A zero difference gives +-inf (or nan for 0/0) before clipping.
        lam = np.where(np.isnan(lam), 0.0, lam)
        lam = np.clip(lam, 0.0, 1.0)
    return lam


def shrinkage(d: EstimatorDraw, clip: bool) -> CombinedEstimate:
    """Shrinkage weight built from the squared observed difference.

    With ``clip=False`` a zero difference is an error. With ``clip=True`` the
    unbounded raw weight clips to 1 (or to 0 when ``vu - cbu <= 0``).
    """
    rule = Rule.SHRINKAGE_CLIPPED if clip else Rule.SHRINKAGE_UNCLIPPED
    if d.diff == 0 and not clip:
        raise DegenerateInputError("unclipped shrinkage weight undefined when theta_u == theta_b")
    lam = float(shrinkage_weight_array(d.diff, d.moments.var_u, d.moments.cov_bu, clip))
    return combine(d, lam, rule)


# -- hypothesis testing ------------------------------------------------------

def chi2_statistic_array(diff, var_diff):
    diff = np.asarray(diff, dtype=float)
    return diff * diff / var_diff


def hypothesis_test_array(theta_u, theta_b, var_diff, cutoff, pool_lambda: float = 0.5):
    """Theta of the test-then-pool rule; ``cutoff`` may broadcast per element."""
    t_stat = chi2_statistic_array(np.asarray(theta_u) - np.asarray(theta_b), var_diff)
    reject = t_stat >= cutoff
    pooled = blend_array(theta_u, theta_b, pool_lambda)
    return np.where(reject, theta_u, pooled), np.where(reject, 0.0, pool_lambda)


def hypothesis_test_combine(d: EstimatorDraw, gamma: float,
                            pool_weights: tuple[int, int] = (1, 1)) -> CombinedEstimate:
    """Use ``theta_u`` alone if the zero-bias test rejects at level ``gamma``, else pool."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    var_diff = _require_var_diff(d)
    n_u, n_b = pool_weights
    t_stat = d.diff ** 2 / var_diff
    if t_stat >= chi2_cutoff(gamma):
        return combine(d, 0.0, Rule.HYPOTHESIS_TEST)
    return combine(d, n_b / (n_u + n_b), Rule.HYPOTHESIS_TEST)


@dataclass(frozen=True)
class CutoffTable:
    """Bias value -> significance level minimizing the simulated MSE."""

    scenario_id: str
    mu_keys: tuple[float, ...]
    gammas: tuple[float, ...]
    gamma_grid: tuple[float, ...] = DEFAULT_GAMMA_GRID
    mse: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if len(self.mu_keys) != len(self.gammas):
            raise ValueError("mu_keys and gammas differ in length")
        if list(self.mu_keys) != sorted(self.mu_keys):
            raise ValueError("mu_keys must be sorted")
        grid = set(self.gamma_grid)
        if any(g not in grid for g in self.gammas):
            raise ValueError("every stored gamma must belong to the gamma grid")

    def __len__(self) -> int:
        return len(self.mu_keys)

    def key_index(self, bias_estimate):
        """Nearest key index; exact ties go to the smaller key, outside values clamp."""
        if not self.mu_keys:
            raise ConfigError("cutoff table is empty", key="cutoff_table")
        keys = np.asarray(self.mu_keys, dtype=float)
        b = np.asarray(bias_estimate, dtype=float)
        hi = np.clip(np.searchsorted(keys, b, side="left"), 0, len(keys) - 1)
        lo = np.clip(hi - 1, 0, len(keys) - 1)
        d_lo = np.abs(b - keys[lo])
        d_hi = np.abs(keys[hi] - b)
        tol = 1e-9 * max(float(keys[-1] - keys[0]), 1.0)
        idx = np.where(d_lo <= d_hi + tol, lo, hi)
        return idx if idx.ndim else int(idx)

    def lookup(self, bias_estimate):
        gam = np.asarray(self.gammas, dtype=float)[self.key_index(bias_estimate)]
        return gam if np.ndim(gam) else float(gam)


def build_cutoff_table(scenario, cfg: BaselineConfig | None = None, reps: int | None = None,
                       seed: int | None = None, workers: int = 1) -> CutoffTable:
    """Simulate the test-then-pool rule on every (bias, gamma) pair and keep the best gamma per bias.

    ``scenario`` is a :class:`estfuse.simgauss.GaussianScenario`; its own mu
    grid is used unless ``cfg.test_mu_grid`` is set. The draws come from a
    generator stream separate from the one used to evaluate the rules.
    """
    from . import simgauss

    cfg = cfg or BaselineConfig()
    if reps is not None:
        if reps < 1000:
            raise ValueError(f"cutoff tables need reps >= 1000, got {reps}")
        scenario = scenario.replace(reps=reps)
    if seed is not None:
        scenario = scenario.replace(seed=seed)
    mu_grid = cfg.test_mu_grid if cfg.test_mu_grid is not None else scenario.mu_grid
    draws = simgauss.simulate_draws(scenario, stream=simgauss.STREAM_CUTOFF, workers=workers)
    mse = cutoff_mse(draws, mu_grid, cfg.test_gamma_grid, cfg.pool_lambda)
    best = np.argmin(mse, axis=1)  # first minimum = smallest gamma
    gammas = tuple(float(cfg.test_gamma_grid[i]) for i in best)
    return CutoffTable(scenario_id=scenario.scenario_id, mu_keys=tuple(float(x) for x in mu_grid),
                       gammas=gammas, gamma_grid=tuple(cfg.test_gamma_grid), mse=mse)


def cutoff_mse(draws, mu_grid, gamma_grid, pool_lambda: float) -> np.ndarray:
    """MSE of the test-then-pool rule, shape ``(len(mu_grid), len(gamma_grid))``."""
    mu = np.asarray(mu_grid, dtype=float)[None, :]
    keep = draws.valid
    eu = draws.err_u[keep][:, None]
    eb = draws.err_b[keep][:, None] + mu
    var_diff = draws.var_diff[keep][:, None]
    t_stat = (eu - eb) ** 2 / var_diff
    pooled = eu + pool_lambda * (eb - eu)
    out = np.empty((mu.shape[1], len(gamma_grid)))
    for j, g in enumerate(gamma_grid):
        err = np.where(t_stat >= chi2_cutoff(g), eu, pooled)
        out[:, j] = np.ascontiguousarray((err * err).T).mean(axis=1)
    return out


def adaptive_hypothesis_test(d: EstimatorDraw, table: CutoffTable,
                             pool_weights: tuple[int, int] = (1, 1)) -> CombinedEstimate:
    """Test-then-pool at the significance level stored for the nearest bias key."""
    if len(table) == 0:
        raise ConfigError("cutoff table is empty", key="cutoff_table")
    gamma = table.lookup(abs(d.diff))
    return hypothesis_test_combine(d, gamma, pool_weights)


def adaptive_hypothesis_test_array(theta_u, theta_b, var_diff, table: CutoffTable,
                                   pool_lambda: float = 0.5):
    if len(table) == 0:
        raise ConfigError("cutoff table is empty", key="cutoff_table")
    gamma = table.lookup(np.abs(np.asarray(theta_u) - np.asarray(theta_b)))
    return hypothesis_test_array(theta_u, theta_b, var_diff, chi2_cutoff(gamma), pool_lambda)


# -- anchored thresholding ---------------------------------------------------

def soft_threshold(x, thr):
    """``sign(x) * (|x| - thr)`` when ``|x| >= thr``, else 0."""
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)
    return out if out.ndim else float(out)


def anchored_threshold_array(theta_u, theta_b, var_u, var_b, cov_bu, lambda1: float, n):
    var_diff = var_u + var_b - 2.0 * cov_bu
    thr = lambda1 * np.sqrt(np.log(n)) * np.sqrt(var_diff)
    mu_hat = soft_threshold(np.asarray(theta_b) - np.asarray(theta_u), thr)
    w = (var_u - cov_bu) / var_diff
    return w * (theta_b - mu_hat) + (1.0 - w) * theta_u, w


def anchored_threshold(d: EstimatorDraw, lambda1: float = 0.5, n: int | None = None) -> CombinedEstimate:
    """Bias-correct ``theta_b`` by soft thresholding, then inverse-variance weight.

    The threshold is ``lambda1 * sqrt(log n)`` standard deviations of the
    difference. The returned ``lam`` is the inverse-variance weight applied
    to the corrected ``theta_b``, so ``theta`` is not ``combine(d, lam)``.
    """
    n = d.n if n is None else n
    if n < 2:
        raise ValueError(f"anchored thresholding needs n >= 2, got {n}")
    _require_var_diff(d)
    m = d.moments
    theta, w = anchored_threshold_array(d.theta_u, d.theta_b, m.var_u, m.var_b, m.cov_bu,
                                        lambda1, n)
    return CombinedEstimate(lam=float(w), theta=float(theta), rule=Rule.ANCHORED_THRESHOLD)


# -- n**-beta scaled weight --------------------------------------------------

def cheng_weight_array(diff, var_u, var_b, cov_bu, n, beta: float):
    diff = np.asarray(diff, dtype=float)
    return (var_u - cov_bu) / (np.power(float(n), -beta) * diff * diff
                               + (var_u + var_b - 2.0 * cov_bu))


def cheng_variant(d: EstimatorDraw, beta: float = 0.5) -> CombinedEstimate:
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    _require_var_diff(d)
    m = d.moments
    lam = float(cheng_weight_array(d.diff, m.var_u, m.var_b, m.cov_bu, d.n, beta))
    if not math.isfinite(lam):
        raise DegenerateInputError("n**-beta weight is not finite")
    return combine(d, lam, Rule.CHENG)
