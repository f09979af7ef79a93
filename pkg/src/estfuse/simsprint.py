"""Trial-calibrated simulation with an unobserved binary confounder.

A randomized trial (``n_exp`` units, treatment independent of ``U``) and a
larger observational sample (treatment log-odds ``gamma * (U - 1/2)``) share
one outcome model. Both effect estimates are IPW differences in means with
empirical treatment probabilities; the combined estimate uses the
covariance-free plug-in weight because the two samples are disjoint.

The sweep works on cell counts rather than unit-level records: each
estimate and its plug-in variance depend on the data only through the
treated/control counts and outcome sums. Counts are generated by sequential
binomials (``U`` total, treated within each ``U`` stratum, outcomes within
each cell) via inverse-CDF transforms of per-replication uniforms, so one
replication's draws are monotonically coupled across the ``gamma`` grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace as dc_replace

import numpy as np
from scipy import stats
from scipy.special import expit

from . import rng
from .combiner import DENOM_FLOOR
from .errors import PositivityError
from .moments import ipw_influence
from .parallel import pmap

THETA_0_REPORTED = -0.01644

STREAM_TRIAL = 0
STREAM_OBS = 1
STREAM_BOOT = 1000
BLOCK = 512

TABLE_GAMMAS = tuple(round(0.05 * k, 2) for k in range(41))
FIGURE_GAMMAS = tuple(float(x) for x in np.linspace(0.0, 2.0, 20))
N_OBS_ALL = (10_000, 20_000, 50_000, 100_000)


@dataclass(frozen=True)
class SprintModel:
    p_u: float = 0.28
    p_y1_u1: float = 0.081
    p_y1_u0: float = 0.040
    p_y0_u1: float = 0.096
    p_y0_u0: float = 0.057
    e_exp: float = 0.5
    gamma: float = 0.0
    n_exp: int = 9361
    n_obs: int = 100_000

    def __post_init__(self):
        for name in ("p_u", "p_y1_u1", "p_y1_u0", "p_y0_u1", "p_y0_u0", "e_exp"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.n_exp < 2 or self.n_obs < 2:
            raise ValueError("n_exp and n_obs must be >= 2")
        if not math.isfinite(self.gamma):
            raise ValueError("gamma must be finite")

    def replace(self, **changes) -> "SprintModel":
        return dc_replace(self, **changes)

    @property
    def theta_0(self) -> float:
        return (self.p_u * (self.p_y1_u1 - self.p_y0_u1)
                + (1.0 - self.p_u) * (self.p_y1_u0 - self.p_y0_u0))

    @property
    def big_gamma(self) -> float:
        return math.exp(self.gamma)

    def p_treat_obs(self, u):
        """Observational treatment probability given ``U``."""
        return expit(self.gamma * (np.asarray(u, dtype=float) - 0.5))

    def p_outcome(self, t, u):
        t = np.asarray(t)
        u = np.asarray(u)
        return np.where(t == 1, np.where(u == 1, self.p_y1_u1, self.p_y1_u0),
                        np.where(u == 1, self.p_y0_u1, self.p_y0_u0))

    @property
    def outcome_key(self) -> int:
        return rng.stable_hash("sprint", self.p_u, self.p_y1_u1, self.p_y1_u0,
                               self.p_y0_u1, self.p_y0_u0)

    def observational_limit(self) -> float:
        """Large-sample limit of the observational IPW estimate at this ``gamma``."""
        e1 = float(self.p_treat_obs(1))
        e0 = float(self.p_treat_obs(0))
        p_t1 = self.p_u * e1 + (1 - self.p_u) * e0
        ey1 = (self.p_u * e1 * self.p_y1_u1 + (1 - self.p_u) * e0 * self.p_y1_u0) / p_t1
        ey0 = (self.p_u * (1 - e1) * self.p_y0_u1
               + (1 - self.p_u) * (1 - e0) * self.p_y0_u0) / (1 - p_t1)
        return ey1 - ey0


@dataclass(frozen=True)
class Dataset:
    """Unit-level records. ``u`` is kept for diagnostics; estimators never read it."""

    u: np.ndarray
    t: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return int(self.t.size)


def _simulate_units(model: SprintModel, n: int, p_treat, bitgen) -> Dataset:
    draws = rng.uniforms(bitgen, (3, n))
    u = (draws[0] < model.p_u).astype(np.int8)
    t = (draws[1] < p_treat(u)).astype(np.int8)
    y = (draws[2] < model.p_outcome(t, u)).astype(np.int8)
    return Dataset(u, t, y)


def simulate_trial(model: SprintModel, seed: int, rep: int) -> Dataset:
    bg = rng.stream(seed, model.outcome_key ^ 0x7472, rep, STREAM_TRIAL)
    return _simulate_units(model, model.n_exp, lambda u: np.full(u.shape, model.e_exp), bg)


def simulate_observational(model: SprintModel, seed: int, rep: int) -> Dataset:
    key = rng.stable_hash("obs-units", model.outcome_key, float(model.gamma), model.n_obs)
    bg = rng.stream(seed, key, rep, STREAM_OBS)
    return _simulate_units(model, model.n_obs, model.p_treat_obs, bg)


def ipw_ate(data: Dataset) -> tuple[float, float]:
    """IPW effect estimate with empirical treatment probability, and its plug-in variance."""
    t = data.t.astype(float)
    y = data.y.astype(float)
    n = t.size
    n1 = int(t.sum())
    if n1 == 0 or n1 == n:
        raise PositivityError("a treatment arm is empty")
    e_hat = n1 / n
    theta = float(np.mean(y * (t / e_hat - (1.0 - t) / (1.0 - e_hat))))
    mu1 = float(y[t == 1].mean())
    mu0 = float(y[t == 0].mean())
    infl = ipw_influence(y, t, e_hat, mu1, mu0, theta)
    return theta, float(np.sum(infl * infl)) / n ** 2


def ipw_from_counts(n1, s1, n0, s0):
    """Vectorized IPW estimate and plug-in variance from arm sizes and outcome sums.

    Arms of size zero give ``nan``; callers exclude those replications.
    """
    n1 = np.asarray(n1, dtype=float)
    n0 = np.asarray(n0, dtype=float)
    s1 = np.asarray(s1, dtype=float)
    s0 = np.asarray(s0, dtype=float)
    n = n1 + n0
    with np.errstate(divide="ignore", invalid="ignore"):
        m1 = s1 / n1
        m0 = s0 / n0
        e = n1 / n
        theta = m1 - m0
        var = (n1 * m1 * (1.0 - m1) / e ** 2 + n0 * m0 * (1.0 - m0) / (1.0 - e) ** 2) / n ** 2
    return theta, var


def _binom(u, n, p):
    return stats.binom.ppf(u, n, p)


def _cell_counts(model: SprintModel, n: int, e1, e0, u):
    """Arm sizes and outcome sums from seven uniforms per replication.

    ``u`` has shape ``(reps, 7)``; ``e1``/``e0`` (treatment probability in the
    ``U = 1``/``U = 0`` strata) broadcast against ``(reps, G)``.
    """
    col = [u[:, k:k + 1] for k in range(7)]
    n_u1 = _binom(col[0], n, model.p_u)
    n_u0 = n - n_u1
    t_u1 = _binom(col[1], n_u1, e1)
    t_u0 = _binom(col[2], n_u0, e0)
    y_11 = _binom(col[3], t_u1, model.p_y1_u1)
    y_01 = _binom(col[4], n_u1 - t_u1, model.p_y0_u1)
    y_10 = _binom(col[5], t_u0, model.p_y1_u0)
    y_00 = _binom(col[6], n_u0 - t_u0, model.p_y0_u0)
    n1 = t_u1 + t_u0
    return n1, y_11 + y_10, n - n1, y_01 + y_00


def _uniform_rows(args) -> np.ndarray:
    seed, key, start, stop, stream = args
    return np.stack([rng.uniforms(rng.stream(seed, key, r, stream), 7) for r in range(start, stop)])


def _uniform_block(seed: int, key: int, reps: int, stream: int, workers: int = 1) -> np.ndarray:
    """Seven uniforms per replication, one Philox stream each; shape ``(reps, 7)``."""
    chunks = [(seed, key, s, min(s + BLOCK, reps), stream) for s in range(0, reps, BLOCK)]
    return np.concatenate(pmap(_uniform_rows, chunks, workers), axis=0)


@dataclass(frozen=True)
class GammaSweepResult:
    gamma: float
    big_gamma: float
    n_obs: int
    rmse_unbiased: float
    rmse_combined: float
    ci_low_unbiased: float
    ci_high_unbiased: float
    ci_low_combined: float
    ci_high_combined: float
    bias_b: float
    bias_b_se: float
    mean_lambda: float
    excluded: int


def _bootstrap_rmse(sq: np.ndarray, idx: np.ndarray) -> tuple[float, float]:
    rm = np.sqrt(sq[idx].mean(axis=1))
    lo, hi = np.percentile(rm, [2.5, 97.5])
    return float(lo), float(hi)


def run_gamma_sweep(model: SprintModel | None = None, gammas=FIGURE_GAMMAS,
                    n_obs_set=(10_000, 100_000), reps: int = 2000, seed: int = 0,
                    n_boot: int = 1000, workers: int = 1) -> list[GammaSweepResult]:
    """RMSE of the trial estimate and of the combined estimate over a confounding grid.

    Results are ordered by ``n_obs`` then ``gamma``. ``workers`` only spreads
    random number generation; every output is independent of it.
    """
    model = model or SprintModel()
    gammas = np.asarray([float(g) for g in gammas])
    if gammas.size == 0 or len(n_obs_set) == 0:
        raise ValueError("gamma grid and n_obs set must be nonempty")
    theta_0 = model.theta_0

    u_trial = _uniform_block(seed, model.outcome_key, reps, STREAM_TRIAL, workers)
    e = np.array([[model.e_exp]])
    n1, s1, n0, s0 = _cell_counts(model, model.n_exp, e, e, u_trial)
    th_u, var_u = (a[:, 0] for a in ipw_from_counts(n1, s1, n0, s0))
    ok_u = (n1[:, 0] > 0) & (n0[:, 0] > 0) & (var_u > 0)

    boot_u = rng.uniforms(rng.stream(seed, model.outcome_key, 0, STREAM_BOOT), (n_boot, reps))

    e1 = expit(gammas * 0.5)[None, :]
    e0 = expit(-gammas * 0.5)[None, :]
    out: list[GammaSweepResult] = []
    for n_obs in n_obs_set:
        # Keyed by the sample size itself, so a subset of n_obs values replays the same draws.
        u_obs = _uniform_block(seed, rng.stable_hash(model.outcome_key, int(n_obs)), reps,
                               STREAM_OBS, workers)
        m1, t1, m0, t0 = _cell_counts(model, int(n_obs), e1, e0, u_obs)
        th_b, var_b = ipw_from_counts(m1, t1, m0, t0)
        ok = ok_u[:, None] & (m1 > 0) & (m0 > 0) & np.isfinite(var_b)
        tu = th_u[:, None]
        vu = var_u[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = (tu - th_b) ** 2 + vu + var_b
            ok &= denom > DENOM_FLOOR
            lam = vu / denom
            th_c = tu + lam * (th_b - tu)
        for j, g in enumerate(gammas):
            keep = ok[:, j]
            kept = int(keep.sum())
            sq_u = (th_u[keep] - theta_0) ** 2
            sq_c = (th_c[keep, j] - theta_0) ** 2
            idx = np.minimum((boot_u * kept).astype(np.int64), kept - 1)
            lo_u, hi_u = _bootstrap_rmse(sq_u, idx)
            lo_c, hi_c = _bootstrap_rmse(sq_c, idx)
            eb = th_b[keep, j] - theta_0
            out.append(GammaSweepResult(
                gamma=float(g), big_gamma=math.exp(g), n_obs=int(n_obs),
                rmse_unbiased=float(np.sqrt(sq_u.mean())),
                rmse_combined=float(np.sqrt(sq_c.mean())),
                ci_low_unbiased=lo_u, ci_high_unbiased=hi_u,
                ci_low_combined=lo_c, ci_high_combined=hi_c,
                bias_b=float(eb.mean()), bias_b_se=float(eb.std(ddof=1) / math.sqrt(kept)),
                mean_lambda=float(lam[keep, j].mean()), excluded=reps - kept))
    return out


def crossover_gamma(results, n_obs: int) -> float | None:
    """Largest gamma before the combined RMSE first reaches the trial-only RMSE."""
    rows = sorted((r for r in results if r.n_obs == n_obs), key=lambda r: r.gamma)
    best = None
    for r in rows:
        if r.rmse_combined < r.rmse_unbiased:
            best = r.gamma
        else:
            break
    return best
