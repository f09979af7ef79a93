"""Monte Carlo study on correlated Gaussian sample means.

For every replication ``n`` pairs ``(psi_u, psi_b)`` are drawn from a
bivariate normal with mean ``(theta_0, theta_0 + mu)``; the estimators are
the two sample means and their moments are plug-in estimates from the
centered samples. One panel per replication is shared by the whole bias
grid (common random numbers): the bias only shifts ``psi_b``, so the
centered samples and the estimated moments do not depend on it.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import rng
from .parallel import pmap
from .baselines import (BaselineConfig, CutoffTable, adaptive_hypothesis_test_array,
                        anchored_threshold_array, build_cutoff_table, cheng_weight_array,
                        shrinkage_weight_array)
from .combiner import (DENOM_FLOOR, EstimatorDraw, MomentEstimates, Rule, ShapeParams,
                       lambda_hat_array, worst_case_bound, worst_case_bound_unknown_var)
from .errors import InvalidMomentsError
from .moments import InfluencePanel, estimate_moments

log = logging.getLogger(__name__)

STREAM_EVAL = 0
STREAM_CUTOFF = 1
BLOCK = 64

TABLE2 = {
    "n": (500, 1000, 2000, 4000),
    "var_psi_u": (1.0, 2.0, 4.0, 8.0, 16.0),
    "var_psi_b": (0.0, 1.0, 2.0, 4.0, 8.0, 16.0),
    "corr": (-0.5, -0.25, 0.0, 0.25, 0.5),
}

DEFAULT_RULES = (Rule.CORE, Rule.SHRINKAGE_CLIPPED, Rule.HYPOTHESIS_TEST,
                 Rule.ANCHORED_THRESHOLD)


def make_mu_grid(mu_max: float = 1.5, step: float = 0.01) -> tuple[float, ...]:
    if not step > 0 or mu_max < 0:
        raise ValueError("mu grid needs step > 0 and mu_max >= 0")
    k = int(round(mu_max / step))
    return tuple(round(i * step, 12) for i in range(k + 1))


@dataclass(frozen=True)
class GaussianScenario:
    n: int
    var_psi_u: float
    var_psi_b: float
    corr: float
    theta_0: float = 1.0
    mu_grid: tuple[float, ...] = field(default_factory=make_mu_grid)
    reps: int = 2000
    seed: int = 0
    known_moments: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mu_grid", tuple(float(x) for x in self.mu_grid))
        if self.n < 2:
            raise InvalidMomentsError(f"n must be >= 2, got {self.n}")
        if self.var_psi_u < 0 or self.var_psi_b < 0:
            raise InvalidMomentsError("variances must be >= 0")
        if self.var_psi_u == 0:
            raise InvalidMomentsError("var_psi_u must be > 0")
        if not -1.0 <= self.corr <= 1.0:
            raise InvalidMomentsError(f"corr must be in [-1, 1], got {self.corr}")
        if self.var_psi_b == 0 and self.corr != 0:
            raise InvalidMomentsError("corr must be 0 when var_psi_b is 0")
        cov = self.corr * math.sqrt(self.var_psi_u * self.var_psi_b)
        if self.var_psi_u + self.var_psi_b - 2.0 * cov <= DENOM_FLOOR:
            raise InvalidMomentsError("psi_u - psi_b has zero variance")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not self.mu_grid or list(self.mu_grid) != sorted(self.mu_grid):
            raise ValueError("mu_grid must be nonempty and sorted")

    def replace(self, **changes) -> "GaussianScenario":
        return dc_replace(self, **changes)

    @property
    def scenario_id(self) -> str:
        return (f"n{self.n}_vu{self.var_psi_u:g}_vb{self.var_psi_b:g}"
                f"_corr{self.corr:g}")

    @property
    def stream_key(self) -> int:
        return rng.stable_hash("gaussian", self.n, float(self.var_psi_u),
                               float(self.var_psi_b), float(self.corr), float(self.theta_0))

    @property
    def moments(self) -> MomentEstimates:
        """Population moments of the two sample means."""
        cov = self.corr * math.sqrt(self.var_psi_u * self.var_psi_b)
        return MomentEstimates(self.var_psi_u / self.n, self.var_psi_b / self.n, cov / self.n)

    @property
    def shape(self) -> ShapeParams:
        return ShapeParams.from_moments(self.moments)

    def as_dict(self) -> dict:
        return {"scenario_id": self.scenario_id, "n": self.n, "var_psi_u": self.var_psi_u,
                "var_psi_b": self.var_psi_b, "corr": self.corr, "theta_0": self.theta_0}


def _deviations(scn: GaussianScenario, rep: int, stream: int):
    """Zero-mean parts of ``psi_u`` and ``psi_b`` for one replication."""
    bg = rng.stream(scn.seed, scn.stream_key, rep, stream)
    z = rng.normals(bg, (2, scn.n))
    sd_u = math.sqrt(scn.var_psi_u)
    sd_b = math.sqrt(scn.var_psi_b)
    dev_u = sd_u * z[0]
    dev_b = sd_b * (scn.corr * z[0] + math.sqrt(1.0 - scn.corr ** 2) * z[1])
    return dev_u, dev_b


def draw_panel(scn: GaussianScenario, mu: float, rep_index: int,
               stream: int = STREAM_EVAL) -> tuple[EstimatorDraw, InfluencePanel]:
    """One replication at bias ``mu``: the two sample means, their moments and influence values."""
    dev_u, dev_b = _deviations(scn, rep_index, stream)
    err_u = float(np.mean(dev_u))
    err_b = float(np.mean(dev_b))
    panel = InfluencePanel(dev_u - err_u, dev_b - err_b)
    moments = scn.moments if scn.known_moments else estimate_moments(panel)
    draw = EstimatorDraw(theta_u=scn.theta_0 + err_u, theta_b=scn.theta_0 + mu + err_b,
                         moments=moments, n=scn.n)
    return draw, panel


@dataclass
class DrawSet:
    """Bias-free sampling errors and moment estimates for every replication."""

    err_u: np.ndarray
    err_b: np.ndarray
    var_u: np.ndarray
    var_b: np.ndarray
    cov_bu: np.ndarray
    valid: np.ndarray

    @property
    def var_diff(self) -> np.ndarray:
        return self.var_u + self.var_b - 2.0 * self.cov_bu

    @property
    def excluded(self) -> int:
        return int((~self.valid).sum())

    def __len__(self) -> int:
        return int(self.err_u.size)


def _draw_block(args) -> np.ndarray:
    scn, start, stop, stream = args
    out = np.empty((stop - start, 5))
    for i, rep in enumerate(range(start, stop)):
        dev_u, dev_b = _deviations(scn, rep, stream)
        eu = np.mean(dev_u)
        eb = np.mean(dev_b)
        phi_u = dev_u - eu
        phi_b = dev_b - eb
        n = scn.n
        out[i] = (eu, eb, np.mean(phi_u * phi_u) / n, np.mean(phi_b * phi_b) / n,
                  np.mean(phi_u * phi_b) / n)
    return out


def simulate_draws(scn: GaussianScenario, stream: int = STREAM_EVAL, workers: int = 1) -> DrawSet:
    blocks = [(scn, s, min(s + BLOCK, scn.reps), stream) for s in range(0, scn.reps, BLOCK)]
    arr = np.concatenate(pmap(_draw_block, blocks, workers), axis=0)
    eu, eb, vu, vb, cbu = (arr[:, j].copy() for j in range(5))
    if scn.known_moments:
        m = scn.moments
        vu = np.full_like(eu, m.var_u)
        vb = np.full_like(eu, m.var_b)
        cbu = np.full_like(eu, m.cov_bu)
    valid = (vu + vb - 2.0 * cbu > DENOM_FLOOR) & (vu > 0)
    if not valid.all():
        log.warning("%s: %d replications excluded (degenerate moments)",
                    scn.scenario_id, int((~valid).sum()))
    return DrawSet(eu, eb, vu, vb, cbu, valid)


def rule_errors(rule: Rule, draws: DrawSet, mu, n: int, cfg: BaselineConfig,
                table: CutoffTable | None = None) -> np.ndarray:
    """``theta - theta_0`` for one rule, shape ``(valid reps, len(mu))``."""
    mu = np.asarray(mu, dtype=float)[None, :]
    keep = draws.valid
    eu = draws.err_u[keep][:, None]
    eb = draws.err_b[keep][:, None] + mu
    vu = draws.var_u[keep][:, None]
    vb = draws.var_b[keep][:, None]
    cbu = draws.cov_bu[keep][:, None]
    shape = (eu.shape[0], mu.shape[1])
    if rule is Rule.UNBIASED:
        return np.broadcast_to(eu, shape).copy()
    if rule is Rule.BIASED:
        return eb
    if rule is Rule.CORE:
        lam = lambda_hat_array(eu - eb, vu, vb, cbu)
    elif rule is Rule.SHRINKAGE_CLIPPED:
        lam = shrinkage_weight_array(eu - eb, vu, cbu, clip=True)
    elif rule is Rule.SHRINKAGE_UNCLIPPED:
        lam = shrinkage_weight_array(eu - eb, vu, cbu, clip=False)
    elif rule is Rule.CHENG:
        lam = cheng_weight_array(eu - eb, vu, vb, cbu, n, cfg.cheng_beta)
    elif rule is Rule.ANCHORED_THRESHOLD:
        theta, _ = anchored_threshold_array(eu, eb, vu, vb, cbu, cfg.anchored_lambda1, n)
        return theta
    elif rule is Rule.HYPOTHESIS_TEST:
        if table is None:
            raise ValueError("the hypothesis_test rule needs a cutoff table")
        theta, _ = adaptive_hypothesis_test_array(eu, eb, vu + vb - 2.0 * cbu, table,
                                                  cfg.pool_lambda)
        return theta
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return eu + lam * (eb - eu)


@dataclass(frozen=True)
class CurvePoint:
    mu: float
    estimator: Rule
    mse: float
    relative_mse: float
    mc_se: float


@dataclass
class ScenarioSummary:
    scenario: GaussianScenario
    bias_threshold: dict[Rule, float]
    bias_threshold_last: dict[Rule, float]
    worst_rel_mse: dict[Rule, float]
    best_rel_mse: dict[Rule, float]
    argmax_mu: dict[Rule, float]
    excluded: int = 0

    @property
    def rules(self) -> list[Rule]:
        return list(self.bias_threshold)

    @property
    def threshold_ratio(self) -> float:
        """Squared core-rule threshold over the variance of ``theta_u - theta_b``."""
        return self.bias_threshold[Rule.CORE] ** 2 / self.scenario.moments.var_diff


@dataclass
class ScenarioResult:
    points: list[CurvePoint]
    summary: ScenarioSummary
    table: CutoffTable | None = None


def bias_threshold(mu_grid, rel_mse, convention: str = "first") -> float:
    """Largest grid bias at which the relative MSE is still below 1.

    ``first``: stop at the first grid point where the curve reaches 1.
    ``last``: largest grid point with relative MSE below 1 anywhere.
    Returns 0.0 when the curve is never below 1 (or already at/above 1 at the
    first grid point, for ``first``).
    """
    mu_grid = np.asarray(mu_grid, dtype=float)
    below = np.asarray(rel_mse) < 1.0
    if convention == "first":
        if not below[0]:
            return 0.0
        stop = np.argmin(below) if not below.all() else len(below)
        return float(mu_grid[stop - 1])
    if convention == "last":
        idx = np.flatnonzero(below)
        return float(mu_grid[idx[-1]]) if idx.size else 0.0
    raise ValueError(f"unknown threshold convention {convention!r}")


def _mse_and_se(err: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sq = np.ascontiguousarray((err * err).T)  # (mu, reps): pairwise sums over reps
    mse = sq.mean(axis=1)
    r = sq.shape[1]
    se = sq.std(axis=1, ddof=1) / math.sqrt(r) if r > 1 else np.zeros_like(mse)
    return mse, se


def run_scenario(scn: GaussianScenario, rules=DEFAULT_RULES, cfg: BaselineConfig | None = None,
                 workers: int = 1, table: CutoffTable | None = None,
                 draws: DrawSet | None = None) -> ScenarioResult:
    rules = [Rule(r) for r in rules]
    if not rules:
        raise ValueError("at least one rule is required")
    cfg = cfg or BaselineConfig()
    if Rule.HYPOTHESIS_TEST in rules and table is None:
        table = build_cutoff_table(scn.replace(reps=max(scn.reps, 1000)), cfg, workers=workers)
    draws = draws if draws is not None else simulate_draws(scn, STREAM_EVAL, workers)
    mu = np.asarray(scn.mu_grid)

    errs = {r: rule_errors(r, draws, mu, scn.n, cfg, table) for r in rules}
    # Non-finite output (probability-zero ties) excludes the replication everywhere.
    bad = np.zeros(int(draws.valid.sum()), dtype=bool)
    for e in errs.values():
        bad |= ~np.isfinite(e).all(axis=1)
    excluded = draws.excluded + int(bad.sum())
    if bad.any():
        log.warning("%s: %d replications with non-finite rule output excluded",
                    scn.scenario_id, int(bad.sum()))

    base_mse, _ = _mse_and_se(rule_errors(Rule.UNBIASED, draws, mu, scn.n, cfg)[~bad])
    points: list[CurvePoint] = []
    thr, thr_last, worst, best, argmax = {}, {}, {}, {}, {}
    for r in rules:
        mse, se = _mse_and_se(errs[r][~bad])
        rel = mse / base_mse
        points.extend(CurvePoint(float(m), r, float(a), float(b), float(c))
                      for m, a, b, c in zip(mu, mse, rel, se))
        thr[r] = bias_threshold(mu, rel, "first")
        thr_last[r] = bias_threshold(mu, rel, "last")
        worst[r] = float(rel.max())
        best[r] = float(rel.min())
        argmax[r] = float(mu[int(np.argmax(rel))])
    # Order points by (mu, rule order) for stable output.
    order = {r: i for i, r in enumerate(rules)}
    points.sort(key=lambda p: (p.mu, order[p.estimator]))
    summary = ScenarioSummary(scn, thr, thr_last, worst, best, argmax, excluded)
    return ScenarioResult(points, summary, table)


# -- full grid ---------------------------------------------------------------

def table2_grid(mu_grid=None, reps: int = 2000, seed: int = 0, axes: dict | None = None,
                theta_0: float = 1.0):
    """Cartesian product of the parameter axes. Returns ``(valid, skipped)``.

    ``skipped`` lists ``(params, reason)`` for combinations that cannot be
    simulated, e.g. nonzero correlation with a zero-variance ``psi_b``.
    """
    axes = {**TABLE2, **(axes or {})}
    mu_grid = make_mu_grid() if mu_grid is None else tuple(mu_grid)
    valid, skipped = [], []
    for n, vu, vb, corr in itertools.product(axes["n"], axes["var_psi_u"], axes["var_psi_b"],
                                             axes["corr"]):
        params = dict(n=int(n), var_psi_u=float(vu), var_psi_b=float(vb), corr=float(corr))
        try:
            valid.append(GaussianScenario(**params, theta_0=theta_0, mu_grid=mu_grid,
                                          reps=reps, seed=seed))
        except InvalidMomentsError as exc:
            skipped.append((params, str(exc)))
            log.info("skipping %s: %s", params, exc)
    return valid, skipped


def stratified_subsample(scenarios, k: int = 60):
    """Deterministic subsample, spread evenly over sample sizes.

    Within each sample size the scenarios (in grid order) are sampled
    systematically, so every variance level and correlation is represented.
    """
    by_n: dict[int, list] = {}
    for s in scenarios:
        by_n.setdefault(s.n, []).append(s)
    sizes = sorted(by_n)
    per = [k // len(sizes) + (1 if i < k % len(sizes) else 0) for i in range(len(sizes))]
    out = []
    for i, (n, want) in enumerate(zip(sizes, per)):
        group = by_n[n]
        want = min(want, len(group))
        # Offset the systematic start per n so different strata pick different cells.
        step = len(group) / want
        offset = (i * step / len(sizes))
        idx = sorted({int(offset + j * step) % len(group) for j in range(want)})
        out.extend(group[j] for j in idx)
    return out


def _run_one(args):
    scn, rules, cfg = args
    try:
        return run_scenario(scn, rules, cfg).summary, None
    except Exception as exc:  # isolated per scenario
        return None, (scn.scenario_id, f"{type(exc).__name__}: {exc}")


def run_grid(scenarios, rules=DEFAULT_RULES, cfg: BaselineConfig | None = None,
             workers: int = 1):
    """Run every scenario. Returns ``(summaries, errors)``; failures do not stop the run."""
    cfg = cfg or BaselineConfig()
    rules = tuple(Rule(r) for r in rules)
    results = pmap(_run_one, [(s, rules, cfg) for s in scenarios], workers)
    summaries = [s for s, _ in results if s is not None]
    errors = [e for _, e in results if e is not None]
    for sid, msg in errors:
        log.error("scenario %s failed: %s", sid, msg)
    return summaries, errors


def threshold_differences(summaries, reference: Rule = Rule.CORE):
    """(scenario id, rule, threshold(rule) - threshold(reference)) rows; negative favors the reference."""
    rows = []
    for s in summaries:
        for r in s.rules:
            if r is reference:
                continue
            rows.append((s.scenario.scenario_id, r,
                         s.bias_threshold[r] - s.bias_threshold[reference]))
    return rows


def best_worst_differences(summaries, reference: Rule = Rule.CORE):
    """(scenario id, rule, best diff, worst diff) rows; both negative means the rule dominates."""
    rows = []
    for s in summaries:
        for r in s.rules:
            if r is reference:
                continue
            rows.append((s.scenario.scenario_id, r,
                         s.best_rel_mse[r] - s.best_rel_mse[reference],
                         s.worst_rel_mse[r] - s.worst_rel_mse[reference]))
    return rows


# -- property checks ---------------------------------------------------------

@dataclass
class ConsistencyReport:
    mu: float
    n_sequence: list[int]
    median_abs_lambda: list[float]
    median_lambda: list[float]
    mean_bias: list[float]
    bias_se: list[float]

    @property
    def lambda_decreasing(self) -> bool | None:
        m = self.median_abs_lambda
        if len(m) < 2:
            return None
        return all(b < a for a, b in zip(m, m[1:]))

    @property
    def bias_shrinks(self) -> bool | None:
        if len(self.mean_bias) < 2:
            return None
        last = abs(self.mean_bias[-1])
        return last < abs(self.mean_bias[0]) and last < 3.0 * self.bias_se[-1]


def check_consistency(base: GaussianScenario, mu_fixed: float, n_sequence,
                      reps: int | None = None, workers: int = 1) -> ConsistencyReport:
    """Track the plug-in weight and the combined estimate's bias as ``n`` grows at fixed bias."""
    reps = reps or base.reps
    med_abs, med, bias, se = [], [], [], []
    for n in n_sequence:
        scn = base.replace(n=int(n), reps=reps, mu_grid=(float(mu_fixed),))
        d = simulate_draws(scn, workers=workers)
        keep = d.valid
        eu, eb = d.err_u[keep], d.err_b[keep] + mu_fixed
        lam = lambda_hat_array(eu - eb, d.var_u[keep], d.var_b[keep], d.cov_bu[keep])
        err = eu + lam * (eb - eu)
        med_abs.append(float(np.median(np.abs(lam))))
        med.append(float(np.median(lam)))
        bias.append(float(err.mean()))
        se.append(float(err.std(ddof=1) / math.sqrt(err.size)))
    return ConsistencyReport(float(mu_fixed), [int(n) for n in n_sequence], med_abs, med, bias, se)


@dataclass
class UnboundedBiasReport:
    mu: list[float]
    relative_mse: list[float]
    relative_mse_biased: list[float]
    mc_se: list[float]

    @property
    def tail_gap(self) -> float:
        return abs(self.relative_mse[-1] - 1.0)

    @property
    def converged(self) -> bool:
        return self.tail_gap < 0.02


def check_unbounded_bias(scn: GaussianScenario, mu_sequence,
                         workers: int = 1) -> UnboundedBiasReport:
    mu_sequence = [float(x) for x in mu_sequence]
    if mu_sequence != sorted(mu_sequence):
        raise ValueError("mu_sequence must be increasing")
    floor = 20.0 * math.sqrt(scn.var_psi_u / scn.n)
    if mu_sequence[-1] < floor:
        raise ValueError(f"last mu must be >= 20*sd(theta_u) = {floor:.4g}")
    res = run_scenario(scn.replace(mu_grid=tuple(mu_sequence)), (Rule.CORE, Rule.BIASED),
                       workers=workers)
    core = [p for p in res.points if p.estimator is Rule.CORE]
    biased = [p for p in res.points if p.estimator is Rule.BIASED]
    return UnboundedBiasReport(mu_sequence, [p.relative_mse for p in core],
                               [p.relative_mse for p in biased], [p.mc_se for p in core])


@dataclass(frozen=True)
class BoundRow:
    mu: float
    mse: float
    mc_se: float
    bound: float
    mse_estimated: float | None = None
    mc_se_estimated: float | None = None
    bound_unknown_var: float | None = None

    @property
    def ok(self) -> bool:
        return self.mse <= self.bound + 4.0 * self.mc_se

    @property
    def ok_unknown_var(self) -> bool | None:
        if self.mse_estimated is None:
            return None
        return self.mse_estimated <= self.bound_unknown_var + 4.0 * self.mc_se_estimated


@dataclass
class BoundReport:
    scenario: GaussianScenario
    shape: ShapeParams
    var_u: float
    bound: float
    rows: list[BoundRow]

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.rows) and all(r.ok_unknown_var is not False for r in self.rows)

    @property
    def sup_mse(self) -> float:
        return max(r.mse for r in self.rows)


def check_bound(scn: GaussianScenario, mu_grid=None, with_unknown_var: bool = True,
                workers: int = 1) -> BoundReport:
    """Monte Carlo MSE of the core rule against the worst-case bound.

    The main curve uses population moments in the weight. With
    ``with_unknown_var`` the same draws are also combined with estimated
    moments and compared with the estimated-moment bound.
    """
    mu_grid = tuple(scn.mu_grid if mu_grid is None else mu_grid)
    known = scn.replace(known_moments=True, mu_grid=mu_grid)
    m = known.moments
    shape = known.shape
    bound = worst_case_bound(shape, m.var_u)
    res = run_scenario(known, (Rule.CORE,), workers=workers)
    core = [p for p in res.points if p.estimator is Rule.CORE]

    est_points = bound_uv = None
    if with_unknown_var:
        d = simulate_draws(known.replace(known_moments=False), workers=workers)
        keep = d.valid
        s2 = ((d.var_u - d.cov_bu) ** 2 / d.var_diff)[keep]
        bound_uv = worst_case_bound_unknown_var(m.var_u, float(s2.mean()))
        res_est = run_scenario(known.replace(known_moments=False), (Rule.CORE,), draws=d)
        est_points = [p for p in res_est.points if p.estimator is Rule.CORE]

    rows = []
    for i, p in enumerate(core):
        if est_points is None:
            rows.append(BoundRow(p.mu, p.mse, p.mc_se, bound))
        else:
            q = est_points[i]
            rows.append(BoundRow(p.mu, p.mse, p.mc_se, bound, q.mse, q.mc_se, bound_uv))
    return BoundReport(known, shape, m.var_u, bound, rows)


def scenario_for_shape(rho: float, c: float, n: int = 1000, var_psi_u: float = 1.0,
                       **kw) -> GaussianScenario:
    """Scenario whose sample means have correlation ``rho`` and sd ratio ``c``."""
    return GaussianScenario(n=n, var_psi_u=var_psi_u, var_psi_b=var_psi_u * c * c,
                            corr=rho if c > 0 else 0.0, **kw)

