"""Command-line entry point: one subcommand per experiment kind.

Exit codes: 0 success, 2 configuration error, 3 runtime failure. On failure
a one-line JSON error record is written to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

from . import report, simgauss, simsprint
from .baselines import BaselineConfig, build_cutoff_table
from .combiner import Rule
from .config import EXPERIMENTS, FIDELITIES, RunConfig, load_config, resolve
from .errors import ConfigError
from .report import ResultTable

log = logging.getLogger("estfuse")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def tool_version() -> str:
    try:
        return version("estfuse")
    except PackageNotFoundError:
        return "0+unknown"


def baseline_config(cfg: RunConfig) -> BaselineConfig:
    b = cfg.baselines
    step = b["test_gamma_step"]
    grid = simgauss.make_mu_grid(1.0, step)
    return BaselineConfig(shrinkage_clip=True, anchored_lambda1=b["anchored_lambda1"],
                          cheng_beta=b["cheng_beta"], test_gamma_grid=grid,
                          test_pool_weights=tuple(b["test_pool_weights"]))


def gaussian_scenario(cfg: RunConfig) -> simgauss.GaussianScenario:
    g = cfg.gaussian
    return simgauss.GaussianScenario(n=g["n"], var_psi_u=g["var_psi_u"], var_psi_b=g["var_psi_b"],
                                     corr=g["corr"], theta_0=g["theta_0"], mu_grid=cfg.mu_grid,
                                     reps=cfg.reps, seed=cfg.seed,
                                     known_moments=g["known_moments"])


def _cutoff_reps(cfg: RunConfig) -> int:
    return cfg.baselines["cutoff_reps"] or max(cfg.reps, 1000)


def _curve_rows(points, sid) -> list[tuple]:
    return [(sid, p.mu, p.estimator.value, p.mse, p.relative_mse, p.mc_se) for p in points]


def _summary_rows(summaries) -> list[tuple]:
    rows = []
    for s in summaries:
        scn = s.scenario
        ratio = s.threshold_ratio if Rule.CORE in s.rules else None
        for r in s.rules:
            rows.append((scn.scenario_id, scn.n, scn.var_psi_u, scn.var_psi_b, scn.corr, r.value,
                         s.bias_threshold[r], s.bias_threshold_last[r], s.worst_rel_mse[r],
                         s.best_rel_mse[r], s.argmax_mu[r],
                         ratio if r is Rule.CORE else None, s.excluded))
    return rows


def _threshold_rows(summaries) -> list[tuple]:
    thr = simgauss.threshold_differences(summaries)
    bw = simgauss.best_worst_differences(summaries)
    return [(sid, r.value, d, best, worst)
            for (sid, r, d), (_, _, best, worst) in zip(thr, bw)]


def _run_curve(cfg: RunConfig) -> list[ResultTable]:
    scn = gaussian_scenario(cfg)
    bcfg = baseline_config(cfg)
    table = None
    if Rule.HYPOTHESIS_TEST in cfg.rules:
        table = build_cutoff_table(scn, bcfg, reps=_cutoff_reps(cfg), workers=cfg.workers)
    res = simgauss.run_scenario(scn, cfg.rules, bcfg, workers=cfg.workers, table=table)
    return [ResultTable("curve", _curve_rows(res.points, scn.scenario_id)),
            ResultTable("summary", _summary_rows([res.summary]))]


def _run_grid(cfg: RunConfig) -> list[ResultTable]:
    g = cfg.grid
    axes = {k: tuple(g[k]) for k in ("n", "var_psi_u", "var_psi_b", "corr")}
    valid, skipped = simgauss.table2_grid(cfg.mu_grid, cfg.reps, cfg.seed, axes,
                                          cfg.gaussian["theta_0"])
    if g["subsample"] is not None and g["subsample"] < len(valid):
        valid = simgauss.stratified_subsample(valid, g["subsample"])
    if not valid:
        raise RuntimeError("no valid scenarios in the grid")
    summaries, errors = simgauss.run_grid(valid, cfg.rules, baseline_config(cfg), cfg.workers)
    if not summaries:
        raise RuntimeError(f"all {len(valid)} scenarios failed; first error: {errors[0][1]}")
    err_rows = [(f"n{p['n']}_vu{p['var_psi_u']:g}_vb{p['var_psi_b']:g}_corr{p['corr']:g}",
                 f"skipped: {why}") for p, why in skipped]
    err_rows += [(sid, msg) for sid, msg in errors]
    tables = [ResultTable("summary", _summary_rows(summaries))]
    if Rule.CORE in cfg.rules and len(cfg.rules) > 1:
        tables.append(ResultTable("thresholds", _threshold_rows(summaries)))
    tables.append(ResultTable("errors", err_rows))
    return tables


def sprint_gammas(spec) -> tuple[float, ...]:
    if spec == "table":
        return simsprint.TABLE_GAMMAS
    if spec == "figure":
        return simsprint.FIGURE_GAMMAS
    if spec == "both":
        return tuple(sorted(set(simsprint.TABLE_GAMMAS) | set(simsprint.FIGURE_GAMMAS)))
    return tuple(spec)


def sweep_rows(results) -> list[tuple]:
    k = 1000.0
    return [(r.gamma, r.big_gamma, r.n_obs, k * r.rmse_unbiased, k * r.rmse_combined,
             k * r.ci_low_unbiased, k * r.ci_high_unbiased, k * r.ci_low_combined,
             k * r.ci_high_combined, r.bias_b, r.bias_b_se, r.mean_lambda, r.excluded)
            for r in results]


def _run_sprint(cfg: RunConfig) -> list[ResultTable]:
    s = cfg.sprint
    model = simsprint.SprintModel(p_u=s["p_u"], p_y1_u1=s["p_y1_u1"], p_y1_u0=s["p_y1_u0"],
                                  p_y0_u1=s["p_y0_u1"], p_y0_u0=s["p_y0_u0"], e_exp=s["e_exp"],
                                  n_exp=s["n_exp"])
    res = simsprint.run_gamma_sweep(model, sprint_gammas(s["gammas"]), tuple(s["n_obs"]),
                                    cfg.reps, cfg.seed, s["bootstrap"], cfg.workers)
    return [ResultTable("sweep", sweep_rows(res))]


def _run_bound(cfg: RunConfig) -> list[ResultTable]:
    b = cfg.bound
    rows = []
    for rho in b["rho"]:
        for c in b["c"]:
            scn = simgauss.scenario_for_shape(rho, c, n=b["n"], var_psi_u=b["var_psi_u"],
                                              reps=cfg.reps, seed=cfg.seed,
                                              theta_0=cfg.gaussian["theta_0"])
            sd = math.sqrt(scn.moments.var_diff)
            top = b["mu_max_sd"] * sd
            mu = tuple(top * i / (b["mu_points"] - 1) for i in range(b["mu_points"]))
            rep = simgauss.check_bound(scn, mu, b["unknown_var"], workers=cfg.workers)
            rows.extend((rho, c, r.mu, r.mse, r.mc_se, r.bound, r.ok, r.mse_estimated,
                         r.mc_se_estimated, r.bound_unknown_var, r.ok_unknown_var)
                        for r in rep.rows)
    return [ResultTable("bounds", rows)]


def _run_consistency(cfg: RunConfig) -> list[ResultTable]:
    c = cfg.consistency
    base = gaussian_scenario(cfg)
    rep = simgauss.check_consistency(base, c["mu"], c["n"], cfg.reps, workers=cfg.workers)
    cons = [(n, rep.mu, a, m, bias, se) for n, a, m, bias, se in
            zip(rep.n_sequence, rep.median_abs_lambda, rep.median_lambda, rep.mean_bias,
                rep.bias_se)]
    top = c["tail_mu_sd"] * math.sqrt(base.var_psi_u / base.n)
    k = c["tail_points"]
    mu_seq = [top * i / (k - 1) for i in range(k)]
    ub = simgauss.check_unbounded_bias(base, mu_seq, workers=cfg.workers)
    tail = list(zip(ub.mu, ub.relative_mse, ub.relative_mse_biased, ub.mc_se))
    return [ResultTable("consistency", cons), ResultTable("unbounded", tail)]


def _run_cutoffs(cfg: RunConfig) -> list[ResultTable]:
    scn = gaussian_scenario(cfg)
    t = build_cutoff_table(scn, baseline_config(cfg), reps=max(cfg.reps, 1000),
                           workers=cfg.workers)
    return [ResultTable("cutoffs", [(t.scenario_id, m, g) for m, g in zip(t.mu_keys, t.gammas)])]


RUNNERS = {
    "gaussian-curve": _run_curve,
    "gaussian-grid": _run_grid,
    "sprint": _run_sprint,
    "bound-check": _run_bound,
    "consistency": _run_consistency,
    "cutoff-table": _run_cutoffs,
}


def metadata(cfg: RunConfig, tables) -> dict:
    return {
        "tool": "estfuse",
        "version": tool_version(),
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "config": cfg.resolved(),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "schema_version": report.SCHEMA_VERSION,
        "tables": {t.filename: {"columns": list(t.columns), "rows": len(t.rows)} for t in tables},
    }


def run(cfg: RunConfig) -> tuple[int, list[Path]]:
    """Run the configured experiment and write its artifacts under ``cfg.out``."""
    tables = RUNNERS[cfg.experiment](cfg)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    paths = [report.write_table(t, out) for t in tables]
    if cfg.plots:
        for t in tables:
            if t.name in ("curve", "sweep") and t.rows:
                paths.append(report.atomic_write(out / f"{t.name}.svg", report.plot(t)))
    paths.append(report.write_metadata(out, metadata(cfg, tables)))
    return EXIT_OK, paths


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="estfuse",
                                description="Simulation studies for combining an unbiased and "
                                            "a biased estimate.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--reps", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out", type=Path)
        sp.add_argument("--fidelity", choices=FIDELITIES)
        sp.add_argument("--no-plots", dest="plots", action="store_false", default=None)
    return p


def _fail(code: int, record: dict) -> int:
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"experiment": args.experiment, "seed": args.seed, "reps": args.reps,
                 "workers": args.workers, "fidelity": args.fidelity, "plots": args.plots,
                 "out": str(args.out) if args.out is not None else None}
    try:
        if args.config is not None:
            cfg = load_config(args.config, overrides)
        else:
            cfg = resolve({}, overrides)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, e.as_record())
    try:
        code, paths = run(cfg)
    except Exception as e:  # reported as a machine-readable record
        log.debug("run failed", exc_info=True)
        return _fail(EXIT_RUNTIME, {"error": "runtime", "type": type(e).__name__,
                                    "message": str(e)})
    for path in paths:
        print(path)
    return code


if __name__ == "__main__":
    sys.exit(main())
