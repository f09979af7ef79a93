"""CSV tables and SVG line plots.

CSV: UTF-8, LF line endings, RFC-4180 quoting, floats with 17 significant
digits. Files are written to a temporary name and renamed into place.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

SCHEMA_VERSION = 1

SCHEMAS = {
    "curve": ("scenario_id", "mu", "rule", "mse", "relative_mse", "mc_se"),
    "summary": ("scenario_id", "n", "var_psi_u", "var_psi_b", "corr", "rule",
                "bias_threshold", "bias_threshold_last", "worst_rel_mse", "best_rel_mse",
                "argmax_mu", "threshold_ratio", "excluded"),
    "thresholds": ("scenario_id", "rule", "threshold_diff", "best_diff", "worst_diff"),
    "sweep": ("gamma", "big_gamma", "n_obs", "rmse_unbiased_x1000", "rmse_combined_x1000",
              "ci_low_unbiased_x1000", "ci_high_unbiased_x1000", "ci_low_combined_x1000",
              "ci_high_combined_x1000", "bias_b", "bias_b_se", "mean_lambda", "excluded"),
    "bounds": ("rho", "c", "mu", "mse", "mc_se", "bound", "ok", "mse_estimated",
               "mc_se_estimated", "bound_unknown_var", "ok_unknown_var"),
    "consistency": ("n", "mu", "median_abs_lambda", "median_lambda", "mean_bias", "bias_se"),
    "unbounded": ("mu", "relative_mse", "relative_mse_biased", "mc_se"),
    "cutoffs": ("scenario_id", "mu", "gamma"),
    "errors": ("scenario_id", "error"),
}


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    return str(value)


@dataclass
class ResultTable:
    name: str
    rows: list[tuple] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def columns(self) -> tuple[str, ...]:
        return SCHEMAS[self.name]

    @property
    def filename(self) -> str:
        return f"{self.name}.csv"

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError(f"{self.name}: row has {len(row)} fields, "
                                 f"schema has {len(self.columns)}")
            w.writerow([fmt(v) for v in row])
        return buf.getvalue()


def atomic_write(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_table(table: ResultTable, out_dir) -> Path:
    return atomic_write(Path(out_dir) / table.filename, table.to_csv())


def write_metadata(out_dir, meta: dict) -> Path:
    return atomic_write(Path(out_dir) / "metadata.json",
                        json.dumps(meta, indent=2, sort_keys=True) + "\n")


# -- SVG ---------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
            "#e377c2", "#17becf")
_W, _H = 720, 440
_ML, _MR, _MT, _MB = 70, 170, 40, 55


def _nice_ticks(lo: float, hi: float, k: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / k
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    ticks = []
    x = start
    while x <= hi + 1e-9 * step:
        ticks.append(round(x, 10))
        x += step
    return ticks


def line_plot(series: dict[str, tuple[list[float], list[float]]], title: str, xlabel: str,
              ylabel: str, ref_y: float | None = None, ref_label: str = "reference") -> str:
    """Self-contained SVG; the plotted data is embedded as comments."""
    if not series or not any(len(xs) for xs, _ in series.values()):
        raise ValueError("nothing to plot")
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys if math.isfinite(y)]
    if ref_y is not None:
        ys_all.append(ref_y)
    x0, x1 = min(xs_all), max(xs_all)
    y0, y1 = min(ys_all), max(ys_all)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    pad = 0.05 * (y1 - y0) if y1 > y0 else 0.5
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def sx(x):
        return _ML + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return _MT + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
           f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _nice_ticks(x0, x1):
        if x0 <= t <= x1:
            out.append(f'<line x1="{sx(t):.2f}" y1="{_MT + ph}" x2="{sx(t):.2f}" '
                       f'y2="{_MT + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{sx(t):.2f}" y="{_MT + ph + 18}" '
                       f'text-anchor="middle">{t:g}</text>')
    for t in _nice_ticks(y0, y1):
        if y0 <= t <= y1:
            out.append(f'<line x1="{_ML - 5}" y1="{sy(t):.2f}" x2="{_ML}" y2="{sy(t):.2f}" '
                       f'stroke="black"/>')
            out.append(f'<text x="{_ML - 8}" y="{sy(t) + 4:.2f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{_ML + pw / 2:.1f}" y="{_H - 12}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{_MT + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {_MT + ph / 2:.1f})">{escape(ylabel)}</text>')
    if ref_y is not None:
        out.append(f'<!-- reference {escape(ref_label)} y={fmt(float(ref_y))} -->')
        out.append(f'<line x1="{_ML}" y1="{sy(ref_y):.2f}" x2="{_ML + pw}" y2="{sy(ref_y):.2f}" '
                   f'stroke="gray" stroke-dasharray="6,4"/>')
    for i, (name, (xs, ys)) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = [(x, y) for x, y in zip(xs, ys) if math.isfinite(y)]
        data = " ".join(f"{fmt(float(x))},{fmt(float(y))}" for x, y in pts)
        out.append(f"<!-- data series={escape(name)} points={data} -->")
        if len(pts) == 1:
            x, y = pts[0]
            out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{color}"/>')
        elif pts:
            path = " ".join(f"{sx(x):.2f},{sy(min(max(y, y0), y1)):.2f}" for x, y in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                       f'points="{path}"/>')
        ly = _MT + 14 + 18 * i
        out.append(f'<line x1="{_W - _MR + 12}" y1="{ly - 4}" x2="{_W - _MR + 32}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_W - _MR + 38}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot(table: ResultTable, kind: str | None = None) -> str:
    """SVG for a curve table (relative MSE vs bias) or a sweep table (RMSE vs gamma)."""
    kind = kind or table.name
    if not table.rows:
        raise ValueError(f"cannot plot empty table {table.name!r}")
    if kind == "curve":
        series: dict[str, tuple[list, list]] = {}
        for sid, mu, rule, _mse, rel, _se in table.rows:
            xs, ys = series.setdefault(str(rule), ([], []))
            xs.append(mu)
            ys.append(rel)
        sid = table.rows[0][0]
        return line_plot(series, f"Relative MSE ({sid})", "bias mu",
                         "MSE / MSE(unbiased)", ref_y=1.0, ref_label="relative MSE 1")
    if kind == "sweep":
        cols = table.columns
        gi, ni = cols.index("gamma"), cols.index("n_obs")
        ui, ci = cols.index("rmse_unbiased_x1000"), cols.index("rmse_combined_x1000")
        series = {}
        for row in table.rows:
            xs, ys = series.setdefault(f"combined n_obs={row[ni]}", ([], []))
            xs.append(row[gi])
            ys.append(row[ci])
        ref = sum(r[ui] for r in table.rows) / len(table.rows)
        return line_plot(series, "RMSE x 1000 vs confounding strength", "gamma",
                         "RMSE x 1000", ref_y=ref, ref_label="unbiased RMSE x 1000")
    raise ValueError(f"unknown plot kind {kind!r}")
