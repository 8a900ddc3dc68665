"""Combine per-run metric tables and draw one line chart per metric."""
from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

from .eval import METRIC_COLUMNS

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]


def read_metrics(path) -> list[dict]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if header != METRIC_COLUMNS:
            missing = [c for c in METRIC_COLUMNS if c not in header]
            extra = [c for c in header if c not in METRIC_COLUMNS]
            raise ValueError(f"{path}: metric columns differ (missing {missing}, unexpected {extra})")
        return list(reader)


def _float(v):
    return None if v in ("", None) else float(v)


def combine(runs: dict[str, list[dict]], path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["run", *METRIC_COLUMNS])
        for name, rows in runs.items():
            for row in rows:
                w.writerow([name, *(row[c] for c in METRIC_COLUMNS)])


def line_chart(series: dict[str, list[tuple[float, float]]], title: str, width=640, height=400) -> str:
    """SVG line chart; one polyline per series, in insertion order."""
    margin_l, margin_r, margin_t, margin_b = 60, 150, 30, 40
    pts = [p for s in series.values() for p in s]
    xs = [p[0] for p in pts] or [0.0, 1.0]
    ys = [p[1] for p in pts] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - margin_l - margin_r, height - margin_t - margin_b

    def sx(x):
        return margin_l + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return margin_t + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" '
           f'font-size="14">{escape(title)}</text>',
           f'<line x1="{margin_l}" y1="{margin_t + ph}" x2="{margin_l + pw}" y2="{margin_t + ph}" stroke="black"/>',
           f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" y2="{margin_t + ph}" stroke="black"/>']
    for frac in (0.0, 0.5, 1.0):
        yv = y0 + frac * (y1 - y0)
        out.append(f'<text x="{margin_l - 5}" y="{sy(yv) + 4:.1f}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{yv:.3g}</text>')
        xv = x0 + frac * (x1 - x0)
        out.append(f'<text x="{sx(xv):.1f}" y="{margin_t + ph + 15}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="10">{xv:.3g}</text>')
    out.append(f'<text x="{margin_l + pw / 2:.1f}" y="{height - 5}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="11">round</text>')
    for i, (name, s) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in s)
        out.append(f'<polyline data-run="{escape(name)}" fill="none" stroke="{color}" stroke-width="2" '
                   f'points="{coords}"/>')
        ly = margin_t + 15 * i + 10
        out.append(f'<text x="{margin_l + pw + 10}" y="{ly}" font-family="sans-serif" font-size="11" '
                   f'fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_report(run_dirs, out_dir) -> list[Path]:
    """Write ``combined.csv`` and ``<metric>.svg`` for every metric column."""
    run_dirs = [Path(d) for d in run_dirs]
    if not run_dirs:
        raise ValueError("no run directories given")
    runs: dict[str, list[dict]] = {}
    for d in run_dirs:
        f = d / "metrics.csv" if d.is_dir() else d
        if not f.exists():
            raise FileNotFoundError(f"{f}: metrics file not found")
        name = d.name if d.is_dir() else d.stem
        base, k = name, 2
        while name in runs:
            name = f"{base}-{k}"
            k += 1
        runs[name] = read_metrics(f)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "combined.csv"]
    combine(runs, written[0])
    for metric in METRIC_COLUMNS[1:]:
        series = {}
        for name, rows in runs.items():
            series[name] = [(float(r["round"]), _float(r[metric])) for r in rows if _float(r[metric]) is not None]
        p = out_dir / f"{metric}.svg"
        p.write_text(line_chart(series, metric), encoding="utf-8")
        written.append(p)
    return written
