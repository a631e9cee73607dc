"""Markdown comparison tables and hand-emitted SVG line plots.

The plot is a plain polyline chart (axes, ticks, legend, one series per
(run, method, modality)) written without any plotting dependency. Output
bytes are deterministic except for the single timestamp comment near the
top of the SVG.
"""

from __future__ import annotations

import time

CSV_COLUMNS = ("model", "loss_mode", "attack_method", "scenario", "modality",
               "eps_av", "map", "ecr_a", "ecr_v", "seed")

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def csv_header() -> str:
    return ",".join(CSV_COLUMNS)


def csv_row(values: dict) -> str:
    out = []
    for col in CSV_COLUMNS:
        v = values.get(col, "")
        if isinstance(v, float):
            out.append(repr(v))
        else:
            out.append(str(v))
    return ",".join(out)


def parse_csv(text: str):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != csv_header():
        raise ValueError(f"unexpected CSV header: {lines[0] if lines else '(empty)'!r}")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(CSV_COLUMNS):
            raise ValueError(f"bad CSV row: {ln!r}")
        row = dict(zip(CSV_COLUMNS, parts))
        for key in ("eps_av", "map"):
            row[key] = float(row[key])
        for key in ("ecr_a", "ecr_v"):
            row[key] = float(row[key]) if row[key] not in ("", "None") else None
        row["seed"] = int(row["seed"])
        rows.append(row)
    return rows


def markdown_table(rows, caption: str = "") -> str:
    """Comparison table over evaluation rows, grouped per run label."""
    header = "| model | loss mode | attack | scenario | modality | eps_av | mAP | ECR_a | ECR_v |"
    sep = "|---|---|---|---|---|---|---|---|---|"
    lines = []
    if caption:
        lines.append(f"**{caption}**")
        lines.append("")
    lines.extend([header, sep])
    for row in rows:
        ecr_a = "-" if row.get("ecr_a") is None else f"{row['ecr_a']:.4f}"
        ecr_v = "-" if row.get("ecr_v") is None else f"{row['ecr_v']:.4f}"
        lines.append("| {model} | {loss_mode} | {attack_method} | {scenario} | {modality} "
                     "| {eps:.2f} | {map:.4f} | {ea} | {ev} |".format(
                         model=row["model"], loss_mode=row["loss_mode"],
                         attack_method=row["attack_method"], scenario=row["scenario"],
                         modality=row["modality"], eps=row["eps_av"], map=row["map"],
                         ea=ecr_a, ev=ecr_v))
    return "\n".join(lines) + "\n"


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def svg_line_plot(series: dict, title: str, x_label: str = "eps_av",
                  y_label: str = "mAP", timestamp: bool = True) -> str:
    """Polyline chart; ``series`` maps a label to a list of (x, y) points."""
    width, height = 640, 420
    ml, mr, mt, mb = 64, 160, 40, 48
    pw, ph = width - ml - mr, height - mt - mb

    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(0.0, min(ys)), max(1.0, max(ys))
    if x_hi == x_lo:
        x_hi = x_lo + 1.0

    def px(x):
        return ml + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return mt + ph - (y - y_lo) / (y_hi - y_lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">']
    if timestamp:
        out.append(f"<!-- generated: {time.strftime('%Y-%m-%dT%H:%M:%S')} -->")
    out.append(f'<rect width="{width}" height="{height}" fill="white"/>')
    out.append(f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" '
               f'font-family="sans-serif" font-size="15">{title}</text>')
    # axes
    out.append(f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>')
    out.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>')
    for tx in _ticks(x_lo, x_hi):
        out.append(f'<line x1="{px(tx):.1f}" y1="{mt + ph}" x2="{px(tx):.1f}" y2="{mt + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px(tx):.1f}" y="{mt + ph + 20}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{tx:.2f}</text>')
    for ty in _ticks(y_lo, y_hi):
        out.append(f'<line x1="{ml - 5}" y1="{py(ty):.1f}" x2="{ml}" y2="{py(ty):.1f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{py(ty) + 4:.1f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{ty:.2f}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12">{x_label}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{y_label}</text>')
    # series
    for i, (label, pts) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        ordered = sorted(pts)
        coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in ordered)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in ordered:
            out.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" fill="{color}"/>')
        ly = mt + 14 + i * 18
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 35}" y="{ly}" font-family="sans-serif" '
                   f'font-size="11">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
