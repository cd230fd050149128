"""Self-contained SVG renderers for loss curves, routing heat maps, and
margin trajectories. No plotting runtime; the CSV files remain the
canonical outputs and these are for quick visual inspection."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 20, 30, 45
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / n))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= n:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + 1e-12 * span:
        out.append(round(v, 12))
        v += step
    return out


def line_chart(
    path: str | Path,
    series: dict[str, tuple[Sequence[float], Sequence[float]]],
    title: str,
    x_label: str,
    y_label: str,
    log_y: bool = False,
) -> Path:
    """Write a multi-series line chart; log_y plots log10 of the values."""
    xs_all, ys_all = [], []
    transformed = {}
    for name, (xs, ys) in series.items():
        if log_y:
            pts = [(x, math.log10(y)) for x, y in zip(xs, ys) if y > 0]
        else:
            pts = list(zip(xs, ys))
        if pts:
            transformed[name] = pts
            xs_all.extend(p[0] for p in pts)
            ys_all.extend(p[1] for p in pts)
    if not xs_all:
        raise ValueError("no plottable points")
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1
    if y_hi == y_lo:
        y_hi = y_lo + 1

    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def px(x):
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return MARGIN_T + (1 - (y - y_lo) / (y_hi - y_lo)) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="14">{_escape(title)}</text>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#444"/>',
    ]
    for tx in _ticks(x_lo, x_hi):
        parts.append(
            f'<line x1="{px(tx):.1f}" y1="{MARGIN_T + plot_h}" x2="{px(tx):.1f}" '
            f'y2="{MARGIN_T + plot_h + 4}" stroke="#444"/>'
            f'<text x="{px(tx):.1f}" y="{MARGIN_T + plot_h + 17}" text-anchor="middle">{tx:g}</text>'
        )
    for ty in _ticks(y_lo, y_hi):
        label = f"1e{ty:g}" if log_y else f"{ty:g}"
        parts.append(
            f'<line x1="{MARGIN_L - 4}" y1="{py(ty):.1f}" x2="{MARGIN_L}" y2="{py(ty):.1f}" stroke="#444"/>'
            f'<text x="{MARGIN_L - 7}" y="{py(ty) + 4:.1f}" text-anchor="end">{label}</text>'
        )
    parts.append(
        f'<text x="{MARGIN_L + plot_w / 2}" y="{HEIGHT - 8}" text-anchor="middle">{_escape(x_label)}</text>'
    )
    ylab = f"log10 {y_label}" if log_y else y_label
    parts.append(
        f'<text x="16" y="{MARGIN_T + plot_h / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {MARGIN_T + plot_h / 2})">{_escape(ylab)}</text>'
    )
    for idx, (name, pts) in enumerate(transformed.items()):
        color = PALETTE[idx % len(PALETTE)]
        coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN_T + 14 + 16 * idx
        parts.append(
            f'<line x1="{MARGIN_L + plot_w - 130}" y1="{ly - 4}" x2="{MARGIN_L + plot_w - 110}" '
            f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>'
            f'<text x="{MARGIN_L + plot_w - 105}" y="{ly}">{_escape(name)}</text>'
        )
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts))
    return path


def heat_map(
    path: str | Path,
    matrix,
    title: str,
    row_label: str,
    col_label: str,
) -> Path:
    """Write a blue-intensity heat map of a nonnegative matrix (rows x cols)."""
    rows = len(matrix)
    cols = len(matrix[0])
    top = max(max(row) for row in matrix) or 1.0
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B
    cw, ch = plot_w / cols, plot_h / rows
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="14">{_escape(title)}</text>',
    ]
    for i, row in enumerate(matrix):
        for j, value in enumerate(row):
            frac = max(0.0, min(1.0, value / top))
            shade = int(255 - 205 * frac)
            parts.append(
                f'<rect x="{MARGIN_L + j * cw:.1f}" y="{MARGIN_T + i * ch:.1f}" '
                f'width="{cw:.1f}" height="{ch:.1f}" fill="rgb({shade},{shade},255)" stroke="#ccc"/>'
            )
            if cols <= 16 and rows <= 16:
                parts.append(
                    f'<text x="{MARGIN_L + (j + 0.5) * cw:.1f}" y="{MARGIN_T + (i + 0.5) * ch + 4:.1f}" '
                    f'text-anchor="middle" font-size="10">{value:.2f}</text>'
                )
    for i in range(rows):
        parts.append(
            f'<text x="{MARGIN_L - 7}" y="{MARGIN_T + (i + 0.5) * ch + 4:.1f}" '
            f'text-anchor="end">{i}</text>'
        )
    for j in range(cols):
        parts.append(
            f'<text x="{MARGIN_L + (j + 0.5) * cw:.1f}" y="{MARGIN_T + plot_h + 15}" '
            f'text-anchor="middle">{j}</text>'
        )
    parts.append(
        f'<text x="{MARGIN_L + plot_w / 2}" y="{HEIGHT - 8}" text-anchor="middle">{_escape(col_label)}</text>'
    )
    parts.append(
        f'<text x="16" y="{MARGIN_T + plot_h / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {MARGIN_T + plot_h / 2})">{_escape(row_label)}</text>'
    )
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts))
    return path
