"""Minimal SVG line charts: one or more stacked panels sharing an x axis."""
from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
WIDTH = 720
PANEL_H = 240
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 150, 30, 40
MAX_POINTS = 2000


@dataclass
class Panel:
    series: dict
    ylabel: str = ""
    logy: bool = False


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def _thin(x, y):
    """Keep at most MAX_POINTS points by min/max decimation per bucket."""
    n = len(x)
    if n <= MAX_POINTS:
        return x, y
    buckets = MAX_POINTS // 2
    edges = np.linspace(0, n, buckets + 1).astype(int)
    keep = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        seg = y[a:b]
        i, j = a + int(np.nanargmin(seg)), a + int(np.nanargmax(seg))
        keep.extend(sorted({i, j}))
    keep = np.array(keep)
    return x[keep], y[keep]


def _fmt(v):
    return f"{v:.4g}"


def line_chart(path, x, panels, title="", xlabel="", logx=False):
    """Write stacked panels of line series against a shared x to `path`."""
    x = np.asarray(x, dtype=float)
    if isinstance(panels, Panel):
        panels = [panels]
    height = MARGIN_T + len(panels) * (PANEL_H + MARGIN_B) + 10
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    xs = np.log10(x) if logx else x
    x_lo, x_hi = float(np.nanmin(xs)), float(np.nanmax(xs))
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{height}" fill="white"/>',
           f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>']

    def px(v):
        return MARGIN_L + (v - x_lo) / (x_hi - x_lo) * plot_w

    for k, panel in enumerate(panels):
        top = MARGIN_T + k * (PANEL_H + MARGIN_B)
        ys_all = []
        for y in panel.series.values():
            y = np.asarray(y, dtype=float)
            ys_all.append(np.log10(np.maximum(y, 1e-300)) if panel.logy else y)
        finite = np.concatenate([v[np.isfinite(v)] for v in ys_all]) if ys_all else np.array([0.0])
        y_lo = float(finite.min()) if finite.size else 0.0
        y_hi = float(finite.max()) if finite.size else 1.0
        if y_hi - y_lo < 1e-12 * max(1.0, abs(y_hi)):
            y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
        pad = 0.05 * (y_hi - y_lo)
        y_lo, y_hi = y_lo - pad, y_hi + pad

        def py(v):
            return top + PANEL_H - (v - y_lo) / (y_hi - y_lo) * PANEL_H

        out.append(f'<rect x="{MARGIN_L}" y="{top}" width="{plot_w}" height="{PANEL_H}" '
                   f'fill="none" stroke="#444"/>')
        for tv in _ticks(y_lo, y_hi):
            yy = py(tv)
            label = _fmt(10**tv) if panel.logy else _fmt(tv)
            out.append(f'<line x1="{MARGIN_L}" y1="{yy:.1f}" x2="{MARGIN_L + plot_w}" y2="{yy:.1f}" '
                       f'stroke="#ddd"/>')
            out.append(f'<text x="{MARGIN_L - 5}" y="{yy + 4:.1f}" text-anchor="end">{label}</text>')
        for tv in _ticks(x_lo, x_hi):
            xx = px(tv)
            label = _fmt(10**tv) if logx else _fmt(tv)
            out.append(f'<line x1="{xx:.1f}" y1="{top}" x2="{xx:.1f}" y2="{top + PANEL_H}" stroke="#eee"/>')
            out.append(f'<text x="{xx:.1f}" y="{top + PANEL_H + 14}" text-anchor="middle">{label}</text>')
        out.append(f'<text x="16" y="{top + PANEL_H / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {top + PANEL_H / 2})">{escape(panel.ylabel)}</text>')
        for i, ((name, _), ys) in enumerate(zip(panel.series.items(), ys_all)):
            color = COLORS[i % len(COLORS)]
            xx, yy = _thin(xs, ys)
            ok = np.isfinite(xx) & np.isfinite(yy)
            pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(xx[ok], yy[ok]))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
            ly = top + 14 + 16 * i
            lx = MARGIN_L + plot_w + 10
            out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}" '
                       f'stroke-width="2"/>')
            out.append(f'<text x="{lx + 22}" y="{ly}">{escape(str(name))}</text>')
        if k == len(panels) - 1:
            out.append(f'<text x="{MARGIN_L + plot_w / 2}" y="{top + PANEL_H + 30}" '
                       f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
