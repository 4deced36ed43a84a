"""Minimal deterministic SVG line plots for ratio curves.

Output depends only on the input numbers: coordinates are formatted with a
fixed number of decimals and no timestamps or ids are embedded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .errors import ValidationError
from .tail import TailCurve

__all__ = ["PlotStyle", "Series", "emit_plot", "emit_panels"]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


@dataclass(frozen=True)
class PlotStyle:
    width: int = 640
    panel_height: int = 300
    margin_left: int = 70
    margin_right: int = 20
    margin_top: int = 30
    margin_bottom: int = 45
    reference_line: float | None = 1.0
    x_label: str = "log x"
    y_label: str = "ratio"


@dataclass(frozen=True)
class Series:
    label: str
    x: tuple
    y: tuple


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-12 * abs(hi):
        out.append(round(t, 12))
        t += step
    return out


def _tick_label(t: float) -> str:
    return f"{t:.6g}"


def _panel(series, title, style, y0):
    w, h = style.width, style.panel_height
    left, right = style.margin_left, w - style.margin_right
    top, bottom = y0 + style.margin_top, y0 + h - style.margin_bottom
    xs = np.concatenate([np.asarray(s.x, float) for s in series])
    ys = np.concatenate([np.asarray(s.y, float) for s in series])
    finite = np.isfinite(ys)
    x_lo, x_hi = float(xs.min()), float(xs.max())
    if x_lo == x_hi:
        x_lo, x_hi = x_lo - 1, x_hi + 1
    y_vals = ys[finite]
    if style.reference_line is not None:
        y_vals = np.append(y_vals, style.reference_line)
    y_lo, y_hi = float(y_vals.min()), float(y_vals.max())
    if y_lo == y_hi:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    px = lambda x: left + (x - x_lo) / (x_hi - x_lo) * (right - left)
    py = lambda y: bottom - (y - y_lo) / (y_hi - y_lo) * (bottom - top)

    out = [f'<g class="panel">',
           f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" '
           f'fill="none" stroke="#000" stroke-width="1"/>',
           f'<text x="{(left + right) / 2:.1f}" y="{top - 10}" text-anchor="middle" font-size="13">'
           f'{escape(title)}</text>']
    for t in _ticks(x_lo, x_hi):
        out.append(f'<line x1="{_fmt(px(t))}" y1="{bottom}" x2="{_fmt(px(t))}" y2="{bottom + 4}" stroke="#000"/>')
        out.append(f'<text x="{_fmt(px(t))}" y="{bottom + 16}" text-anchor="middle" font-size="10">'
                   f'{_tick_label(t)}</text>')
    for t in _ticks(y_lo, y_hi):
        out.append(f'<line x1="{left - 4}" y1="{_fmt(py(t))}" x2="{left}" y2="{_fmt(py(t))}" stroke="#000"/>')
        out.append(f'<text x="{left - 6}" y="{_fmt(py(t) + 3)}" text-anchor="end" font-size="10">'
                   f'{_tick_label(t)}</text>')
    out.append(f'<text x="{(left + right) / 2:.1f}" y="{bottom + 34}" text-anchor="middle" font-size="12">'
               f'{escape(style.x_label)}</text>')
    out.append(f'<text x="{left - 50}" y="{(top + bottom) / 2:.1f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 {left - 50} {(top + bottom) / 2:.1f})">{escape(style.y_label)}</text>')
    if style.reference_line is not None:
        r = py(style.reference_line)
        out.append(f'<line x1="{left}" y1="{_fmt(r)}" x2="{right}" y2="{_fmt(r)}" stroke="#888" '
                   f'stroke-dasharray="4 3"/>')
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = [(px(x), py(y)) for x, y in zip(s.x, s.y) if math.isfinite(y)]
        if len(pts) == 1:
            out.append(f'<circle cx="{_fmt(pts[0][0])}" cy="{_fmt(pts[0][1])}" r="3" fill="{color}"/>')
        elif pts:
            coords = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = top + 14 + 14 * i
        out.append(f'<line x1="{right - 150}" y1="{ly}" x2="{right - 130}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{right - 125}" y="{ly + 4}" font-size="11">{escape(s.label)}</text>')
    out.append("</g>")
    return out


def emit_panels(panels, style: PlotStyle = PlotStyle()) -> str:
    """``panels`` is a list of (title, [Series, ...]); panels are stacked vertically."""
    if not panels:
        raise ValidationError("nothing to plot")
    for _, series in panels:
        if not series or any(len(s.x) == 0 or len(s.x) != len(s.y) for s in series):
            raise ValidationError("every series needs matching, non-empty x and y")
    total_h = style.panel_height * len(panels)
    lines = ['<?xml version="1.0" encoding="UTF-8"?>',
             f'<svg xmlns="http://www.w3.org/2000/svg" width="{style.width}" height="{total_h}" '
             f'viewBox="0 0 {style.width} {total_h}" font-family="sans-serif">',
             f'<rect width="{style.width}" height="{total_h}" fill="#fff"/>']
    for k, (title, series) in enumerate(panels):
        lines.extend(_panel(series, title, style, k * style.panel_height))
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_plot(curve: TailCurve, style: PlotStyle = PlotStyle(), *, split: bool = True) -> str:
    """Ratio columns of a TailCurve: one panel per column when ``split``, else overlaid."""
    if curve is None or len(curve) == 0:
        raise ValidationError("empty curve")
    x = tuple(float(v) for v in curve.log_x)
    series = []
    if curve.ratio_normal is not None:
        series.append(Series("normal approx / leading", x, tuple(map(float, curve.ratio_normal))))
    if curve.ratio_tilted is not None:
        series.append(Series("tilted exact / leading", x, tuple(map(float, curve.ratio_tilted))))
    if not series:
        series.append(Series("leading", x, tuple(map(float, curve.leading))))
    if split:
        return emit_panels([(s.label, [s]) for s in series], style)
    return emit_panels([("ratio to leading term", series)], style)
