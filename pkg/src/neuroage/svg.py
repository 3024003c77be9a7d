"""Minimal SVG charts: polylines, scatter markers, bars, axes and ticks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    line: bool = True
    markers: bool = True
    color: Optional[str] = None


@dataclass
class Bars:
    edges: Sequence[float]
    heights: Sequence[float]
    color: str = "#9ecae1"


@dataclass
class Chart:
    title: str
    xlabel: str
    ylabel: str
    log_x: bool = False
    width: int = 640
    height: int = 420
    series: list[Series] = field(default_factory=list)
    bars: list[Bars] = field(default_factory=list)
    # points drawn as hollow red squares at the given x, pinned to the bottom axis
    flags: list[tuple[float, str]] = field(default_factory=list)


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    a = abs(v)
    if a >= 1e4 or a < 1e-2:
        return f"{v:.3g}"
    return f"{v:.4g}"


def _nice_ticks(lo: float, hi: float, n: int = 6) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def render(c: Chart) -> str:
    xs, ys = [], []
    for s in c.series:
        for x, y in zip(s.x, s.y):
            if math.isfinite(x) and math.isfinite(y) and (x > 0 or not c.log_x):
                xs.append(x)
                ys.append(y)
    for b in c.bars:
        xs += list(b.edges)
        ys += list(b.heights) + [0.0]
    xs += [x for x, _ in c.flags if x > 0 or not c.log_x]
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    tx = (lambda v: math.log10(v)) if c.log_x else (lambda v: v)
    x0, x1 = tx(min(xs)), tx(max(xs))
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    pad = 0.05 * (y1 - y0) if y1 > y0 else 1.0
    y0, y1 = y0 - pad, y1 + pad
    L, R, T, B = 70, 20, 40, 55
    pw, ph = c.width - L - R, c.height - T - B

    def px(v):
        return L + (tx(v) - x0) / (x1 - x0) * pw

    def py(v):
        return T + (y1 - v) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{c.width}" height="{c.height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{c.width}" height="{c.height}" fill="white"/>',
           f'<text x="{c.width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(c.title)}</text>']
    for b in c.bars:
        for (a, e), h in zip(zip(b.edges[:-1], b.edges[1:]), b.heights):
            out.append(f'<rect x="{px(a):.2f}" y="{py(h):.2f}" width="{px(e) - px(a):.2f}" '
                       f'height="{py(0) - py(h):.2f}" fill="{b.color}" stroke="#6baed6"/>')
    out.append(f'<rect x="{L}" y="{T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    if c.log_x:
        xt = [10.0 ** k for k in range(math.floor(x0), math.ceil(x1) + 1) if x0 - 1e-9 <= k <= x1 + 1e-9]
    else:
        xt = _nice_ticks(x0, x1)
    for v in xt:
        X = px(v)
        out.append(f'<line x1="{X:.2f}" y1="{T + ph}" x2="{X:.2f}" y2="{T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{T + ph + 18}" text-anchor="middle">{_fmt(v)}</text>')
    for v in _nice_ticks(y0, y1):
        Y = py(v)
        out.append(f'<line x1="{L - 5}" y1="{Y:.2f}" x2="{L}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{L - 8}" y="{Y + 4:.2f}" text-anchor="end">{_fmt(v)}</text>')
    out.append(f'<text x="{L + pw / 2:.1f}" y="{c.height - 12}" text-anchor="middle">{escape(c.xlabel)}</text>')
    out.append(f'<text x="16" y="{T + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {T + ph / 2:.1f})">{escape(c.ylabel)}</text>')
    for k, s in enumerate(c.series):
        col = s.color or COLORS[k % len(COLORS)]
        pts = [(px(x), py(y)) for x, y in zip(s.x, s.y)
               if math.isfinite(x) and math.isfinite(y) and (x > 0 or not c.log_x)]
        if s.line and len(pts) > 1:
            d = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
            out.append(f'<polyline points="{d}" fill="none" stroke="{col}" stroke-width="1.5"/>')
        if s.markers:
            out += [f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2.5" fill="{col}"/>' for a, b in pts]
        out.append(f'<text x="{L + 10}" y="{T + 16 + 14 * k}" fill="{col}">{escape(s.label)}</text>')
    for x, label in c.flags:
        if x > 0 or not c.log_x:
            X, Y = px(x), T + ph - 8
            out.append(f'<rect x="{X - 4:.2f}" y="{Y - 4:.2f}" width="8" height="8" fill="none" '
                       f'stroke="#d62728" stroke-width="1.5"><title>{escape(label)}</title></rect>')
    if c.flags:
        out.append(f'<text x="{L + pw - 10}" y="{T + 16}" text-anchor="end" fill="#d62728">'
                   f'squares: aged no-spike</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write(path, c: Chart) -> None:
    with open(path, "w") as fh:
        fh.write(render(c))


def gaussian_curve(mean: float, sd: float, n: int, bin_width: float, lo: float, hi: float,
                   points: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Normal density scaled to histogram counts."""
    x = np.linspace(lo, hi, points)
    y = n * bin_width / (sd * math.sqrt(2 * math.pi)) * np.exp(-0.5 * ((x - mean) / sd) ** 2)
    return x, y
