"""Minimal static SVG emitters for convergence curves and layout maps.

Hand-rolled on purpose: the outputs are result displays, not an interactive
plotting surface, and this keeps the runtime dependency-free.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, Sequence

from .network import RoadNetwork

_MARGIN = 55
_WIDTH = 640
_HEIGHT = 420
_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min(s for s in (mag, 2 * mag, 5 * mag, 10 * mag) if s >= raw)
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-9 * step:
        out.append(round(t, 12))
        t += step
    return out


def line_plot(
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    path: str | Path,
    x_label: str = "x",
    y_label: str = "y",
    title: str = "",
) -> None:
    """Write a multi-series line plot; each series is (label, xs, ys)."""
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    if not xs_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(x: float) -> float:
        return _MARGIN + (x - x_lo) / (x_hi - x_lo) * (_WIDTH - 2 * _MARGIN)

    def sy(y: float) -> float:
        return _HEIGHT - _MARGIN - (y - y_lo) / (y_hi - y_lo) * (_HEIGHT - 2 * _MARGIN)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'font-family="sans-serif" font-size="11">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    axis = f'stroke="#333" stroke-width="1"'
    parts.append(f'<line x1="{_MARGIN}" y1="{_HEIGHT - _MARGIN}" x2="{_WIDTH - _MARGIN}" y2="{_HEIGHT - _MARGIN}" {axis}/>')
    parts.append(f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" y2="{_HEIGHT - _MARGIN}" {axis}/>')
    for t in _ticks(x_lo, x_hi):
        parts.append(f'<line x1="{sx(t)}" y1="{_HEIGHT - _MARGIN}" x2="{sx(t)}" y2="{_HEIGHT - _MARGIN + 4}" {axis}/>')
        parts.append(f'<text x="{sx(t)}" y="{_HEIGHT - _MARGIN + 16}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y_lo, y_hi):
        parts.append(f'<line x1="{_MARGIN - 4}" y1="{sy(t)}" x2="{_MARGIN}" y2="{sy(t)}" {axis}/>')
        parts.append(f'<text x="{_MARGIN - 7}" y="{sy(t) + 4}" text-anchor="end">{t:g}</text>')
    parts.append(
        f'<text x="{_WIDTH / 2}" y="{_HEIGHT - 12}" text-anchor="middle">{x_label}</text>'
    )
    parts.append(
        f'<text x="16" y="{_HEIGHT / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_HEIGHT / 2})">{y_label}</text>'
    )
    for i, (label, xs, ys) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"/>')
        parts.append(
            f'<text x="{_WIDTH - _MARGIN - 4}" y="{_MARGIN + 14 * i + 6}" text-anchor="end" '
            f'fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def layout_map(
    net: RoadNetwork, stations: Iterable[int], path: str | Path, title: str = ""
) -> None:
    """Network map with candidates hollow, built stations filled."""
    stations = set(stations)
    x_min, y_min, x_max, y_max = net.bounding_box()
    dx = (x_max - x_min) or 1.0
    dy = (y_max - y_min) or 1.0
    scale = min((_WIDTH - 2 * _MARGIN) / dx, (_HEIGHT - 2 * _MARGIN) / dy)

    def s(x: float, y: float) -> tuple[float, float]:
        return (_MARGIN + (x - x_min) * scale, _HEIGHT - _MARGIN - (y - y_min) * scale)

    coords = net.coords()
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'font-family="sans-serif" font-size="10">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    for u, v, _ in net.edges:
        (x1, y1), (x2, y2) = s(*coords[u]), s(*coords[v])
        parts.append(
            f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}" '
            f'stroke="#9db4c8" stroke-width="1.2"/>'
        )
    for n in net.nodes:
        x, y = s(n.x_m, n.y_m)
        if n.node_id in stations:
            parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="7" fill="#d62728"/>')
        elif n.is_candidate:
            parts.append(
                f'<circle cx="{x:.1f}" cy="{y:.1f}" r="4.5" fill="white" stroke="#d62728" stroke-width="1.4"/>'
            )
        else:
            parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="#555"/>')
        parts.append(f'<text x="{x + 6:.1f}" y="{y - 5:.1f}">{n.node_id}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
