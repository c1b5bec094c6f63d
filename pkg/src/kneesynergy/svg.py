"""Minimal hand-written SVG charts: line plots and stick-figure keyframes.

Output is plain text with fixed-precision coordinates, so identical inputs
give byte-identical files.
"""

from __future__ import annotations

import math
from html import escape
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics import ModelParams, joint_positions

WIDTH, HEIGHT = 640, 400
MARGIN = (60, 20, 40, 50)  # left, right, top, bottom
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    """Round-numbered ticks covering ``[lo, hi]``."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return ticks


def _num(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    return f"{v:.6g}"


class _Frame:
    def __init__(self, xlim, ylim, width=WIDTH, height=HEIGHT, equal=False):
        self.w, self.h = width, height
        l, r, t, b = MARGIN
        self.px0, self.px1 = l, width - r
        self.py0, self.py1 = height - b, t
        (x0, x1), (y0, y1) = xlim, ylim
        if x1 <= x0:
            x0, x1 = x0 - 0.5, x0 + 0.5
        if y1 <= y0:
            y0, y1 = y0 - 0.5, y0 + 0.5
        if equal:
            sx = (self.px1 - self.px0) / (x1 - x0)
            sy = (self.py0 - self.py1) / (y1 - y0)
            s = min(sx, sy)
            cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
            hx = (self.px1 - self.px0) / s / 2
            hy = (self.py0 - self.py1) / s / 2
            x0, x1, y0, y1 = cx - hx, cx + hx, cy - hy, cy + hy
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0, y1

    def X(self, x):
        return self.px0 + (np.asarray(x, float) - self.x0) / (self.x1 - self.x0) * (self.px1 - self.px0)

    def Y(self, y):
        return self.py0 - (np.asarray(y, float) - self.y0) / (self.y1 - self.y0) * (self.py0 - self.py1)


def _polyline(fr: _Frame, x, y, color: str, width: float = 1.5, dash: str | None = None) -> str:
    pts = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(fr.X(x), fr.Y(y)))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline fill="none" stroke="{color}" stroke-width="{width}"{extra} points="{pts}"/>'


def _axes(fr: _Frame, title: str, xlabel: str, ylabel: str) -> list[str]:
    out = [f'<rect x="0" y="0" width="{fr.w}" height="{fr.h}" fill="white"/>',
           f'<rect x="{fr.px0}" y="{fr.py1}" width="{fr.px1 - fr.px0}" height="{fr.py0 - fr.py1}" '
           f'fill="none" stroke="black" stroke-width="1"/>']
    for v in nice_ticks(fr.x0, fr.x1):
        x = float(fr.X(v))
        out.append(f'<line x1="{_num(x)}" y1="{fr.py0}" x2="{_num(x)}" y2="{fr.py0 + 5}" stroke="black"/>')
        out.append(f'<text x="{_num(x)}" y="{fr.py0 + 18}" font-size="11" text-anchor="middle">'
                   f'{_tick_label(v)}</text>')
    for v in nice_ticks(fr.y0, fr.y1):
        y = float(fr.Y(v))
        out.append(f'<line x1="{fr.px0 - 5}" y1="{_num(y)}" x2="{fr.px0}" y2="{_num(y)}" stroke="black"/>')
        out.append(f'<text x="{fr.px0 - 8}" y="{_num(y + 4)}" font-size="11" text-anchor="end">'
                   f'{_tick_label(v)}</text>')
    out.append(f'<text x="{fr.w / 2:.1f}" y="16" font-size="13" text-anchor="middle">{escape(title)}</text>')
    out.append(f'<text x="{(fr.px0 + fr.px1) / 2:.1f}" y="{fr.h - 8}" font-size="12" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    cy = (fr.py0 + fr.py1) / 2
    out.append(f'<text x="14" y="{cy:.1f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {cy:.1f})">{escape(ylabel)}</text>')
    return out


def _document(fr: _Frame, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{fr.w}" height="{fr.h}" '
            f'viewBox="0 0 {fr.w} {fr.h}" font-family="sans-serif">')
    return "\n".join([head, *body, "</svg>"]) + "\n"


def _limits(arrays, pad=0.05):
    finite = [np.asarray(a, float)[np.isfinite(a)] for a in arrays]
    finite = [a for a in finite if a.size]
    if not finite:
        return 0.0, 1.0
    lo = min(float(a.min()) for a in finite)
    hi = max(float(a.max()) for a in finite)
    span = hi - lo if hi > lo else max(abs(hi), 1.0)
    return lo - pad * span, hi + pad * span


def line_chart(series: Sequence[tuple[str, Sequence[float], Sequence[float]]], *, title: str = "",
               xlabel: str = "", ylabel: str = "", vlines: Sequence[float] = (),
               hlines: Sequence[float] = (), markers: bool = False) -> str:
    """Overlay of ``(label, x, y)`` series with a legend; ``markers`` draws points instead of lines."""
    xs = [s[1] for s in series]
    ys = [s[2] for s in series] + [np.asarray(hlines, float)]
    fr = _Frame(_limits(xs, 0.0 if not markers else 0.05), _limits(ys))
    body = _axes(fr, title, xlabel, ylabel)
    for v in vlines:
        x = float(fr.X(v))
        body.append(f'<line x1="{_num(x)}" y1="{fr.py0}" x2="{_num(x)}" y2="{fr.py1}" '
                    f'stroke="gray" stroke-dasharray="4 3"/>')
    for v in hlines:
        y = float(fr.Y(v))
        body.append(f'<line x1="{fr.px0}" y1="{_num(y)}" x2="{fr.px1}" y2="{_num(y)}" '
                    f'stroke="gray" stroke-dasharray="2 2"/>')
    for k, (label, x, y) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        if markers:
            for a, b in zip(fr.X(x), fr.Y(y)):
                body.append(f'<circle cx="{_num(a)}" cy="{_num(b)}" r="3" fill="{color}"/>')
        else:
            body.append(_polyline(fr, x, y, color))
        ly = fr.py1 + 14 + 14 * k
        body.append(f'<line x1="{fr.px1 - 110}" y1="{ly - 4}" x2="{fr.px1 - 90}" y2="{ly - 4}" '
                    f'stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{fr.px1 - 85}" y="{ly}" font-size="11">{escape(label)}</text>')
    return _document(fr, body)


def stick_figure(p: ModelParams, q: np.ndarray, *, every: int = 10, title: str = "") -> str:
    """Keyframes of the three-link chain; ``q`` is (3, n), every ``every``-th frame drawn."""
    q = np.asarray(q, dtype=float)
    idx = list(range(0, q.shape[1], max(1, every)))
    if idx[-1] != q.shape[1] - 1:
        idx.append(q.shape[1] - 1)
    frames = [joint_positions(p, q[:, i]) for i in idx]
    pts = np.vstack(frames)
    xlim = _limits([pts[:, 0]], 0.1)
    ylim = _limits([np.append(pts[:, 1], 0.0)], 0.1)
    fr = _Frame(xlim, ylim, equal=True)
    body = _axes(fr, title, "x [m]", "y [m]")
    y0 = float(fr.Y(0.0))
    body.append(f'<line x1="{fr.px0}" y1="{_num(y0)}" x2="{fr.px1}" y2="{_num(y0)}" '
                f'stroke="saddlebrown" stroke-width="1.5"/>')
    for k, P in enumerate(frames):
        shade = int(200 - 200 * k / max(1, len(frames) - 1))
        color = f"#{shade:02x}{shade:02x}{shade:02x}"
        body.append(_polyline(fr, P[:2, 0], P[:2, 1], color, 1.0, "3 2"))  # stance leg
        body.append(_polyline(fr, P[1:, 0], P[1:, 1], color, 1.5))
    return _document(fr, body)


def write(path: str | Path, svg: str) -> None:
    Path(path).write_text(svg, encoding="utf-8")
