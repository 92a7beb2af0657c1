"""Minimal SVG line plots of opinion trajectories."""

from __future__ import annotations

from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = 48


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def trajectory_svg(
    nonexperts: np.ndarray,
    experts: Optional[np.ndarray] = None,
    goal: Optional[float] = None,
    y_range: Optional[tuple[float, float]] = None,
    title: str = "",
) -> str:
    """Render opinions over time.

    ``nonexperts`` is ``(steps, m)`` and ``experts`` is ``(steps, n)``; one
    polyline per agent, experts drawn thicker in red, and a dashed line at the
    global goal.
    """
    nonexperts = np.asarray(nonexperts, dtype=float)
    experts = np.zeros((len(nonexperts), 0)) if experts is None else np.asarray(experts, dtype=float)
    steps = max(len(nonexperts) - 1, 1)
    if y_range is None:
        vals = np.concatenate([nonexperts.ravel(), experts.ravel()] + ([np.array([goal])] if goal is not None else []))
        y_range = (float(vals.min()), float(vals.max())) if vals.size else (0.0, 1.0)
    lo, hi = y_range
    if hi <= lo:
        hi = lo + 1.0
    pw, ph = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def px(t: float) -> float:
        return MARGIN + pw * t / steps

    def py(v: float) -> float:
        return MARGIN + ph * (1.0 - (v - lo) / (hi - lo))

    def polyline(series: Sequence[float], style: str) -> str:
        pts = " ".join(f"{_fmt(px(t))},{_fmt(py(v))}" for t, v in enumerate(series))
        return f'<polyline points="{pts}" fill="none" {style}/>'

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]
    for v in np.linspace(lo, hi, 5):
        out.append(
            f'<text x="{MARGIN - 6}" y="{_fmt(py(v) + 4)}" font-size="11" text-anchor="end">{_fmt(v)}</text>'
        )
    for t in np.linspace(0, steps, min(steps, 7) + 1):
        out.append(
            f'<text x="{_fmt(px(t))}" y="{HEIGHT - MARGIN + 16}" font-size="11" text-anchor="middle">{int(round(t))}</text>'
        )
    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 8}" font-size="12" text-anchor="middle">time step</text>')
    out.append(
        f'<text x="14" y="{HEIGHT / 2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {HEIGHT / 2})">opinion</text>'
    )
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="20" font-size="14" text-anchor="middle">{escape(title)}</text>')
    if goal is not None:
        out.append(
            f'<line x1="{MARGIN}" y1="{_fmt(py(goal))}" x2="{WIDTH - MARGIN}" y2="{_fmt(py(goal))}" '
            'stroke="green" stroke-dasharray="6,4"/>'
        )
    for j in range(nonexperts.shape[1]):
        out.append(polyline(nonexperts[:, j], 'stroke="steelblue" stroke-width="1" stroke-opacity="0.7"'))
    for j in range(experts.shape[1]):
        out.append(polyline(experts[:, j], 'stroke="crimson" stroke-width="2.5"'))
    out.append("</svg>")
    return "\n".join(out) + "\n"
