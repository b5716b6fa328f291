"""Minimal deterministic SVG charts (ROC, scatter with fit, rank chart).

Output depends only on the data: coordinates are rounded to two decimals and
nothing time- or environment-dependent is written.
"""

from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 800, 600
LEFT, RIGHT, TOP, BOTTOM = 80, 30, 50, 70
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
MAX_POINTS = 5000


def _num(v: float) -> str:
    s = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


class _Axes:
    def __init__(self, xlim, ylim):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0

    def px(self, x):
        return LEFT + (np.asarray(x, float) - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)

    def py(self, y):
        return HEIGHT - BOTTOM - (np.asarray(y, float) - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / n for i in range(n + 1)]


def _frame(ax: _Axes, title: str, xlabel: str, ylabel: str) -> list[str]:
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="28" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{WIDTH - LEFT - RIGHT}" height="{HEIGHT - TOP - BOTTOM}" '
        f'fill="none" stroke="black"/>',
    ]
    for t in _ticks(ax.x0, ax.x1):
        x = _num(float(ax.px(t)))
        out.append(f'<line x1="{x}" y1="{HEIGHT - BOTTOM}" x2="{x}" y2="{HEIGHT - BOTTOM + 5}" stroke="black"/>')
        out.append(f'<text x="{x}" y="{HEIGHT - BOTTOM + 20}" text-anchor="middle">{_num(t)}</text>')
    for t in _ticks(ax.y0, ax.y1):
        y = _num(float(ax.py(t)))
        out.append(f'<line x1="{LEFT - 5}" y1="{y}" x2="{LEFT}" y2="{y}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{y}" text-anchor="end" dominant-baseline="middle">{_num(t)}</text>')
    out.append(f'<text x="{(LEFT + WIDTH - RIGHT) // 2}" y="{HEIGHT - 25}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    cy = (TOP + HEIGHT - BOTTOM) // 2
    out.append(f'<text x="22" y="{cy}" text-anchor="middle" transform="rotate(-90 22 {cy})">'
               f'{escape(ylabel)}</text>')
    return out


def _polyline(ax: _Axes, x, y, color: str, dash: str | None = None) -> str:
    pts = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(ax.px(x).tolist(), ax.py(y).tolist()))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{extra}/>'


def _legend(entries: Sequence[tuple[str, str]]) -> list[str]:
    out = []
    for i, (label, color) in enumerate(entries):
        y = TOP + 18 + 18 * i
        out.append(f'<line x1="{WIDTH - RIGHT - 200}" y1="{y}" x2="{WIDTH - RIGHT - 180}" y2="{y}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - RIGHT - 174}" y="{y}" dominant-baseline="middle">{escape(label)}</text>')
    return out


def _thin(n: int) -> np.ndarray:
    """Evenly spaced subset of indices so large arrays keep files small."""
    if n <= MAX_POINTS:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, MAX_POINTS).round().astype(int))


def roc_svg(curves: Sequence[tuple[str, Sequence[float], Sequence[float], float]], title: str = "ROC") -> str:
    """``curves`` holds (label, fpr, tpr, auc) per model."""
    ax = _Axes((0.0, 1.0), (0.0, 1.0))
    out = _frame(ax, title, "false positive rate", "true positive rate")
    out.append(_polyline(ax, [0, 1], [0, 1], "#888888", "4 4"))
    legend = []
    for i, (label, fpr, tpr, auc) in enumerate(curves):
        color = COLORS[i % len(COLORS)]
        keep = _thin(len(fpr))
        out.append(_polyline(ax, np.asarray(fpr)[keep], np.asarray(tpr)[keep], color))
        legend.append((f"{label} (AUC {auc:.3f})", color))
    out += _legend(legend)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter_svg(predicted, measured, slope: float, intercept: float, title: str = "Predicted vs measured") -> str:
    x = np.asarray(predicted, float)
    y = np.asarray(measured, float)
    lo = float(min(x.min(), y.min()))
    hi = float(max(x.max(), y.max()))
    ax = _Axes((lo, hi), (lo, hi))
    out = _frame(ax, title, "predicted intensity", "measured intensity")
    keep = _thin(len(x))
    for a, b in zip(ax.px(x[keep]).tolist(), ax.py(y[keep]).tolist()):
        out.append(f'<circle cx="{_num(a)}" cy="{_num(b)}" r="1.5" fill="{COLORS[0]}" fill-opacity="0.5"/>')
    out.append(_polyline(ax, [lo, hi], [lo, hi], "#888888", "4 4"))
    # clip the fitted line to the plotting box
    fx = np.linspace(lo, hi, 50)
    fy = slope * fx + intercept
    ok = (fy >= lo) & (fy <= hi)
    if ok.sum() >= 2:
        out.append(_polyline(ax, fx[ok], fy[ok], COLORS[1]))
    out += _legend([(f"fit y = {slope:.3f} x + {intercept:.3f}", COLORS[1]), ("y = x", "#888888")])
    out.append("</svg>")
    return "\n".join(out) + "\n"


def rank_svg(ranks, n: int, title: str = "Predicted rank of top positives") -> str:
    r = np.asarray(ranks, float)
    k = len(r)
    ax = _Axes((1.0, max(k, 2)), (1.0, float(max(n, 2))))
    out = _frame(ax, title, "measured order (1 = most intense)", "predicted rank")
    for a, b in zip(ax.px(np.arange(1, k + 1)).tolist(), ax.py(r).tolist()):
        out.append(f'<circle cx="{_num(a)}" cy="{_num(b)}" r="2.5" fill="{COLORS[0]}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
