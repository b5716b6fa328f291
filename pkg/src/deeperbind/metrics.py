"""Evaluation metrics: Spearman correlation, ROC/AUC, TPR at fixed FPR,
top-k rank chart data, and scatter data with a least-squares line."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ROC_COLUMNS = ("fpr", "tpr")
SCATTER_COLUMNS = ("predicted", "measured")
RANK_COLUMNS = ("probe_index", "measured", "predicted_rank")


class MetricError(ValueError):
    pass


def average_ranks(x) -> np.ndarray:
    """1-based ranks, ascending; tied values share the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(len(x))
    # boundaries of runs of equal values in sorted order
    edges = np.flatnonzero(np.diff(sx) != 0) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [len(x)]])
    for lo, hi in zip(starts, ends):
        ranks[order[lo:hi]] = (lo + hi + 1) / 2.0
    return ranks


def spearman(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError(f"spearman needs two equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise MetricError("spearman needs at least two observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise MetricError("spearman is undefined for a constant input")
    rx = average_ranks(x) - (len(x) + 1) / 2.0
    ry = average_ranks(y) - (len(y) + 1) / 2.0
    r = float(np.dot(rx, ry) / np.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))
    return min(1.0, max(-1.0, r))


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc(scores, labels) -> RocCurve:
    """ROC swept over distinct scores, highest first; tied scores form one step."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError(f"scores and labels must be equal-length vectors, got {s.shape} and {y.shape}")
    P = int(y.sum())
    N = len(y) - P
    if P == 0 or N == 0:
        raise MetricError(f"roc needs both classes, got {P} positives and {N} negatives")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_group = np.concatenate([np.flatnonzero(np.diff(s) != 0), [len(s) - 1]])
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(~y)[last_of_group]
    tp = np.concatenate([[0], tp])
    fp = np.concatenate([[0], fp])
    # integer trapezoid sums keep the area exact before the single division
    area2 = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    return RocCurve(fp / N, tp / P, area2 / (2.0 * P * N))


def tpr_at_fpr(curve: RocCurve, fpr_target: float = 0.01) -> float:
    """TPR at the largest achieved FPR not exceeding the target (no interpolation)."""
    if not 0.0 < fpr_target < 1.0:
        raise MetricError(f"fpr_target must lie in (0, 1), got {fpr_target}")
    ok = curve.fpr <= fpr_target
    return float(curve.tpr[ok].max())


@dataclass
class RankChart:
    indices: np.ndarray  # probe indices, most intense positive first
    ranks: np.ndarray  # their rank under predicted scores
    n: int


def rank_chart(predicted, measured, labels, k: int = 100) -> RankChart:
    """Predicted rank (1 = highest prediction) of the k most intense positives.

    Returned in order of decreasing measured intensity; ties in either
    ordering are broken by original index.
    """
    p = np.asarray(predicted, dtype=np.float64)
    m = np.asarray(measured, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if not p.shape == m.shape == y.shape:
        raise MetricError("predicted, measured and labels must have equal lengths")
    pos = np.flatnonzero(y)
    if len(pos) < k:
        raise MetricError(f"rank chart needs {k} positives, found {len(pos)}")
    top = pos[np.argsort(-m[pos], kind="mergesort")[:k]]
    rank = np.empty(len(p), dtype=int)
    rank[np.argsort(-p, kind="mergesort")] = np.arange(1, len(p) + 1)
    return RankChart(top, rank[top], len(p))


@dataclass
class ScatterFit:
    predicted: np.ndarray
    measured: np.ndarray
    slope: float
    intercept: float

    @property
    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.predicted.tolist(), self.measured.tolist()))


def scatter_with_regression(predicted, measured) -> ScatterFit:
    """Ordinary least squares of measured on predicted."""
    x = np.asarray(predicted, dtype=np.float64)
    y = np.asarray(measured, dtype=np.float64)
    if x.shape != y.shape or len(x) < 2:
        raise MetricError("scatter needs two equal-length vectors with n >= 2")
    if np.all(x == x[0]):
        raise MetricError("regression is undefined for constant predictions")
    xc = x - x.mean()
    slope = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    intercept = float(y.mean() - slope * x.mean())
    return ScatterFit(x, y, slope, intercept)


# ---------------------------------------------------------------------------
# CSV output and input
# ---------------------------------------------------------------------------

def _write(path, columns: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_roc_csv(curve: RocCurve, path) -> None:
    _write(path, ROC_COLUMNS, curve.points)


def write_scatter_csv(fit: ScatterFit, path) -> None:
    _write(path, SCATTER_COLUMNS, fit.pairs)


def write_rank_csv(chart: RankChart, measured, path) -> None:
    m = np.asarray(measured, dtype=np.float64)
    _write(path, RANK_COLUMNS, [(int(i), float(m[i]), int(r)) for i, r in zip(chart.indices, chart.ranks)])


def read_csv(path, expected: Sequence[str]) -> dict[str, np.ndarray]:
    """Read a metric CSV, checking its header against ``expected``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MetricError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if tuple(header) != tuple(expected):
        raise MetricError(f"{path}: columns {header} do not match expected {list(expected)}")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as e:
        raise MetricError(f"{path}: non-numeric value ({e})") from None
    if data.size and data.shape[1] != len(expected):
        raise MetricError(f"{path}: rows do not have {len(expected)} columns")
    data = data.reshape(-1, len(expected))
    return {name: data[:, i] for i, name in enumerate(expected)}


def detect_kind(path) -> str:
    with open(path, newline="") as fh:
        header = tuple(h.strip() for h in next(csv.reader(fh), []))
    for kind, cols in (("roc", ROC_COLUMNS), ("scatter", SCATTER_COLUMNS), ("rank", RANK_COLUMNS)):
        if header == cols:
            return kind
    raise MetricError(f"{path}: unrecognised columns {list(header)}; expected one of "
                      f"{list(ROC_COLUMNS)}, {list(SCATTER_COLUMNS)}, {list(RANK_COLUMNS)}")
