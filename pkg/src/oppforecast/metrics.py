"""Statistical and monetary classification metrics, and ROC AUC."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MonetaryCounts:
    tp_m: float
    tn_m: float
    fp_m: float
    fn_m: float

    @property
    def total(self) -> float:
        return self.tp_m + self.tn_m + self.fp_m + self.fn_m


@dataclass(frozen=True)
class StatisticalMetrics:
    precision: float
    recall: float
    accuracy: float
    f1: float
    degenerate: bool = False


@dataclass(frozen=True)
class MonetaryMetrics:
    precision_m: float
    recall_m: float
    accuracy_m: float
    degenerate: bool = False


@dataclass(frozen=True)
class MetricReport:
    precision: float
    recall: float
    accuracy: float
    f1: float
    auc: float
    precision_m: float
    recall_m: float
    accuracy_m: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _as_won(v) -> np.ndarray:
    """Accept booleans, 0/1 or 'won'/'lost' strings; True means won."""
    arr = np.asarray(v)
    if arr.dtype.kind in "US":
        lowered = np.char.lower(arr.astype(str))
        bad = ~np.isin(lowered, ["won", "lost"])
        if bad.any():
            raise ValueError(f"labels must be won/lost, got {arr[bad][0]!r}")
        return lowered == "won"
    return arr.astype(bool)


def _check_aligned(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")


def confusion(predicted, actual) -> ConfusionCounts:
    p = _as_won(predicted)
    a = _as_won(actual)
    _check_aligned(p, a)
    if p.size == 0:
        raise ValueError("confusion needs at least one record")
    return ConfusionCounts(
        tp=int(np.sum(p & a)),
        tn=int(np.sum(~p & ~a)),
        fp=int(np.sum(p & ~a)),
        fn=int(np.sum(~p & a)),
    )


def monetary_confusion(predicted, actual, values) -> MonetaryCounts:
    p = _as_won(predicted)
    a = _as_won(actual)
    v = np.asarray(values, dtype=np.float64)
    _check_aligned(p, a)
    _check_aligned(p, v)
    return MonetaryCounts(
        tp_m=float(np.sum(v[p & a])),
        tn_m=float(np.sum(v[~p & ~a])),
        fp_m=float(np.sum(v[p & ~a])),
        fn_m=float(np.sum(v[~p & a])),
    )


def _ratio(num, den) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def statistical_metrics(c: ConfusionCounts) -> StatisticalMetrics:
    precision, d1 = _ratio(c.tp, c.tp + c.fp)
    recall, d2 = _ratio(c.tp, c.tp + c.fn)
    accuracy, d3 = _ratio(c.tp + c.tn, c.total)
    if precision > 0 and recall > 0:
        f1 = 2.0 / (1.0 / recall + 1.0 / precision)
        d4 = False
    else:
        f1, d4 = 0.0, True
    return StatisticalMetrics(precision, recall, accuracy, f1, d1 or d2 or d3 or d4)


def monetary_metrics(m: MonetaryCounts) -> MonetaryMetrics:
    precision, d1 = _ratio(m.tp_m, m.tp_m + m.fp_m)
    recall, d2 = _ratio(m.tp_m, m.tp_m + m.fn_m)
    accuracy, d3 = _ratio(m.tp_m + m.tn_m, m.total)
    return MonetaryMetrics(precision, recall, accuracy, d1 or d2 or d3)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(xs)]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(len(x))
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def roc_auc(probs, labels) -> float:
    """Probability that a random positive outranks a random negative (ties count 1/2)."""
    p = np.asarray(probs, dtype=np.float64)
    y = _as_won(labels)
    _check_aligned(p, y)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    ranks = _average_ranks(p)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(probs, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(false positive rate, true positive rate, thresholds), thresholds descending."""
    p = np.asarray(probs, dtype=np.float64)
    y = _as_won(labels)
    thresholds = np.unique(p)[::-1]
    n_pos = max(int(y.sum()), 1)
    n_neg = max(len(y) - int(y.sum()), 1)
    tpr = np.array([np.sum(y & (p >= t)) for t in thresholds]) / n_pos
    fpr = np.array([np.sum(~y & (p >= t)) for t in thresholds]) / n_neg
    return np.r_[0.0, fpr], np.r_[0.0, tpr], np.r_[np.inf, thresholds]


def metric_report(predicted, actual, values, probs=None) -> MetricReport:
    c = confusion(predicted, actual)
    m = monetary_confusion(predicted, actual, values)
    s = statistical_metrics(c)
    mm = monetary_metrics(m)
    auc = roc_auc(probs, actual) if probs is not None else float("nan")
    return MetricReport(s.precision, s.recall, s.accuracy, s.f1, auc,
                        mm.precision_m, mm.recall_m, mm.accuracy_m, s.degenerate or mm.degenerate)


_ROWS = (
    ("Statistical Performance", None),
    ("Precision", "precision"),
    ("Recall", "recall"),
    ("F1-Score", "f1"),
    ("Accuracy", "accuracy"),
    ("AUC", "auc"),
    ("Monetary Performance", None),
    ("Precision_m", "precision_m"),
    ("Recall_m", "recall_m"),
    ("Accuracy_m", "accuracy_m"),
)


def format_table(ml: MetricReport, user: MetricReport | None = None, digits: int = 2) -> str:
    """Aligned text table: metric, optional user-entered column, ML column."""
    header = ["Metric"] + (["User-Entered"] if user is not None else []) + ["ML"]
    lines = []
    for title, attr in _ROWS:
        if attr is None:
            lines.append([title])
            continue
        cells = [title]
        for rep in ([user] if user is not None else []) + [ml]:
            v = getattr(rep, attr)
            cells.append("n/a" if v != v else f"{v:.{digits}f}")
        lines.append(cells)
    widths = [max(len(header[i]), *(len(r[i]) for r in lines if len(r) > i)) for i in range(len(header))]
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    out.append("  ".join("-" * w for w in widths))
    for r in lines:
        out.append(r[0] if len(r) == 1 else "  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(out)
