"""Decision boundaries per business segment and contract-value quartile."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import SEGMENTS

MIN_CELL_SUPPORT = 30
QUARTILES = (1, 2, 3, 4)


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryGrid:
    quartile_cuts: dict[str, tuple[float, float, float]]
    thresholds: dict[tuple[str, int], float]
    support: dict[tuple[str, int], int]
    segment_thresholds: dict[str, float]

    def threshold(self, segment: str, value: float) -> tuple[int, float]:
        if segment not in self.quartile_cuts:
            raise CalibrationError(f"no decision boundaries for segment {segment!r}")
        q = assign_quartile(value, self.quartile_cuts[segment])
        return q, self.thresholds[(segment, q)]

    def to_dict(self) -> dict:
        return {
            "segments": {
                seg: {
                    "cuts": list(self.quartile_cuts[seg]),
                    "segment_threshold": self.segment_thresholds[seg],
                    "thresholds": [self.thresholds[(seg, q)] for q in QUARTILES],
                    "support": [self.support[(seg, q)] for q in QUARTILES],
                }
                for seg in self.quartile_cuts
            }
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoundaryGrid":
        cuts, thr, sup, seg_thr = {}, {}, {}, {}
        for seg, body in d["segments"].items():
            cuts[seg] = tuple(float(c) for c in body["cuts"])
            seg_thr[seg] = float(body["segment_threshold"])
            for q, t, s in zip(QUARTILES, body["thresholds"], body["support"]):
                thr[(seg, q)] = float(t)
                sup[(seg, q)] = int(s)
        return cls(cuts, thr, sup, seg_thr)

    def format_table(self) -> str:
        lines = [f"{'segment':<12}" + "".join(f"{'Q' + str(q):>9}" for q in QUARTILES)]
        for seg, cuts in self.quartile_cuts.items():
            lines.append(f"{seg:<12}" + "".join(f"{self.thresholds[(seg, q)]:>9.3f}" for q in QUARTILES))
        return "\n".join(lines)


def assign_quartile(value: float, cuts) -> int:
    """1..4; a value equal to a cut point belongs to the lower quartile."""
    q1, q2, q3 = cuts
    if value <= q1:
        return 1
    if value <= q2:
        return 2
    if value <= q3:
        return 3
    return 4


def _candidates(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u = np.unique(probs)
    mids = 0.5 * (u[:-1] + u[1:])
    return np.unique(np.r_[0.0, mids, 1.0]), u


def true_conditions(probs, labels, threshold: float) -> int:
    """TP + TN when ``prob > threshold`` is classified won."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    won = p > threshold
    return int(np.sum(won & y) + np.sum(~won & ~y))


def optimal_boundary(probs, labels) -> float:
    """Threshold maximising TP + TN; ties go to the candidate nearest 0.5, then the lower one."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if p.size == 0:
        raise CalibrationError("optimal_boundary needs at least one record")
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    cand, _ = _candidates(p)
    order = np.argsort(p, kind="mergesort")
    ps = p[order]
    ys = y[order]
    # rows at or below the threshold are predicted lost
    n_below = np.searchsorted(ps, cand, side="right")
    neg_cum = np.r_[0, np.cumsum(~ys)]
    pos_cum = np.r_[0, np.cumsum(ys)]
    tn = neg_cum[n_below]
    tp = pos_cum[-1] - pos_cum[n_below]
    score = tp + tn
    best = np.flatnonzero(score == score.max())
    dist = np.abs(cand[best] - 0.5)
    pick = best[np.lexsort((cand[best], dist))[0]]
    return float(cand[pick])


def calibrate_boundaries(segments, values, labels, probs, min_support: int = MIN_CELL_SUPPORT) -> BoundaryGrid:
    segments = np.asarray(segments)
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels)
    probs = np.asarray(probs, dtype=np.float64)
    if not (len(segments) == len(values) == len(labels) == len(probs)):
        raise ValueError("segments, values, labels and probs must be aligned")
    missing = [s for s in SEGMENTS if not np.any(segments == s)]
    if missing:
        raise CalibrationError(f"history has no records for segment(s): {', '.join(missing)}")
    cuts, thr, sup, seg_thr = {}, {}, {}, {}
    for seg in SEGMENTS:
        mask = segments == seg
        v, y, p = values[mask], labels[mask], probs[mask]
        c = tuple(float(x) for x in np.quantile(v, [0.25, 0.5, 0.75]))
        cuts[seg] = c
        seg_thr[seg] = optimal_boundary(p, y)
        q = np.array([assign_quartile(x, c) for x in v])
        for k in QUARTILES:
            cell = q == k
            n = int(cell.sum())
            sup[(seg, k)] = n
            thr[(seg, k)] = optimal_boundary(p[cell], y[cell]) if n >= min_support else seg_thr[seg]
    return BoundaryGrid(cuts, thr, sup, seg_thr)


def classify(prob: float, segment: str, value: float, grid: BoundaryGrid) -> str:
    _, t = grid.threshold(segment, value)
    return "won" if prob > t else "lost"
