"""Per-categorical lookup tables of historical outcome statistics.

For every distinct value of a categorical feature the training records give
counts (total/won/lost), the win rate, and the mean, standard deviation,
standard error and coefficient of variation of the won contract values.
Those eight statistics plus the record's 1-D Mahalanobis distance to the
value's won-contract distribution become nine model columns per feature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ingest import (
    BOOLEAN_FEATURES,
    CATEGORICAL_FEATURES,
    OpportunityRecord,
    RecordSet,
    ValidationError,
)

EPS = 1e-9
MAHALANOBIS_CAP = 1e6

STAT_NAMES = (
    "n_total",
    "n_won",
    "n_lost",
    "mean_won_value",
    "sem_won_value",
    "win_rate",
    "cv_won_value",
    "std_won_value",
)
DERIVED_NAMES = STAT_NAMES + ("mahalanobis",)
BASE_COLUMNS = CATEGORICAL_FEATURES + BOOLEAN_FEATURES + ("project_duration", "total_contract_value")
N_MODEL_COLUMNS = len(BASE_COLUMNS) + len(CATEGORICAL_FEATURES) * len(DERIVED_NAMES)


class EnhanceError(ValueError):
    pass


@dataclass(frozen=True)
class LookupRow:
    feature_value: str
    n_total: int
    n_won: int
    n_lost: int
    mean_won_value: float
    sem_won_value: float
    std_won_value: float
    win_rate: float
    cv_won_value: float

    def stats(self) -> tuple[float, ...]:
        return tuple(float(getattr(self, s)) for s in STAT_NAMES)

    def to_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "n_won": self.n_won,
            "n_lost": self.n_lost,
            "mean_won_value": self.mean_won_value,
            "sem_won_value": self.sem_won_value,
            "std_won_value": self.std_won_value,
            "win_rate": self.win_rate,
            "cv_won_value": self.cv_won_value,
        }

    @classmethod
    def from_dict(cls, value: str, d: dict) -> "LookupRow":
        return cls(
            feature_value=value,
            n_total=int(d["n_total"]),
            n_won=int(d["n_won"]),
            n_lost=int(d["n_lost"]),
            mean_won_value=float(d["mean_won_value"]),
            sem_won_value=float(d["sem_won_value"]),
            std_won_value=float(d["std_won_value"]),
            win_rate=float(d["win_rate"]),
            cv_won_value=float(d["cv_won_value"]),
        )


@dataclass(frozen=True)
class LookupTable:
    feature_name: str
    rows: dict[str, LookupRow]
    global_fallback: LookupRow

    def get(self, value) -> LookupRow:
        if value is None:
            return self.global_fallback
        return self.rows.get(value, self.global_fallback)

    def code(self, value) -> int:
        """First-appearance index of the value in training, -1 when unseen."""
        return self._codes.get(value, -1)

    @property
    def _codes(self) -> dict[str, int]:
        codes = self.__dict__.get("_code_cache")
        if codes is None:
            codes = {v: i for i, v in enumerate(self.rows)}
            object.__setattr__(self, "_code_cache", codes)
        return codes

    def to_dict(self) -> dict:
        return {
            "feature_name": self.feature_name,
            "rows": {v: r.to_dict() for v, r in self.rows.items()},
            "fallback": self.global_fallback.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LookupTable":
        return cls(
            feature_name=d["feature_name"],
            rows={v: LookupRow.from_dict(v, r) for v, r in d["rows"].items()},
            global_fallback=LookupRow.from_dict("__all__", d["fallback"]),
        )


@dataclass
class FeatureMatrix:
    row_ids: list[str]
    column_names: list[str]
    values: np.ndarray
    label: np.ndarray | None = None

    @property
    def key_columns(self) -> tuple[int, ...]:
        """Indices of the categorical code columns (split-search grouping hint)."""
        return tuple(self.column_names.index(c) for c in CATEGORICAL_FEATURES)

    def take(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx)
        return FeatureMatrix(
            [self.row_ids[i] for i in idx],
            self.column_names,
            self.values[idx],
            None if self.label is None else self.label[idx],
        )

    def __len__(self) -> int:
        return len(self.row_ids)


def _won_moments(won_values: list[float]) -> tuple[float, float, float, float]:
    """mean, sample std, SEM and CV; NaN where undefined."""
    k = len(won_values)
    if k == 0:
        return math.nan, math.nan, math.nan, math.nan
    arr = np.asarray(won_values, dtype=np.float64)
    mean = float(arr.mean())
    if k < 2:
        return mean, math.nan, math.nan, math.nan
    std = float(arr.std(ddof=1))
    sem = std / math.sqrt(k)
    cv = std / mean if mean > 0 else math.nan
    return mean, std, sem, cv


def _row(value: str, n_won: int, n_lost: int, won_values: list[float], fallback: LookupRow | None) -> LookupRow:
    mean, std, sem, cv = _won_moments(won_values)
    n_total = n_won + n_lost
    if fallback is not None:
        if n_won == 0:
            mean = fallback.mean_won_value
        if n_won < 2:
            std, sem, cv = fallback.std_won_value, fallback.sem_won_value, fallback.cv_won_value
        elif math.isnan(cv):
            cv = fallback.cv_won_value
    else:
        # the global row itself: degenerate training data gets zeros
        mean = 0.0 if math.isnan(mean) else mean
        std = 0.0 if math.isnan(std) else std
        sem = 0.0 if math.isnan(sem) else sem
        cv = 0.0 if math.isnan(cv) else cv
    return LookupRow(
        feature_value=value,
        n_total=n_total,
        n_won=n_won,
        n_lost=n_lost,
        mean_won_value=mean,
        sem_won_value=sem,
        std_won_value=std,
        win_rate=n_won / n_total if n_total > 0 else 0.0,
        cv_won_value=cv,
    )


def build_lookup(train: RecordSet, feature_name: str) -> LookupTable:
    if feature_name not in CATEGORICAL_FEATURES:
        raise EnhanceError(f"{feature_name!r} is not a categorical feature")
    if any(not r.is_closed for r in train.records):
        raise ValidationError("lookup tables are built from closed (won/lost) records only")
    groups: dict[str, list] = {}
    all_won: list[float] = []
    n_won_all = 0
    for r in train.records:
        v = getattr(r, feature_name)
        # a missing value only feeds the global row
        g = groups.setdefault(v, [0, 0, []]) if v is not None else [0, 0, []]
        if r.label == 1:
            g[0] += 1
            g[2].append(r.total_contract_value)
            all_won.append(r.total_contract_value)
            n_won_all += 1
        else:
            g[1] += 1
    fallback = _row("__all__", n_won_all, len(train) - n_won_all, all_won, None)
    rows = {v: _row(v, nw, nl, wv, fallback) for v, (nw, nl, wv) in groups.items()}
    return LookupTable(feature_name, rows, fallback)


def build_lookups(train: RecordSet) -> dict[str, LookupTable]:
    return {f: build_lookup(train, f) for f in CATEGORICAL_FEATURES}


def mahalanobis_1d(x: float, mean: float, std: float) -> float:
    return min(abs(x - mean) / max(std, EPS), MAHALANOBIS_CAP)


def column_names() -> list[str]:
    names = list(BASE_COLUMNS)
    for f in CATEGORICAL_FEATURES:
        names.extend(f"{f}__{d}" for d in DERIVED_NAMES)
    return names


def _feature_row(r: OpportunityRecord, lookups: dict[str, LookupTable]) -> list[float]:
    for name in BOOLEAN_FEATURES + ("project_duration", "total_contract_value"):
        if getattr(r, name) is None:
            raise EnhanceError(f"record {r.opportunity_id}: {name} is missing")
    value = float(r.total_contract_value)
    row = [float(lookups[f].code(getattr(r, f))) for f in CATEGORICAL_FEATURES]
    row += [1.0 if getattr(r, b) else 0.0 for b in BOOLEAN_FEATURES]
    row += [float(r.project_duration), value]
    for f in CATEGORICAL_FEATURES:
        lr = lookups[f].get(getattr(r, f))
        row.extend(lr.stats())
        row.append(mahalanobis_1d(value, lr.mean_won_value, lr.std_won_value))
    return row


def enhance_records(rs: RecordSet, lookups: dict[str, LookupTable]) -> FeatureMatrix:
    """Model-input matrix: 18 base columns then 9 derived columns per categorical.

    Categorical values missing from the training lookups (or missing
    altogether) take the table's global fallback statistics.
    """
    absent = [f for f in CATEGORICAL_FEATURES if f not in lookups]
    if absent:
        raise EnhanceError(f"no lookup table for: {', '.join(absent)}")
    values = np.array([_feature_row(r, lookups) for r in rs.records], dtype=np.float64)
    values = values.reshape(len(rs), N_MODEL_COLUMNS)
    if not np.all(np.isfinite(values)):
        raise EnhanceError("enhanced features contain NaN/Inf")
    labels = [r.label for r in rs.records]
    label = None if any(lab is None for lab in labels) else np.asarray(labels, dtype=np.float64)
    return FeatureMatrix([r.opportunity_id for r in rs.records], column_names(), values, label)
