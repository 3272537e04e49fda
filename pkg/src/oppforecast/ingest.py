"""CRM opportunity records: CSV parsing, validation, missing-value drop, split."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, fields
from typing import IO, Iterable

import numpy as np

CATEGORICAL_FEATURES = (
    "business_unit",
    "opportunity_type",
    "project_location",
    "general_now",
    "detailed_now",
    "account",
    "account_location",
    "sales_lead",
    "engagement_manager",
    "sub_practice",
    "practice",
    "group_practice",
    "segment",
)
BOOLEAN_FEATURES = ("key_account_energy", "key_account_healthcare", "key_account_finance")
CONTINUOUS_FEATURES = ("user_probability", "project_duration", "total_contract_value")
SEGMENTS = ("Healthcare", "Energy", "Finance")

COLUMNS = (
    ("opportunity_id",)
    + CATEGORICAL_FEATURES
    + BOOLEAN_FEATURES
    + ("status",)
    + CONTINUOUS_FEATURES
)


class IngestError(ValueError):
    """Base class for record input problems."""


class SchemaError(IngestError):
    def __init__(self, missing: Iterable[str] = (), extra: Iterable[str] = ()):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        parts = []
        if self.missing:
            parts.append(f"missing columns: {', '.join(self.missing)}")
        if self.extra:
            parts.append(f"unexpected columns: {', '.join(self.extra)}")
        super().__init__("; ".join(parts) or "bad header")


class RecordError(IngestError):
    def __init__(self, row: int, column: str, message: str):
        self.row = row
        self.column = column
        super().__init__(f"row {row}, column {column!r}: {message}")


class ValidationError(IngestError):
    pass


class Status(str, enum.Enum):
    WON = "won"
    LOST = "lost"
    OPEN = "open"


@dataclass(frozen=True)
class OpportunityRecord:
    """One CRM opportunity. ``None`` in any field marks a missing value."""

    opportunity_id: str
    business_unit: str | None = None
    opportunity_type: str | None = None
    project_location: str | None = None
    general_now: str | None = None
    detailed_now: str | None = None
    account: str | None = None
    account_location: str | None = None
    sales_lead: str | None = None
    engagement_manager: str | None = None
    sub_practice: str | None = None
    practice: str | None = None
    group_practice: str | None = None
    segment: str | None = None
    key_account_energy: bool | None = None
    key_account_healthcare: bool | None = None
    key_account_finance: bool | None = None
    status: Status | None = None
    user_probability: float | None = None
    project_duration: float | None = None
    total_contract_value: float | None = None

    @property
    def is_closed(self) -> bool:
        return self.status in (Status.WON, Status.LOST)

    @property
    def label(self) -> int | None:
        if self.status is Status.WON:
            return 1
        if self.status is Status.LOST:
            return 0
        return None

    def has_missing(self) -> bool:
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None or v == "" or (isinstance(v, float) and math.isnan(v)):
                return True
        return False


@dataclass(frozen=True)
class RecordSet:
    records: tuple[OpportunityRecord, ...]
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for r in self.records:
            if r.opportunity_id in seen:
                raise ValidationError(f"duplicate opportunity_id {r.opportunity_id!r}")
            seen.add(r.opportunity_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def closed(self) -> "RecordSet":
        return RecordSet(tuple(r for r in self.records if r.is_closed), self.provenance)

    def open(self) -> "RecordSet":
        return RecordSet(tuple(r for r in self.records if r.status is Status.OPEN), self.provenance)

    def subset(self, ids) -> "RecordSet":
        wanted = set(ids)
        return RecordSet(tuple(r for r in self.records if r.opportunity_id in wanted), self.provenance)

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.float64)


_TRUE = {"true", "1", "yes"}
_FALSE = {"false", "0", "no"}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _parse_float(text: str) -> float:
    v = float(text)
    if math.isnan(v):
        raise ValueError("NaN is not allowed; leave the cell empty for a missing value")
    return v


def coerce_field(name: str, raw) -> object:
    """Convert one raw cell (CSV text or JSON value) to its typed value.

    Empty strings and ``None`` mean missing. Raises ``ValueError`` on a bad
    value or on a domain violation.
    """
    if raw is None or (isinstance(raw, str) and raw.strip() == ""):
        return None
    if name in CATEGORICAL_FEATURES or name == "opportunity_id":
        value = str(raw).strip()
        if name == "segment" and value not in SEGMENTS:
            raise ValueError(f"unknown segment {value!r} (expected one of {', '.join(SEGMENTS)})")
        return value
    if name in BOOLEAN_FEATURES:
        if isinstance(raw, bool):
            return raw
        return _parse_bool(str(raw))
    if name == "status":
        try:
            return Status(str(raw).strip().lower())
        except ValueError:
            raise ValueError(f"status must be won/lost/open, got {raw!r}") from None
    if name in CONTINUOUS_FEATURES:
        if isinstance(raw, bool):
            raise ValueError("expected a number")
        v = float(raw) if isinstance(raw, (int, float)) else _parse_float(str(raw))
        if math.isnan(v) or math.isinf(v):
            raise ValueError("expected a finite number")
        if name == "user_probability" and not 0.0 <= v <= 1.0:
            raise ValueError("user_probability must lie in [0, 1]")
        if name == "project_duration" and not v > 0:
            raise ValueError("project_duration must be > 0")
        if name == "total_contract_value" and v < 0:
            raise ValueError("total_contract_value must be >= 0")
        return v
    raise KeyError(name)


def record_from_mapping(row: dict, row_number: int = 0, columns=COLUMNS) -> OpportunityRecord:
    values = {}
    for name in columns:
        try:
            values[name] = coerce_field(name, row.get(name))
        except ValueError as exc:
            raise RecordError(row_number, name, str(exc)) from None
    if not values.get("opportunity_id"):
        raise RecordError(row_number, "opportunity_id", "opportunity_id is required")
    return OpportunityRecord(**values)


def check_header(header: Iterable[str], expected=COLUMNS) -> None:
    got = [h.strip() for h in header]
    missing = set(expected) - set(got)
    extra = set(got) - set(expected)
    if missing or extra or len(got) != len(set(got)):
        raise SchemaError(missing, extra)


def parse_records(source: IO[bytes] | IO[str] | bytes | str, provenance: str = "") -> RecordSet:
    """Parse a UTF-8 CSV with the documented header (columns in any order)."""
    if isinstance(source, bytes):
        text = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str):
        text = io.StringIO(source)
    else:
        data = source.read()
        text = io.StringIO(data.decode("utf-8") if isinstance(data, bytes) else data)
    reader = csv.DictReader(text)
    if reader.fieldnames is None:
        raise SchemaError(COLUMNS)
    check_header(reader.fieldnames)
    records = []
    # header is row 1
    for i, row in enumerate(reader, start=2):
        if None in row:
            raise RecordError(i, "<extra>", "row has more cells than the header")
        records.append(record_from_mapping(row, i))
    return RecordSet(tuple(records), provenance)


def read_csv(path, provenance: str | None = None) -> RecordSet:
    with open(path, "rb") as fh:
        return parse_records(fh, provenance=str(path) if provenance is None else provenance)


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Status):
        return value.value
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_records(rs: RecordSet) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in rs.records:
        writer.writerow([_format(getattr(r, c)) for c in COLUMNS])
    return out.getvalue()


def write_csv(rs: RecordSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(serialize_records(rs))


def drop_missing(rs: RecordSet) -> tuple[RecordSet, int]:
    kept = tuple(r for r in rs.records if not r.has_missing())
    return RecordSet(kept, rs.provenance), len(rs) - len(kept)


def split_train_test(rs: RecordSet, train_fraction: float = 0.7, seed: int = 0) -> tuple[RecordSet, RecordSet]:
    """Uniform random split; the train side gets round-half-up(fraction * n) records.

    Both halves keep the input order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    if any(not r.is_closed for r in rs.records):
        raise ValidationError("split_train_test needs closed (won/lost) records only")
    n = len(rs)
    n_train = int(math.floor(train_fraction * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    in_train = np.zeros(n, dtype=bool)
    in_train[perm[:n_train]] = True
    train = tuple(r for r, t in zip(rs.records, in_train) if t)
    test = tuple(r for r, t in zip(rs.records, in_train) if not t)
    return RecordSet(train, rs.provenance), RecordSet(test, rs.provenance)
