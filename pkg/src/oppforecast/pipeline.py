"""Training and prediction pipelines plus the single-file model artifact."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import calibrate, enhance, ensemble, ingest, metrics
from .calibrate import BoundaryGrid
from .enhance import LookupTable
from .ensemble import CVReport, EnsembleModel, IterationSchedule
from .ingest import CATEGORICAL_FEATURES, RecordSet

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
MIN_RECORDS_WARNING = 1000
REPORT_COLUMNS = ("opportunity_id", "probability", "segment", "quartile", "threshold", "decision")
USER_THRESHOLD = 0.5
# fields with no lookup fallback; a record missing one cannot be scored
SCORING_REQUIRED = ("segment",) + ingest.BOOLEAN_FEATURES + ("project_duration", "total_contract_value")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException | str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage} failed: {cause}")


class ArtifactError(ValueError):
    pass


class IncompatibleArtifactError(ArtifactError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 7
    train_fraction: float = 0.7
    cv_folds: int = 10
    calibrate_on: str = "train"
    n_trees: int = ensemble.N_TREES
    schedule: IterationSchedule | None = None
    stamp_time: bool = False

    def __post_init__(self):
        if self.calibrate_on not in ("train", "test"):
            raise ValueError("calibrate_on must be 'train' or 'test'")


@dataclass
class ModelArtifact:
    lookups: dict[str, LookupTable]
    ensemble: EnsembleModel
    boundary_grid: BoundaryGrid
    training_metadata: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    def content(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "column_names": enhance.column_names(),
            "lookups": {f: self.lookups[f].to_dict() for f in CATEGORICAL_FEATURES},
            "ensemble": self.ensemble.to_dict(),
            "boundary_grid": self.boundary_grid.to_dict(),
            "training_metadata": self.training_metadata,
        }

    @property
    def fingerprint(self) -> str:
        body = {k: v for k, v in self.content().items()}
        meta = dict(body["training_metadata"])
        meta.pop("created_at", None)
        body["training_metadata"] = meta
        return hashlib.sha256(_dumps(body).encode("utf-8")).hexdigest()

    def to_json(self) -> str:
        doc = self.content()
        doc["fingerprint"] = self.fingerprint
        return _dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "ModelArtifact":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"artifact is not valid JSON (offset {exc.pos}): {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ArtifactError("artifact root must be a JSON object")
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise IncompatibleArtifactError(
                f"artifact schema_version {version!r} is incompatible with {SCHEMA_VERSION!r}")
        try:
            art = cls(
                lookups={f: LookupTable.from_dict(t) for f, t in doc["lookups"].items()},
                ensemble=EnsembleModel.from_dict(doc["ensemble"]),
                boundary_grid=BoundaryGrid.from_dict(doc["boundary_grid"]),
                training_metadata=doc.get("training_metadata", {}),
                schema_version=version,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ArtifactError(f"artifact content is malformed: {exc}") from exc
        art.validate()
        if "fingerprint" in doc and doc["fingerprint"] != art.fingerprint:
            raise ArtifactError("artifact fingerprint does not match its content")
        return art

    def validate(self) -> None:
        if set(self.lookups) != set(CATEGORICAL_FEATURES):
            raise ArtifactError("artifact must carry one lookup table per categorical feature")
        if len(self.boundary_grid.thresholds) != 12:
            raise ArtifactError("artifact must carry 12 decision boundaries")
        if not all(0.0 <= t <= 1.0 for t in self.boundary_grid.thresholds.values()):
            raise ArtifactError("decision boundaries must lie in [0, 1]")
        widths = {m.n_features for m in self.ensemble.members}
        if widths != {enhance.N_MODEL_COLUMNS}:
            raise ArtifactError(f"members expect {sorted(widths)} columns, not {enhance.N_MODEL_COLUMNS}")


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def save_artifact(a: ModelArtifact, path) -> None:
    """Write atomically: a crash never leaves a partial artifact at ``path``."""
    path = Path(path)
    text = a.to_json()
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        # mkstemp creates 0600; give the artifact ordinary umask permissions
        mask = os.umask(0)
        os.umask(mask)
        os.chmod(tmp, 0o666 & ~mask)
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_artifact(path) -> ModelArtifact:
    with open(path, encoding="utf-8") as fh:
        return ModelArtifact.from_json(fh.read())


def file_fingerprint(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --- scoring -----------------------------------------------------------------


@dataclass
class Scores:
    probability: np.ndarray
    quartile: np.ndarray
    threshold: np.ndarray
    decision: list[str]


def score_records(artifact: ModelArtifact, rs: RecordSet) -> Scores:
    """Ensemble probability and boundary decision for every record, in order."""
    check_scorable(rs)
    fm = enhance.enhance_records(rs, artifact.lookups)
    probs = artifact.ensemble.predict_proba(fm.values)
    quart = np.empty(len(rs), dtype=np.int64)
    thr = np.empty(len(rs))
    for i, r in enumerate(rs.records):
        quart[i], thr[i] = artifact.boundary_grid.threshold(r.segment, r.total_contract_value)
    decision = ["won" if p > t else "lost" for p, t in zip(probs, thr)]
    return Scores(probs, quart, thr, decision)


def _user_report(rs: RecordSet) -> metrics.MetricReport | None:
    up = [r.user_probability for r in rs.records]
    if any(p is None for p in up):
        return None
    up = np.asarray(up, dtype=np.float64)
    labels = rs.labels() == 1
    values = [r.total_contract_value for r in rs.records]
    return _report(up > USER_THRESHOLD, labels, values, up)


def _report(predicted, labels, values, probs) -> metrics.MetricReport:
    labels = np.asarray(labels, dtype=bool)
    probs = probs if 0 < labels.sum() < len(labels) else None
    return metrics.metric_report(predicted, labels, values, probs)


def evaluate_records(artifact: ModelArtifact, rs: RecordSet) -> dict:
    """ML and user-entered metric reports on closed records, plus confusion counts."""
    rs = rs.closed()
    if len(rs) == 0:
        raise ValueError("evaluation needs closed (won/lost) records")
    sc = score_records(artifact, rs)
    labels = rs.labels() == 1
    values = [r.total_contract_value for r in rs.records]
    predicted = np.array([d == "won" for d in sc.decision])
    out = {
        "n_records": len(rs),
        "ml": _report(predicted, labels, values, sc.probability),
        "ml_default_boundary": _report(sc.probability > 0.5, labels, values, sc.probability),
        "user": _user_report(rs),
        "confusion": metrics.confusion(predicted, labels),
        "monetary_confusion": metrics.monetary_confusion(predicted, labels, values),
    }
    return out


# --- ML pipeline -------------------------------------------------------------


def _stage(name):
    def wrap(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(name, exc) from exc
    return wrap


def run_ml_pipeline(train_csv, config: PipelineConfig = PipelineConfig(), progress=None) -> ModelArtifact:
    say = progress or (lambda msg: log.info(msg))
    rs = _stage("ingest")(ingest.read_csv, train_csv)
    closed = rs.closed()
    rs_clean, dropped = _stage("drop_missing")(ingest.drop_missing, closed)
    if len(rs_clean) < MIN_RECORDS_WARNING:
        log.warning("only %d closed records; at least %d are recommended", len(rs_clean), MIN_RECORDS_WARNING)
    say(f"{len(rs)} records read, {len(closed)} closed, {dropped} dropped for missing values")
    train, test = _stage("split")(ingest.split_train_test, rs_clean, config.train_fraction, config.seed)
    lookups = _stage("enhance")(enhance.build_lookups, train)
    fm_train = _stage("enhance")(enhance.enhance_records, train, lookups)
    say(f"enhanced {len(train)} train records into {fm_train.values.shape[1]} columns")

    schedule = config.schedule or ensemble.make_schedule(config.n_trees)
    ens, report = _stage("train_ensemble")(
        ensemble.train_ensemble, fm_train, config.seed, schedule, config.cv_folds, say)
    say(f"ensemble CV accuracy {report.ensemble.mean:.4f}")

    history = train if config.calibrate_on == "train" else test
    if config.calibrate_on == "train":
        hist_probs = ens.predict_proba(fm_train.values)
    else:
        hist_probs = ens.predict_proba(_stage("enhance")(enhance.enhance_records, test, lookups).values)
    grid = _stage("calibrate_boundaries")(
        calibrate.calibrate_boundaries,
        [r.segment for r in history],
        [r.total_contract_value for r in history],
        history.labels(),
        hist_probs,
    )

    meta = {
        "seed": config.seed,
        "train_fraction": config.train_fraction,
        "cv_folds": config.cv_folds,
        "calibrate_on": config.calibrate_on,
        "data_fingerprint": file_fingerprint(train_csv),
        "n_records": len(rs),
        "n_closed": len(closed),
        "n_dropped": dropped,
        "n_train": len(train),
        "n_test": len(test),
        "test_ids": [r.opportunity_id for r in test],
        "cv_report": report.to_dict(),
    }
    if config.stamp_time:
        meta["created_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    artifact = ModelArtifact(lookups, ens, grid, meta)
    if len(test):
        ev = _stage("evaluate")(evaluate_records, artifact, test)
        meta["test_metrics"] = {"ml": ev["ml"].to_dict(),
                                "user": ev["user"].to_dict() if ev["user"] else None}
    return artifact


def recalibrate(artifact: ModelArtifact, rs: RecordSet) -> ModelArtifact:
    """New boundary grid from ``rs`` (closed records) with the artifact's model."""
    rs = rs.closed()
    probs = artifact.ensemble.predict_proba(enhance.enhance_records(rs, artifact.lookups).values)
    grid = calibrate.calibrate_boundaries([r.segment for r in rs], [r.total_contract_value for r in rs],
                                          rs.labels(), probs)
    return ModelArtifact(artifact.lookups, artifact.ensemble, grid, dict(artifact.training_metadata),
                         artifact.schema_version)


def split_for_artifact(artifact: ModelArtifact, rs: RecordSet, which: str) -> RecordSet:
    """The artifact's train or test records within ``rs`` (closed, complete)."""
    clean, _ = ingest.drop_missing(rs.closed())
    test_ids = set(artifact.training_metadata.get("test_ids", []))
    if which == "test":
        return RecordSet(tuple(r for r in clean if r.opportunity_id in test_ids), rs.provenance)
    if which == "train":
        return RecordSet(tuple(r for r in clean if r.opportunity_id not in test_ids), rs.provenance)
    if which == "all":
        return clean
    raise ValueError(f"unknown split {which!r}")


# --- prediction pipeline -----------------------------------------------------


@dataclass
class PredictionRow:
    opportunity_id: str
    probability: float
    segment: str
    quartile: int
    threshold: float
    decision: str


@dataclass
class PredictionReport:
    rows: list[PredictionRow]
    metrics: dict | None = None

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r.opportunity_id, repr(r.probability), r.segment, r.quartile, repr(r.threshold), r.decision])
        return out.getvalue()


def _unscorable(r) -> bool:
    return any(getattr(r, c) is None for c in SCORING_REQUIRED)


def check_scorable(rs: RecordSet) -> None:
    """Missing categoricals fall back to the global row; anything else missing is an error."""
    bad = [r.opportunity_id for r in rs.records if _unscorable(r)]
    if bad:
        shown = ", ".join(bad[:5]) + (" ..." if len(bad) > 5 else "")
        raise ingest.ValidationError(
            f"{len(bad)} record(s) lack a field needed for scoring: {shown}")


def run_prediction_pipeline(open_csv, artifact: ModelArtifact, drop_missing: bool = False) -> PredictionReport:
    """Score records with a trained artifact; never retrains or recalibrates.

    When the input holds closed records, metric reports over those are
    attached. ``drop_missing`` skips records that cannot be scored instead of
    failing.
    """
    rs = open_csv if isinstance(open_csv, RecordSet) else ingest.read_csv(open_csv)
    if drop_missing:
        rs = RecordSet(tuple(r for r in rs.records if not _unscorable(r)), rs.provenance)
    check_scorable(rs)
    sc = score_records(artifact, rs)
    rows = [
        PredictionRow(r.opportunity_id, float(p), r.segment, int(q), float(t), d)
        for r, p, q, t, d in zip(rs.records, sc.probability, sc.quartile, sc.threshold, sc.decision)
    ]
    report = PredictionReport(rows)
    closed = rs.closed()
    if len(closed):
        ev = evaluate_records(artifact, closed)
        report.metrics = {
            "ml": ev["ml"],
            "user": ev["user"],
        }
    return report
