"""Fixed schedule of boosted models, k-fold CV, and weighted soft voting."""

from __future__ import annotations

import csv
import io
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from . import gbdt
from .gbdt import BinnedData, GBDTModel, Growth, Hyperparams

log = logging.getLogger(__name__)

SCHEDULE_SIZE = 34
PER_FAMILY = 17
DEPTHS = (3, 4, 5, 6)
LEAVES = (7, 15, 31, 63)
LEARNING_RATES = (0.05, 0.1, 0.3)
REGULARIZATION = ((1.0, 0.0), (5.0, 1.0))
N_TREES = 50
WEIGHT_EPS = 1e-6


class EnsembleError(RuntimeError):
    pass


@dataclass(frozen=True)
class IterationSchedule:
    entries: tuple[Hyperparams, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass
class CVResult:
    folds: list[float]
    mean: float


@dataclass
class CVReport:
    """Per-member fold accuracies; ``ensemble`` is the soft-voted row."""

    members: list[tuple[Hyperparams, CVResult]]
    ensemble: CVResult | None = None

    def to_csv(self) -> str:
        k = len(self.members[0][1].folds) if self.members else 0
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["model_index", "growth", "params"] + [f"fold_{i + 1}" for i in range(k)] + ["mean"])
        for i, (hp, res) in enumerate(self.members, start=1):
            w.writerow([i, hp.growth.value, hp.label()] + [repr(a) for a in res.folds] + [repr(res.mean)])
        if self.ensemble is not None:
            w.writerow([len(self.members) + 1, "ensemble", "soft_vote"]
                       + [repr(a) for a in self.ensemble.folds] + [repr(self.ensemble.mean)])
        return out.getvalue()

    def to_dict(self) -> dict:
        d = {
            "members": [{"hyperparams": hp.to_dict(), "folds": r.folds, "mean": r.mean} for hp, r in self.members],
        }
        if self.ensemble is not None:
            d["ensemble"] = {"folds": self.ensemble.folds, "mean": self.ensemble.mean}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CVReport":
        members = [(Hyperparams.from_dict(m["hyperparams"]), CVResult(m["folds"], m["mean"])) for m in d["members"]]
        ens = d.get("ensemble")
        return cls(members, CVResult(ens["folds"], ens["mean"]) if ens else None)


@dataclass
class EnsembleModel:
    members: list[GBDTModel]
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.weights) != len(self.members):
            raise EnsembleError("one weight per member is required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise EnsembleError("weights must be non-negative and sum to 1")

    def member_probabilities(self, X) -> np.ndarray:
        return np.vstack([gbdt.predict_proba(m, X) for m in self.members])

    def predict_proba(self, X) -> np.ndarray:
        return soft_vote(self.member_probabilities(X), self.weights)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "members": [m.to_dict() for m in self.members]}

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleModel":
        return cls([GBDTModel.from_dict(m) for m in d["members"]], np.asarray(d["weights"], dtype=np.float64))


def make_schedule(n_trees: int = N_TREES) -> IterationSchedule:
    """17 level-wise then 17 leaf-wise entries, each family in lexicographic grid order."""
    entries = []
    for growth, sizes in ((Growth.LEVEL_WISE, DEPTHS), (Growth.LEAF_WISE, LEAVES)):
        family = []
        for size, lr, (lam, gamma) in itertools.product(sizes, LEARNING_RATES, REGULARIZATION):
            kw = {"max_depth": size} if growth is Growth.LEVEL_WISE else {"max_leaves": size}
            family.append(Hyperparams(n_trees=n_trees, learning_rate=lr, reg_lambda=lam, gamma=gamma,
                                      growth=growth, **kw))
        entries.extend(family[:PER_FAMILY])
    return IterationSchedule(tuple(entries))


def soft_vote(member_probs, weights) -> np.ndarray:
    """Row-wise weighted mean of member class-1 probabilities."""
    P = np.atleast_2d(np.asarray(member_probs, dtype=np.float64))
    w = np.asarray(weights, dtype=np.float64)
    if P.shape[0] != len(w):
        raise ValueError(f"{P.shape[0]} member rows but {len(w)} weights")
    out = w @ P
    # keep inside the members' hull despite rounding in the dot product
    return np.clip(out, P.min(axis=0), P.max(axis=0))


def fold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"need at least k={k} rows, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def _accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean((probs > 0.5) == (labels == 1)))


def _fold_data(data, k: int, seed: int):
    X = np.ascontiguousarray(data.values, dtype=np.float64)
    y = np.asarray(data.label, dtype=np.float64)
    keys = getattr(data, "key_columns", ())
    for held in fold_indices(len(y), k, seed):
        mask = np.ones(len(y), dtype=bool)
        mask[held] = False
        yield held, BinnedData.build(X[mask], key_columns=keys), y[mask], X[held], y[held]


def cross_validate(data, hp: Hyperparams, k: int = 10, seed: int = 0) -> CVResult:
    folds = []
    for _, bd, ytr, Xte, yte in _fold_data(data, k, seed):
        m = gbdt.train(bd, ytr, hp)
        folds.append(_accuracy(gbdt.predict_proba(m, Xte), yte))
    return CVResult(folds, float(np.mean(folds)))


def cv_weights(cv_accuracies) -> np.ndarray:
    """w_j proportional to max(acc_j - 0.5, eps), normalised."""
    raw = np.maximum(np.asarray(cv_accuracies, dtype=np.float64) - 0.5, WEIGHT_EPS)
    w = raw / raw.sum()
    # absorb the normalisation residue so the sum is 1 to the last bit possible
    w[np.argmax(w)] += 1.0 - w.sum()
    return w


def train_ensemble(data, seed: int = 0, schedule: IterationSchedule | None = None, k: int = 10,
                   progress=None) -> tuple[EnsembleModel, CVReport]:
    """Cross-validate every schedule entry, refit each on all rows, weight by CV skill.

    The ensemble's own CV row soft-votes the members' out-of-fold
    probabilities with the final weights.
    """
    schedule = schedule or make_schedule()
    y = np.asarray(data.label, dtype=np.float64)
    n_members = len(schedule)
    oof = np.zeros((n_members, len(y)))
    fold_acc = [[] for _ in range(n_members)]
    fold_ids = []
    for f, (held, bd, ytr, Xte, yte) in enumerate(_fold_data(data, k, seed)):
        fold_ids.append(held)
        for j, hp in enumerate(schedule):
            try:
                m = gbdt.train(bd, ytr, hp)
            except Exception as exc:
                raise EnsembleError(f"member {j + 1} failed in fold {f + 1}: {exc}") from exc
            p = gbdt.predict_proba(m, Xte)
            oof[j, held] = p
            fold_acc[j].append(_accuracy(p, yte))
        if progress:
            progress(f"fold {f + 1}/{k} done")
    results = [CVResult(a, float(np.mean(a))) for a in fold_acc]
    weights = cv_weights([r.mean for r in results])

    full = BinnedData.build(data.values, key_columns=getattr(data, "key_columns", ()))
    members = []
    for j, hp in enumerate(schedule):
        try:
            members.append(gbdt.train(full, y, hp))
        except Exception as exc:
            raise EnsembleError(f"member {j + 1} failed on the full data: {exc}") from exc
    if progress:
        progress("members refit on all rows")

    voted = soft_vote(oof, weights)
    ens_folds = [_accuracy(voted[h], y[h]) for h in fold_ids]
    report = CVReport(list(zip(schedule, results)), CVResult(ens_folds, float(np.mean(ens_folds))))
    return EnsembleModel(members, weights), report
