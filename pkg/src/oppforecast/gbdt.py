"""Second-order gradient-boosted regression trees for binary outcomes.

Each boosting round fits a tree to the per-row first and second derivatives
of the loss at the current raw scores. Leaf weights are the closed-form
minimisers ``-G / (H + lambda)`` and a split is worth

    0.5 * [GL^2/(HL+l) + GR^2/(HR+l) - (GL+GR)^2/(HL+HR+l)] - gamma

Two growth policies are supported: level-wise (every frontier leaf is
expanded one depth at a time, bounded by ``max_depth``) and leaf-wise (the
single leaf with the largest gain is split next, bounded by ``max_leaves``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import _tree_kernels as K

__all__ = [
    "Growth",
    "Loss",
    "Hyperparams",
    "DecisionTree",
    "GBDTModel",
    "GradHess",
    "BinnedData",
    "grad_hess",
    "leaf_weight",
    "split_gain",
    "grow_tree",
    "train",
    "predict_raw",
    "predict_proba",
    "loss_value",
    "sigmoid",
]

# Columns with at most this many distinct values are scanned via histograms.
HIST_MAX_DISTINCT = 1024
BASE_SCORE_CLAMP = 10.0


class Growth(str, enum.Enum):
    LEVEL_WISE = "level_wise"
    LEAF_WISE = "leaf_wise"


class Loss(str, enum.Enum):
    LOGISTIC = "logistic"
    MSE = "mse"


@dataclass(frozen=True)
class Hyperparams:
    n_trees: int = 50
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    gamma: float = 0.0
    growth: Growth = Growth.LEVEL_WISE
    max_depth: int | None = 3
    max_leaves: int | None = None
    min_child_weight: float = 1e-3
    loss: Loss = Loss.LOGISTIC

    def __post_init__(self):
        object.__setattr__(self, "growth", Growth(self.growth))
        object.__setattr__(self, "loss", Loss(self.loss))
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise ValueError("reg_lambda, gamma and min_child_weight must be >= 0")
        if self.growth is Growth.LEVEL_WISE:
            if self.max_depth is None or self.max_depth < 0:
                raise ValueError("level-wise growth needs max_depth >= 0")
            object.__setattr__(self, "max_leaves", None)
        else:
            if self.max_leaves is None or self.max_leaves < 2:
                raise ValueError("leaf-wise growth needs max_leaves >= 2")
            object.__setattr__(self, "max_depth", None)

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "learning_rate": self.learning_rate,
            "reg_lambda": self.reg_lambda,
            "gamma": self.gamma,
            "growth": self.growth.value,
            "max_depth": self.max_depth,
            "max_leaves": self.max_leaves,
            "min_child_weight": self.min_child_weight,
            "loss": self.loss.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(**d)

    def label(self) -> str:
        size = f"depth={self.max_depth}" if self.growth is Growth.LEVEL_WISE else f"leaves={self.max_leaves}"
        return f"{size} lr={self.learning_rate} lambda={self.reg_lambda} gamma={self.gamma}"


@dataclass(frozen=True)
class GradHess:
    g: np.ndarray
    h: np.ndarray


@dataclass
class DecisionTree:
    """Flat node arrays; ``feature == -1`` marks a leaf whose weight is ``value``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == K.LEAF))

    @property
    def leaf_weights(self) -> np.ndarray:
        return self.value[self.feature == K.LEAF]

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row (``x <= threshold`` goes left)."""
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape[0], dtype=np.int64)
        for i, row in enumerate(X):
            node = 0
            while self.feature[node] != K.LEAF:
                node = self.left[node] if row[self.feature[node]] <= self.threshold[node] else self.right[node]
            out[i] = node
        return out

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int32),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int32),
            right=np.asarray(d["right"], dtype=np.int32),
            value=np.asarray(d["value"], dtype=np.float64),
        )


@dataclass
class GBDTModel:
    trees: list[DecisionTree]
    base_score: float
    hyperparams: Hyperparams
    n_features: int
    objective_history: list[float] = field(default_factory=list)
    _packed: tuple | None = field(default=None, repr=False, compare=False)

    def packed(self) -> tuple:
        if self._packed is None:
            sizes = [len(t.feature) for t in self.trees]
            offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int32) if sizes else np.zeros(0, np.int32)

            def cat(attr, dtype):
                if not self.trees:
                    return np.zeros(0, dtype)
                return np.concatenate([getattr(t, attr) for t in self.trees]).astype(dtype)

            left = cat("left", np.int32)
            right = cat("right", np.int32)
            for off, t, size in zip(offsets, self.trees, sizes):
                sl = slice(off, off + size)
                left[sl] = np.where(t.left == K.LEAF, K.LEAF, t.left + off)
                right[sl] = np.where(t.right == K.LEAF, K.LEAF, t.right + off)
            self._packed = (offsets, cat("feature", np.int32), cat("threshold", np.float64),
                            left, right, cat("value", np.float64))
        return self._packed

    def to_dict(self) -> dict:
        return {
            "base_score": self.base_score,
            "n_features": self.n_features,
            "hyperparams": self.hyperparams.to_dict(),
            "objective_history": list(self.objective_history),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GBDTModel":
        return cls(
            trees=[DecisionTree.from_dict(t) for t in d["trees"]],
            base_score=float(d["base_score"]),
            hyperparams=Hyperparams.from_dict(d["hyperparams"]),
            n_features=int(d["n_features"]),
            objective_history=[float(v) for v in d.get("objective_history", [])],
        )


def sigmoid(s):
    s = np.asarray(s, dtype=np.float64)
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def grad_hess(labels, raw_scores, loss: Loss = Loss.LOGISTIC) -> GradHess:
    y = np.asarray(labels, dtype=np.float64)
    s = np.asarray(raw_scores, dtype=np.float64)
    if y.shape != s.shape:
        raise ValueError(f"labels and scores differ in shape: {y.shape} vs {s.shape}")
    if Loss(loss) is Loss.LOGISTIC:
        p = sigmoid(s)
        return GradHess(g=p - y, h=p * (1.0 - p))
    return GradHess(g=2.0 * (s - y), h=np.full_like(s, 2.0))


def loss_value(labels, raw_scores, loss: Loss = Loss.LOGISTIC) -> float:
    """Summed training loss (log-loss on the logit scale, or squared error)."""
    y = np.asarray(labels, dtype=np.float64)
    s = np.asarray(raw_scores, dtype=np.float64)
    if Loss(loss) is Loss.LOGISTIC:
        # log(1 + e^s) - y*s, computed without overflow
        return float(np.sum(np.logaddexp(0.0, s) - y * s))
    return float(np.sum((y - s) ** 2))


def leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    denom = H + reg_lambda
    if not denom > 0:
        raise ValueError(f"H + lambda must be positive, got {denom}")
    return -G / denom


def split_gain(GL: float, HL: float, GR: float, HR: float, reg_lambda: float, gamma: float) -> float:
    lam = reg_lambda
    return 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - (GL + GR) ** 2 / (HL + HR + lam)) - gamma


@dataclass
class BinnedData:
    """Per-matrix split-search indexes; build once, reuse across trees and models.

    ``key_columns`` optionally names categorical code columns. Any
    low-cardinality column whose value is a function of one of those codes is
    scanned from that key's histogram, so a row costs one histogram update
    per key instead of one per dependent column. The dependency is checked on
    the data, never assumed.
    """

    X: np.ndarray
    feat_kind: np.ndarray
    feat_slot: np.ndarray
    atom_idx: np.ndarray
    n_atoms: int
    col_off: np.ndarray
    col_len: np.ndarray
    col_perm: np.ndarray
    col_val: np.ndarray
    XT: np.ndarray
    order: np.ndarray

    @classmethod
    def build(cls, X, key_columns=(), hist_max_distinct: int = HIST_MAX_DISTINCT) -> "BinnedData":
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        if not np.all(np.isfinite(X)):
            raise ValueError("feature matrix contains NaN or Inf")
        n, d = X.shape
        kind = np.zeros(d, dtype=np.int8)
        slot = np.zeros(d, dtype=np.int32)
        codes, uniques = {}, {}
        for f in range(d):
            u, inv = np.unique(X[:, f], return_inverse=True)
            if len(u) <= hist_max_distinct:
                uniques[f] = u
                codes[f] = inv.reshape(-1).astype(np.int64)
            else:
                kind[f] = 1

        # atom groups: (codes of the group's key, number of atoms)
        groups: list[tuple[np.ndarray, int]] = []
        group_of_key: dict[int, int] = {}
        for k in key_columns:
            if k in codes:
                group_of_key[k] = len(groups)
                groups.append((codes[k], len(uniques[k])))

        perms, vals, offs, lens = [], [], [], []
        hist_cols = [f for f in range(d) if kind[f] == 0]
        col_group = {}
        for f in hist_cols:
            chosen = None
            for k, gid in group_of_key.items():
                key_codes, n_atoms = groups[gid]
                atom_code = np.zeros(n_atoms, dtype=np.int64)
                atom_code[key_codes] = codes[f]
                if np.array_equal(atom_code[key_codes], codes[f]):
                    chosen = (gid, atom_code)
                    break
            if chosen is None:
                gid = len(groups)
                groups.append((codes[f], len(uniques[f])))
                chosen = (gid, np.arange(len(uniques[f])))
            col_group[f] = chosen

        atom_off = np.cumsum([0] + [m for _, m in groups])
        atom_idx = np.empty((n, len(groups)), dtype=np.int32)
        for gid, (key_codes, _) in enumerate(groups):
            atom_idx[:, gid] = key_codes + atom_off[gid]

        pos = 0
        for j, f in enumerate(hist_cols):
            slot[f] = j
            gid, atom_code = col_group[f]
            atom_value = uniques[f][atom_code]
            perm = np.argsort(atom_value, kind="stable")
            perms.append(perm + atom_off[gid])
            vals.append(atom_value[perm])
            offs.append(pos)
            lens.append(len(perm))
            pos += len(perm)

        sorted_cols = [f for f in range(d) if kind[f] == 1]
        order = np.empty((len(sorted_cols), n), dtype=np.int32)
        for s, f in enumerate(sorted_cols):
            slot[f] = s
            order[s] = np.argsort(X[:, f], kind="stable")

        def cat(parts, dtype):
            return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype)

        return cls(X, kind, slot, atom_idx, int(atom_off[-1]), np.asarray(offs, np.int64),
                   np.asarray(lens, np.int64), cat(perms, np.int64), cat(vals, np.float64),
                   np.ascontiguousarray(X.T), order)


def _as_binned(features) -> BinnedData:
    if isinstance(features, BinnedData):
        return features
    values = getattr(features, "values", features)
    return BinnedData.build(values, key_columns=getattr(features, "key_columns", ()))


def _grow(bd: BinnedData, gh: GradHess, hp: Hyperparams):
    leafwise = hp.growth is Growth.LEAF_WISE
    return K.grow(
        bd.X, np.ascontiguousarray(gh.g, dtype=np.float64), np.ascontiguousarray(gh.h, dtype=np.float64),
        bd.atom_idx, bd.n_atoms, bd.col_off, bd.col_len, bd.col_perm, bd.col_val,
        bd.feat_kind, bd.feat_slot, bd.XT, bd.order,
        float(hp.reg_lambda), float(hp.gamma), float(hp.min_child_weight),
        int(hp.max_depth or 0), int(hp.max_leaves or 2), leafwise,
    )


def grow_tree(features, gh: GradHess, hp: Hyperparams) -> DecisionTree:
    """Fit one tree to gradient statistics (``features`` may be pre-binned)."""
    bd = _as_binned(features)
    if bd.X.shape[0] < 1:
        raise ValueError("need at least one instance")
    if len(gh.g) != bd.X.shape[0]:
        raise ValueError("gradients are not aligned with the feature rows")
    feat, thr, left, right, value, _ = _grow(bd, gh, hp)
    return DecisionTree(feat, thr, left, right, value)


def _omega(tree: DecisionTree, hp: Hyperparams) -> float:
    w = hp.learning_rate * tree.leaf_weights
    return hp.gamma * tree.n_leaves + 0.5 * hp.reg_lambda * float(np.sum(w * w))


def initial_score(labels, loss: Loss) -> float:
    mean = float(np.mean(labels))
    if Loss(loss) is Loss.MSE:
        return mean
    if mean <= 0.0 or mean >= 1.0:
        return BASE_SCORE_CLAMP if mean >= 1.0 else -BASE_SCORE_CLAMP
    return float(np.clip(np.log(mean / (1.0 - mean)), -BASE_SCORE_CLAMP, BASE_SCORE_CLAMP))


def train(features, labels, hp: Hyperparams) -> GBDTModel:
    """Boost ``hp.n_trees`` rounds.

    The regularised objective (summed loss plus ``gamma*T + lambda/2*sum(w^2)``
    of every shrunken tree) is tracked per round. A round that would raise it
    is discarded and boosting ends there: with unchanged scores every later
    round would grow that same tree again.
    """
    bd = _as_binned(features)
    y = np.asarray(labels, dtype=np.float64)
    n = bd.X.shape[0]
    if y.shape != (n,):
        raise ValueError("labels are not aligned with the feature rows")
    if n < 2:
        raise ValueError("need at least two instances to train")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")

    base = initial_score(y, hp.loss)
    scores = np.full(n, base)
    penalty = 0.0
    objective = [loss_value(y, scores, hp.loss)]
    trees: list[DecisionTree] = []
    for _ in range(hp.n_trees):
        gh = grad_hess(y, scores, hp.loss)
        feat, thr, left, right, value, row_leaf = _grow(bd, gh, hp)
        tree = DecisionTree(feat, thr, left, right, value)
        candidate = scores + hp.learning_rate * value[row_leaf]
        pen = penalty + _omega(tree, hp)
        obj = loss_value(y, candidate, hp.loss) + pen
        if obj > objective[-1]:
            break
        trees.append(tree)
        scores = candidate
        penalty = pen
        objective.append(obj)
    return GBDTModel(trees=trees, base_score=base, hyperparams=hp, n_features=bd.X.shape[1],
                     objective_history=objective)


def predict_raw(model: GBDTModel, X) -> np.ndarray:
    X = np.ascontiguousarray(getattr(X, "values", X), dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} feature columns, got shape {X.shape}")
    roots, feat, thr, left, right, value = model.packed()
    return K.predict_raw(X, float(model.base_score), float(model.hyperparams.learning_rate),
                         roots, feat, thr, left, right, value)


def predict_proba(model: GBDTModel, X) -> np.ndarray:
    raw = predict_raw(model, X)
    if model.hyperparams.loss is Loss.LOGISTIC:
        return sigmoid(raw)
    return np.clip(raw, 1e-12, 1.0 - 1e-12)


def with_trees(hp: Hyperparams, n_trees: int) -> Hyperparams:
    return replace(hp, n_trees=n_trees)
