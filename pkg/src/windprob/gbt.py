"""Gradient boosted regression trees with pluggable first/second-order objectives.

Leaf-wise best-first growth capped by both ``max_depth`` and ``num_leaves``,
exact split search over sorted feature values, leaf value -G/(H + lambda)
with lambda fixed at 1. All randomness (row subsampling) flows from the
seed in :class:`GbtParams`.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

import numpy as np

REG_LAMBDA = 1.0
MODEL_FORMAT_VERSION = 1


class EmptyDataError(ValueError):
    pass


class NonFiniteGradientError(ValueError):
    """The objective produced NaN/inf gradients: broken objective or inputs."""


class SchemaMismatchError(ValueError):
    """Prediction features do not match the training schema."""


class Objective:
    """Interface for boosting objectives (per-sample gradient/hessian, mean loss)."""

    def gradient(self, y, pred):
        raise NotImplementedError

    def hessian(self, y, pred):
        raise NotImplementedError

    def loss(self, y, pred):
        raise NotImplementedError


class SquaredError(Objective):
    """L = 0.5 (pred - y)^2."""

    def gradient(self, y, pred):
        return pred - y

    def hessian(self, y, pred):
        return np.ones_like(y)

    def loss(self, y, pred):
        return float(np.mean(0.5 * (pred - y) ** 2))


class QuantileObjective(Objective):
    """Pinball loss for the tau-quantile with constant unit hessian."""

    def __init__(self, tau: float):
        if not 0 < tau < 1:
            raise ValueError(f"tau must lie in (0, 1), got {tau}")
        self.tau = float(tau)

    def gradient(self, y, pred):
        return np.where(y >= pred, -self.tau, 1.0 - self.tau)

    def hessian(self, y, pred):
        # true hessian is 0 a.e.; constant surrogate keeps leaf values stable
        return np.ones_like(y)

    def loss(self, y, pred):
        diff = y - pred
        return float(np.mean(np.where(diff >= 0, self.tau * diff, (self.tau - 1.0) * diff)))

    def leaf_value(self, y_leaf, pred_leaf):
        # renew the Newton leaf value with the empirical residual quantile;
        # the unit-hessian step is scale-free and far too small otherwise
        return float(np.quantile(y_leaf - pred_leaf, self.tau))


def quantile_objective(tau: float) -> QuantileObjective:
    return QuantileObjective(tau)


def pinball_loss(y, pred, tau):
    """Mean pinball loss at level tau."""
    diff = np.asarray(y, dtype=float) - np.asarray(pred, dtype=float)
    return float(np.mean(np.where(diff >= 0, tau * diff, (tau - 1.0) * diff)))


@dataclass
class GbtParams:
    learning_rate: float = 0.1
    max_depth: int = 6
    min_child_weight: float = 1.0
    gamma: float = 0.0
    subsample: float = 1.0
    n_estimators: int = 100
    num_leaves: int = 31
    early_stopping_rounds: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_child_weight < 0 or self.gamma < 0:
            raise ValueError("min_child_weight and gamma must be >= 0")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.num_leaves < 2:
            raise ValueError("num_leaves must be >= 2")
        if self.early_stopping_rounds is not None and self.early_stopping_rounds < 1:
            raise ValueError("early_stopping_rounds must be >= 1")

    def to_dict(self):
        return dict(self.__dict__)


class Tree:
    """A single regression tree stored as flat node arrays."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)

    @property
    def n_leaves(self):
        return int(np.sum(self.feature < 0))

    def predict(self, X):
        n = X.shape[0]
        out = np.empty(n, dtype=float)
        if n == 0:
            return out
        stack = [(0, np.arange(n))]
        while stack:
            nid, idx = stack.pop()
            if self.feature[nid] < 0:
                out[idx] = self.value[nid]
                continue
            go_left = X[idx, self.feature[nid]] < self.threshold[nid]
            stack.append((self.left[nid], idx[go_left]))
            stack.append((self.right[nid], idx[~go_left]))
        return out

    def leaf_ids(self, X):
        """Leaf node index each row lands in."""
        n = X.shape[0]
        out = np.empty(n, dtype=np.int64)
        stack = [(0, np.arange(n))]
        while stack:
            nid, idx = stack.pop()
            if self.feature[nid] < 0:
                out[idx] = nid
                continue
            go_left = X[idx, self.feature[nid]] < self.threshold[nid]
            stack.append((self.left[nid], idx[go_left]))
            stack.append((self.right[nid], idx[~go_left]))
        return out

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["value"])


def _best_split(X, idx, g, h, params):
    """Exact split search for one node; returns (gain, feature, threshold) or None."""
    G = g[idx].sum()
    H = h[idx].sum()
    parent_score = G * G / (H + REG_LAMBDA)
    best = None
    best_gain = 0.0
    for j in range(X.shape[1]):
        v = X[idx, j]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        if vs[0] == vs[-1]:
            continue
        gs = np.cumsum(g[idx][order])[:-1]
        hs = np.cumsum(h[idx][order])[:-1]
        valid = vs[:-1] < vs[1:]
        hl = hs
        hr = H - hs
        valid &= (hl >= params.min_child_weight) & (hr >= params.min_child_weight)
        if not valid.any():
            continue
        gl = gs
        gr = G - gs
        gain = 0.5 * (gl * gl / (hl + REG_LAMBDA) + gr * gr / (hr + REG_LAMBDA)
                      - parent_score) - params.gamma
        gain = np.where(valid, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best_gain:
            best_gain = float(gain[k])
            best = (best_gain, j, 0.5 * (vs[k] + vs[k + 1]))
    return best


def _fit_tree(X, g, h, params, rng):
    """Grow one tree on (possibly subsampled) rows; returns the Tree."""
    n = X.shape[0]
    if params.subsample < 1.0:
        k = max(1, int(round(params.subsample * n)))
        rows = np.sort(rng.permutation(n)[:k])
    else:
        rows = np.arange(n)

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        nid = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        G = g[idx].sum()
        H = h[idx].sum()
        value.append(-G / (H + REG_LAMBDA))
        return nid

    root_idx = rows
    root = new_node(root_idx)
    heap = []
    counter = 0

    def push_candidate(nid, idx, depth):
        nonlocal counter
        if depth >= params.max_depth:
            return
        split = _best_split(X, idx, g, h, params)
        if split is not None:
            heapq.heappush(heap, (-split[0], counter, nid, idx, depth, split[1], split[2]))
            counter += 1

    push_candidate(root, root_idx, 0)
    n_leaves = 1
    while heap and n_leaves < params.num_leaves:
        _, _, nid, idx, depth, j, thr = heapq.heappop(heap)
        go_left = X[idx, j] < thr
        lidx, ridx = idx[go_left], idx[~go_left]
        feature[nid] = j
        threshold[nid] = thr
        lid = new_node(lidx)
        rid = new_node(ridx)
        left[nid] = lid
        right[nid] = rid
        n_leaves += 1
        push_candidate(lid, lidx, depth + 1)
        push_candidate(rid, ridx, depth + 1)

    return Tree(feature, threshold, left, right, value)


@dataclass
class TreeEnsembleModel:
    trees: list[Tree]
    base_score: float
    learning_rate: float
    feature_names: list[str] | None = None
    params: GbtParams | None = None
    best_iteration: int | None = None

    def predict(self, X, feature_names=None):
        X = _check_matrix(X)
        if self.feature_names is not None:
            if feature_names is not None and list(feature_names) != list(self.feature_names):
                raise SchemaMismatchError(
                    f"feature names differ from training schema: {feature_names} vs {self.feature_names}")
            if X.shape[1] != len(self.feature_names):
                raise SchemaMismatchError(
                    f"expected {len(self.feature_names)} features, got {X.shape[1]}")
        pred = np.full(X.shape[0], self.base_score, dtype=float)
        for tree in self.trees:
            pred += self.learning_rate * tree.predict(X)
        return pred

    def to_dict(self):
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "feature_names": self.feature_names,
            "params": self.params.to_dict() if self.params is not None else None,
            "best_iteration": self.best_iteration,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {d.get('format_version')}")
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            base_score=d["base_score"],
            learning_rate=d["learning_rate"],
            feature_names=d["feature_names"],
            params=GbtParams(**d["params"]) if d["params"] is not None else None,
            best_iteration=d["best_iteration"],
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _check_matrix(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return X


def train(X, y, objective: Objective, params: GbtParams,
          validation=None, feature_names=None) -> TreeEnsembleModel:
    """Fit a boosted tree ensemble by functional gradient descent.

    ``validation`` is an optional ``(X_val, y_val)`` pair; together with
    ``params.early_stopping_rounds`` it stops training when the validation
    loss fails to improve and truncates the model to the best round.
    """
    X = _check_matrix(X)
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0 or y.size == 0:
        raise EmptyDataError("training data is empty")
    if X.shape[0] != y.size:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.size}")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("training data contains non-finite values")
    if params.early_stopping_rounds is not None and validation is None:
        raise ValueError("early stopping requires a validation set")

    rng = np.random.default_rng(params.seed)
    base_score = float(np.mean(y))
    pred = np.full(y.size, base_score, dtype=float)
    trees: list[Tree] = []

    if validation is not None:
        Xv = _check_matrix(validation[0])
        yv = np.asarray(validation[1], dtype=float)
        pred_val = np.full(yv.size, base_score, dtype=float)
        best_loss = np.inf
        best_round = 0

    for round_idx in range(params.n_estimators):
        g = np.asarray(objective.gradient(y, pred), dtype=float)
        h = np.asarray(objective.hessian(y, pred), dtype=float)
        if not np.all(np.isfinite(g)) or not np.all(np.isfinite(h)):
            raise NonFiniteGradientError(f"non-finite gradient/hessian at round {round_idx}")
        tree = _fit_tree(X, g, h, params, rng)
        renew = getattr(objective, "leaf_value", None)
        if renew is not None:
            ids = tree.leaf_ids(X)
            for nid in np.unique(ids):
                rows = ids == nid
                tree.value[nid] = renew(y[rows], pred[rows])
        trees.append(tree)
        pred += params.learning_rate * tree.predict(X)
        if validation is not None:
            pred_val += params.learning_rate * tree.predict(Xv)
            val_loss = objective.loss(yv, pred_val)
            if val_loss < best_loss - 1e-12:
                best_loss = val_loss
                best_round = round_idx + 1
            elif (params.early_stopping_rounds is not None
                  and round_idx + 1 - best_round >= params.early_stopping_rounds):
                trees = trees[:best_round]
                break

    best_iteration = len(trees)
    model = TreeEnsembleModel(
        trees=trees,
        base_score=base_score,
        learning_rate=params.learning_rate,
        feature_names=list(feature_names) if feature_names is not None else None,
        params=params,
        best_iteration=best_iteration,
    )
    return model


def predict(model: TreeEnsembleModel, X, feature_names=None):
    return model.predict(X, feature_names=feature_names)
