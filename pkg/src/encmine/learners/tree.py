"""Array-backed CART trees (Gini classification, Newton regression).

Split candidates are midpoints between consecutive distinct values; ties go
to the lowest feature index, then the lowest threshold. Samples satisfy
``x <= threshold`` to go left.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

LEAF = -1
_TIE = 1e-12


@dataclass
class Tree:
    feature: np.ndarray    # int64, LEAF for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            active = feat != LEAF
            if not active.any():
                return node
            f = np.where(active, feat, 0)
            go_left = X[rows, f] <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(active, nxt, node)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


def resolve_max_features(max_features, n_features: int) -> int:
    if max_features is None:
        return n_features
    if isinstance(max_features, str):
        if max_features == "sqrt":
            return max(1, int(np.sqrt(n_features)))
        if max_features == "log2":
            return max(1, int(np.log2(n_features)))
        raise ValueError(f"max_features {max_features!r}")
    if isinstance(max_features, float):
        if not 0.0 < max_features <= 1.0:
            raise ValueError("fractional max_features must lie in (0, 1]")
        return max(1, int(round(max_features * n_features)))
    return max(1, min(n_features, int(max_features)))


class _Growth:
    """Depth-first growth with a pluggable split score and leaf value."""

    def __init__(self, X, a, b, w, min_samples_leaf, max_depth, n_sub, rng, mode, reg_lambda=0.0):
        self.X, self.a, self.b, self.w = X, a, b, w
        self.min_leaf = min_samples_leaf
        self.max_depth = max_depth
        self.n_sub = n_sub
        self.rng = rng
        self.mode = mode
        self.lam = reg_lambda
        self.nodes: List[list] = []

    # classification: a = y (0/1), node stat (W, S) with S = sum w*y
    # regression (Newton): a = gradient sum term g, b = hessian h
    def leaf_value(self, idx):
        w = self.w[idx]
        if self.mode == "gini":
            return float(np.dot(w, self.a[idx]) / w.sum())
        return float(np.dot(w, self.a[idx]) / (np.dot(w, self.b[idx]) + self.lam))

    def _score(self, wl, al, bl, wr, ar, br):
        if self.mode == "gini":
            # weighted Gini impurity of the children; lower is better
            return -(2.0 * (al - al * al / wl) + 2.0 * (ar - ar * ar / wr))
        return al * al / (bl + self.lam) + ar * ar / (br + self.lam)

    def _parent_score(self, idx):
        w = self.w[idx]
        W, A = w.sum(), np.dot(w, self.a[idx])
        if self.mode == "gini":
            return -(2.0 * (A - A * A / W))
        B = np.dot(w, self.b[idx])
        return A * A / (B + self.lam)

    def best_split(self, idx):
        n_features = self.X.shape[1]
        if self.n_sub < n_features:
            feats = np.sort(self.rng.choice(n_features, self.n_sub, replace=False))
        else:
            feats = np.arange(n_features)
        best = (-np.inf, None, None)
        w_all = self.w[idx]
        a_all = self.a[idx] * w_all
        b_all = self.b[idx] * w_all
        for f in feats:
            x = self.X[idx, f]
            order = np.argsort(x, kind="stable")
            xs = x[order]
            distinct = xs[:-1] < xs[1:]
            if not distinct.any():
                continue
            cw = np.cumsum(w_all[order])
            ca = np.cumsum(a_all[order])
            cb = np.cumsum(b_all[order])
            W, A, B = cw[-1], ca[-1], cb[-1]
            wl, al, bl = cw[:-1], ca[:-1], cb[:-1]
            wr, ar, br = W - wl, A - al, B - bl
            ok = distinct & (wl >= self.min_leaf) & (wr >= self.min_leaf)
            if not ok.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                score = self._score(wl, al, bl, wr, ar, br)
            score = np.where(ok, score, -np.inf)
            k = int(np.argmax(score))
            if score[k] > best[0]:
                best = (float(score[k]), int(f), float((xs[k] + xs[k + 1]) / 2.0))
        # zero-gain splits are allowed (XOR roots have none better); worse ones are not
        parent = self._parent_score(idx)
        if best[1] is None or best[0] < parent - _TIE * max(1.0, abs(parent)):
            return None, None
        return best[1], best[2]

    def grow(self, idx, depth=0) -> int:
        node_id = len(self.nodes)
        self.nodes.append([LEAF, 0.0, -1, -1, self.leaf_value(idx)])
        if self.max_depth is not None and depth >= self.max_depth:
            return node_id
        if self.w[idx].sum() < 2 * self.min_leaf:
            return node_id
        if self.mode == "gini":
            ys = self.a[idx]
            if ys.min() == ys.max():
                return node_id
        f, thr = self.best_split(idx)
        if f is None:
            return node_id
        go_left = self.X[idx, f] <= thr
        left = self.grow(idx[go_left], depth + 1)
        right = self.grow(idx[~go_left], depth + 1)
        self.nodes[node_id][:4] = [f, thr, left, right]
        return node_id

    def tree(self) -> Tree:
        arr = list(zip(*self.nodes))
        return Tree(np.array(arr[0], dtype=np.int64), np.array(arr[1], dtype=np.float64),
                    np.array(arr[2], dtype=np.int64), np.array(arr[3], dtype=np.int64),
                    np.array(arr[4], dtype=np.float64))


def fit_classification_tree(X, y, weights=None, max_features=None, min_samples_leaf=1,
                            max_depth=None, rng=None) -> Tree:
    """Gini CART; leaf values are the weighted fraction of class 1."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)
    idx = np.flatnonzero(w > 0)
    rng = rng if rng is not None else np.random.default_rng(0)
    g = _Growth(X, y, np.zeros_like(y), w, min_samples_leaf, max_depth,
                resolve_max_features(max_features, X.shape[1]), rng, "gini")
    g.grow(idx)
    return g.tree()


def fit_newton_tree(X, grad, hess, rows=None, max_features=None, min_samples_leaf=1,
                    max_depth=3, reg_lambda=1.0, rng=None) -> Tree:
    """Regression tree on negative gradients with Newton leaf values sum(g)/(sum(h)+lambda)."""
    X = np.asarray(X, dtype=np.float64)
    w = np.ones(len(grad))
    idx = np.arange(len(grad)) if rows is None else np.asarray(rows)
    rng = rng if rng is not None else np.random.default_rng(0)
    g = _Growth(X, np.asarray(grad, dtype=np.float64), np.asarray(hess, dtype=np.float64), w,
                min_samples_leaf, max_depth, resolve_max_features(max_features, X.shape[1]), rng,
                "newton", reg_lambda)
    g.grow(idx)
    return g.tree()


def pack_trees(trees: List[Tree]) -> dict:
    offsets = np.cumsum([0] + [t.n_nodes for t in trees]).astype(np.int64)
    return {
        "tree_offsets": offsets,
        "tree_feature": np.concatenate([t.feature for t in trees]),
        "tree_threshold": np.concatenate([t.threshold for t in trees]),
        "tree_left": np.concatenate([t.left for t in trees]),
        "tree_right": np.concatenate([t.right for t in trees]),
        "tree_value": np.concatenate([t.value for t in trees]),
    }


def unpack_trees(w: dict) -> List[Tree]:
    off = w["tree_offsets"]
    return [Tree(w["tree_feature"][a:b], w["tree_threshold"][a:b], w["tree_left"][a:b],
                 w["tree_right"][a:b], w["tree_value"][a:b]) for a, b in zip(off[:-1], off[1:])]
