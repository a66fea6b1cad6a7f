"""Random forest: Gini CART trees on Poisson bootstrap samples."""
from __future__ import annotations

import hashlib
import math

import numpy as np

from .base import TrainedModel, as_2d, check_binary
from .params import TreeEnsembleParams
from .tree import fit_classification_tree, pack_trees, unpack_trees

_POISSON_CDF = np.cumsum([math.exp(-1.0) / math.factorial(k) for k in range(24)])


def _splitmix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def _row_keys(row_ids) -> np.ndarray:
    """Integer ids pass through; strings (session ids) hash to stable 64-bit keys."""
    ids = list(row_ids)
    if all(isinstance(i, (int, np.integer)) for i in ids):
        return np.asarray(ids, dtype=np.int64).astype(np.uint64)
    return np.array([int.from_bytes(hashlib.sha256(str(i).encode()).digest()[:8], "little") for i in ids],
                    dtype=np.uint64)


def bootstrap_counts(row_ids, seed: int, tree: int) -> np.ndarray:
    """Poisson(1) resampling multiplicities keyed on (seed, tree, row id).

    Each row's count depends only on its own id, so reordering the training
    rows reorders the counts with them.
    """
    ids = _row_keys(row_ids)
    key = _splitmix(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]
    key = _splitmix(np.array([key ^ np.uint64(tree)], dtype=np.uint64))[0]
    with np.errstate(over="ignore"):
        h = _splitmix(ids ^ key)
    u = (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)
    return np.searchsorted(_POISSON_CDF, u, side="right").astype(np.float64)


def fit_random_forest(X, y, p: TreeEnsembleParams = TreeEnsembleParams(), row_ids=None) -> TrainedModel:
    X = as_2d(X)
    y = check_binary(y)
    if row_ids is None:
        row_ids = np.arange(len(y))
    trees = []
    for t in range(p.n_estimators):
        w = bootstrap_counts(row_ids, p.seed, t) if p.bootstrap else np.ones(len(y))
        if not w.any():
            w = np.ones(len(y))
        rng = np.random.default_rng([p.seed, t])
        trees.append(fit_classification_tree(X, y, w, p.max_features, p.min_samples_leaf,
                                             p.max_depth, rng))
    model = TrainedModel("random_forest", {**p.to_mapping(), "n_features": X.shape[1]},
                         pack_trees(trees))
    model.weights["train_proba"] = forest_proba(model, X)
    return model


def forest_proba(model: TrainedModel, X) -> np.ndarray:
    X = as_2d(X)
    trees = unpack_trees(model.weights)
    return np.mean([t.predict(X) for t in trees], axis=0)
