"""Gradient-boosted trees on the logistic loss with Newton leaf values."""
from __future__ import annotations

import math

import numpy as np

from .base import TrainedModel, as_2d, check_binary, logistic_loss, sigmoid
from .params import TreeEnsembleParams
from .tree import fit_newton_tree, pack_trees, unpack_trees

GBT_DEFAULTS = dict(max_features=None, max_depth=3)


def fit_gbt(X, y, p: TreeEnsembleParams = TreeEnsembleParams(**GBT_DEFAULTS)) -> TrainedModel:
    X = as_2d(X)
    y = check_binary(y)
    n = len(y)
    prior = y.mean()
    init = math.log(prior / (1.0 - prior))
    rng = np.random.default_rng(p.seed)
    depth = 3 if p.max_depth is None else p.max_depth
    F = np.full(n, init)
    losses = [logistic_loss(F, y)]
    trees = []
    for _ in range(p.n_estimators):
        prob = sigmoid(F)
        grad = y - prob
        hess = prob * (1.0 - prob)
        rows = None
        if p.subsample < 1.0:
            rows = np.sort(rng.choice(n, max(1, int(round(p.subsample * n))), replace=False))
        tree = fit_newton_tree(X, grad, hess, rows, p.max_features, p.min_samples_leaf, depth,
                               p.reg_lambda, rng)
        trees.append(tree)
        F = F + p.learning_rate * tree.predict(X)
        losses.append(logistic_loss(F, y))
    weights = pack_trees(trees)
    weights["init_score"] = np.array([init])
    weights["loss_curve"] = np.array(losses)
    model = TrainedModel("gbt", {**p.to_mapping(), "max_depth": depth, "n_features": X.shape[1]}, weights)
    model.weights["train_proba"] = sigmoid(F)
    return model


def gbt_logits(model: TrainedModel, X) -> np.ndarray:
    X = as_2d(X)
    lr = model.params["learning_rate"]
    F = np.full(X.shape[0], float(model.weights["init_score"][0]))
    for t in unpack_trees(model.weights):
        F = F + lr * t.predict(X)
    return F


def gbt_proba(model: TrainedModel, X) -> np.ndarray:
    return sigmoid(gbt_logits(model, X))
