"""Central-difference gradient checking for the differentiable learners."""
from __future__ import annotations

import numpy as np

from ..errors import NotDifferentiable
from .base import NON_PARAMETERS, TrainedModel, logistic_loss, sigmoid
from .cnn import cnn_forward, cnn_loss_and_grads
from .rnn import rnn_loss_and_grads, rnn_params


def affine_loss_and_grads(w, X, y):
    X = np.asarray(X, dtype=np.float64).reshape(len(y), -1)
    y = np.asarray(y, dtype=np.float64)
    z = X @ w["W"] + w["b"][0]
    dz = (sigmoid(z) - y) / len(y)
    return logistic_loss(z, y), {"W": X.T @ dz, "b": np.array([dz.sum()])}


def affine_model(n_features: int, rng=None) -> TrainedModel:
    rng = rng or np.random.default_rng(0)
    return TrainedModel("affine", {"n_features": n_features},
                        {"W": rng.normal(0, 0.5, n_features), "b": rng.normal(0, 0.5, 1)})


def loss_and_grads(model: TrainedModel, X, y):
    if model.kind == "rnn":
        return rnn_loss_and_grads(rnn_params(model), model.weights, X, y)
    if model.kind == "cnn":
        return cnn_loss_and_grads(model.weights, X, y)
    if model.kind == "affine":
        return affine_loss_and_grads(model.weights, X, y)
    raise NotDifferentiable(f"{model.kind} models have no parameter gradient")


def gradient_check(model: TrainedModel, sample, eps: float = 1e-5) -> float:
    """Largest elementwise relative error between analytic and numeric gradients.

    ``sample`` is ``(inputs, labels)`` with a leading batch axis.
    Error per entry is ``|ga - gn| / max(|ga| + |gn|, 1e-8)``.
    """
    X, y = sample
    _, analytic = loss_and_grads(model, X, y)
    worst = 0.0
    w = model.weights
    for name, param in w.items():
        if name in NON_PARAMETERS:
            continue
        ga = analytic[name]
        flat = param.reshape(-1)
        gflat = ga.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            plus = loss_and_grads(model, X, y)[0]
            flat[j] = orig - eps
            minus = loss_and_grads(model, X, y)[0]
            flat[j] = orig
            gn = (plus - minus) / (2 * eps)
            err = abs(gflat[j] - gn) / max(abs(gflat[j]) + abs(gn), 1e-8)
            worst = max(worst, err)
    return worst


def _relu_pattern(w, X) -> np.ndarray:
    tape = cnn_forward(w, X)[1][0]
    parts = [tape[0][3]] + [t[k] for t in tape[1:] for k in (3, 7)]
    return np.concatenate([p.ravel() > 0 for p in parts])


def stencil_is_smooth(model: TrainedModel, X, eps: float = 1e-5) -> bool:
    """True when no single-parameter step of +-eps flips any ReLU.

    Central differences only estimate a derivative when the stencil stays on
    one linear piece; recurrent and affine models are smooth everywhere.
    """
    if model.kind in ("rnn", "affine"):
        return True
    if model.kind != "cnn":
        raise NotDifferentiable(f"{model.kind} models have no parameter gradient")
    base = _relu_pattern(model.weights, X)
    for name, param in model.weights.items():
        if name in NON_PARAMETERS:
            continue
        flat = param.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            try:
                for step in (eps, -eps):
                    flat[j] = orig + step
                    if not np.array_equal(_relu_pattern(model.weights, X), base):
                        return False
            finally:
                flat[j] = orig
    return True
