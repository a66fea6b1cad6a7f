"""Desk-scale learners with a uniform fit / predict_proba contract."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .base import TrainedModel, sigmoid
from .cnn import cnn_proba, fit_cnn
from .forest import fit_random_forest, forest_proba
from .gbt import GBT_DEFAULTS, fit_gbt, gbt_proba
from .gradcheck import affine_model, gradient_check
from .modelfile import dumps_model, load_model, loads_model, save_model
from .params import CnnParams, RnnParams, TreeEnsembleParams
from .rnn import fit_rnn, rnn_cell_step, rnn_proba

_INPUT_RANK = {"random_forest": 2, "gbt": 2, "rnn": 3, "cnn": 3, "affine": 2}


def predict_proba(model: TrainedModel, X) -> np.ndarray:
    """Probability of the malicious class; a single sample yields a 1-element array."""
    X = np.asarray(X, dtype=np.float64)
    rank = _INPUT_RANK.get(model.kind)
    if rank is None:
        raise ShapeError(f"unknown model kind {model.kind!r}")
    if X.ndim == rank - 1:
        X = X[None]
    if X.ndim != rank:
        raise ShapeError(f"{model.kind} expects rank-{rank} input, got shape {X.shape}")
    if model.kind in ("random_forest", "gbt") and X.shape[1] != model.params["n_features"]:
        raise ShapeError(f"{model.kind} trained on {model.params['n_features']} features, got {X.shape[1]}")
    if model.kind == "random_forest":
        p = forest_proba(model, X)
    elif model.kind == "gbt":
        p = gbt_proba(model, X)
    elif model.kind == "rnn":
        if X.shape[1:] != (model.params["steps"], model.params["input_dim"]):
            raise ShapeError(f"rnn expects N x {model.params['steps']} x {model.params['input_dim']}")
        p = rnn_proba(model, X)
    elif model.kind == "cnn":
        p = cnn_proba(model, X)
    else:
        p = sigmoid(X.reshape(len(X), -1) @ model.weights["W"] + model.weights["b"][0])
    return np.clip(p, 0.0, 1.0)


def fit_model(kind: str, X, y, params: dict) -> TrainedModel:
    if kind == "random_forest":
        return fit_random_forest(X, y, TreeEnsembleParams.from_mapping(params))
    if kind == "gbt":
        return fit_gbt(X, y, TreeEnsembleParams.from_mapping({**GBT_DEFAULTS, **params}))
    if kind == "rnn":
        return fit_rnn(X, y, RnnParams.from_mapping(params))
    if kind == "cnn":
        return fit_cnn(X, y, CnnParams.from_mapping(params))
    raise ValueError(f"unknown model kind {kind!r}")


__all__ = [
    "TrainedModel", "TreeEnsembleParams", "RnnParams", "CnnParams", "fit_random_forest", "fit_gbt",
    "fit_rnn", "fit_cnn", "fit_model", "predict_proba", "rnn_cell_step", "gradient_check",
    "affine_model", "dumps_model", "loads_model", "save_model", "load_model",
]
