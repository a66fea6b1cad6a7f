"""Shared model record, numerics and label checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

from ..errors import DegenerateLabels, ShapeError


# weight entries that are training artifacts rather than parameters
NON_PARAMETERS = frozenset({"loss_curve", "train_proba"})


@dataclass
class TrainedModel:
    kind: str
    params: Dict[str, Any]
    weights: Dict[str, np.ndarray]
    meta: Dict[str, Any] = field(default_factory=dict)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(z):
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def logistic_loss(logits, y) -> float:
    """Mean binary cross-entropy computed from logits."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(softplus(logits) - y * logits))


def check_binary(y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeError("labels must be a 1-d array")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if y.size < 2 or y.min() == y.max():
        raise DegenerateLabels("training labels must contain both classes")
    return y.astype(np.float64)


def as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"expected an N x D matrix, got shape {X.shape}")
    return X
