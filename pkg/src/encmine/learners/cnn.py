"""Mini residual CNN for single-channel 15x38 / 38x38 inputs.

stem conv3x3 -> ReLU -> residual blocks -> global average pool -> affine.
Each block computes ``relu(conv(relu(conv(x))) + skip(x))`` with an identity
skip, or a 1x1 projection when the channel count changes.
"""
from __future__ import annotations

from typing import Dict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .base import NON_PARAMETERS, TrainedModel, check_binary, logistic_loss, sigmoid
from .optim import Adam, minibatches
from .params import CnnParams


def conv2d(x, W, b):
    """Same-padded stride-1 convolution. x (N,C,H,W); W (O,C,k,k); returns (out, cols)."""
    N, C, H, Wd = x.shape
    O, _, k, _ = W.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # N,C,H,W,k,k
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * H * Wd, C * k * k)
    out = cols @ W.reshape(O, -1).T + b
    return out.reshape(N, H, Wd, O).transpose(0, 3, 1, 2), cols


def conv2d_backward(dout, cols, x_shape, W):
    N, C, H, Wd = x_shape
    O, _, k, _ = W.shape
    pad = k // 2
    d = dout.transpose(0, 2, 3, 1).reshape(N * H * Wd, O)
    dW = (d.T @ cols).reshape(W.shape)
    db = d.sum(axis=0)
    dcols = (d @ W.reshape(O, -1)).reshape(N, H, Wd, C, k, k)
    dxp = np.zeros((N, C, H + 2 * pad, Wd + 2 * pad))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + H, j:j + Wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad:pad + H, pad:pad + Wd] if pad else dxp
    return dx, dW, db


def residual_block(x, w1, b1, w2, b2, proj=None):
    """Forward-only block, handy for checking the skip path in isolation."""
    h, _ = conv2d(x, w1, b1)
    h = np.maximum(h, 0.0)
    y, _ = conv2d(h, w2, b2)
    skip = x if proj is None else conv2d(x, *proj)[0]
    return np.maximum(y + skip, 0.0)


def init_cnn(p: CnnParams, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    widths = p.widths()
    w = {}

    def he(o, c, k):
        return rng.normal(0.0, np.sqrt(2.0 / (c * k * k)), (o, c, k, k))

    # small nonzero biases keep pre-activations off the ReLU kink on all-zero windows
    def bias(n):
        return rng.normal(0.0, 0.05, n)

    w["stem_W"], w["stem_b"] = he(widths[0], 1, 3), bias(widths[0])
    for i in range(p.blocks):
        cin, cout = widths[i], widths[i + 1]
        w[f"b{i}_W1"], w[f"b{i}_b1"] = he(cout, cin, 3), bias(cout)
        w[f"b{i}_W2"], w[f"b{i}_b2"] = he(cout, cout, 3) * 0.5, bias(cout)
        if cin != cout:
            w[f"b{i}_P"], w[f"b{i}_Pb"] = he(cout, cin, 1), bias(cout)
    w["out_W"] = rng.normal(0.0, 1.0 / np.sqrt(widths[-1]), (widths[-1], 1))
    w["out_b"] = np.zeros(1)
    return w


def _blocks(w):
    i = 0
    while f"b{i}_W1" in w:
        yield i
        i += 1


def cnn_forward(w, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ShapeError(f"CNN input must be N x H x W, got {X.shape}")
    x = X[:, None]
    tape = []
    a, cols = conv2d(x, w["stem_W"], w["stem_b"])
    tape.append(("stem", x.shape, cols, a))
    x = np.maximum(a, 0.0)
    for i in _blocks(w):
        a1, c1 = conv2d(x, w[f"b{i}_W1"], w[f"b{i}_b1"])
        h = np.maximum(a1, 0.0)
        a2, c2 = conv2d(h, w[f"b{i}_W2"], w[f"b{i}_b2"])
        if f"b{i}_P" in w:
            skip, cp = conv2d(x, w[f"b{i}_P"], w[f"b{i}_Pb"])
        else:
            skip, cp = x, None
        s = a2 + skip
        tape.append((i, x.shape, c1, a1, h.shape, c2, cp, s))
        x = np.maximum(s, 0.0)
    feat = x.mean(axis=(2, 3))
    logits = (feat @ w["out_W"] + w["out_b"])[:, 0]
    return logits, (tape, x.shape, feat)


def cnn_loss_and_grads(w, X, y):
    logits, (tape, last_shape, feat) = cnn_forward(w, X)
    y = np.asarray(y, dtype=np.float64)
    B = len(y)
    loss = logistic_loss(logits, y)
    dz = (sigmoid(logits) - y)[:, None] / B
    g = {k: np.zeros_like(v) for k, v in w.items() if k not in NON_PARAMETERS}
    g["out_W"] = feat.T @ dz
    g["out_b"] = dz.sum(axis=0)
    dfeat = dz @ w["out_W"].T
    _, _, H, Wd = last_shape
    dx = np.broadcast_to(dfeat[:, :, None, None] / (H * Wd), last_shape).copy()
    for entry in reversed(tape[1:]):
        i, x_shape, c1, a1, h_shape, c2, cp, s = entry
        ds = dx * (s > 0)
        dh, g[f"b{i}_W2"], g[f"b{i}_b2"] = conv2d_backward(ds, c2, h_shape, w[f"b{i}_W2"])
        da1 = dh * (a1 > 0)
        dx_main, g[f"b{i}_W1"], g[f"b{i}_b1"] = conv2d_backward(da1, c1, x_shape, w[f"b{i}_W1"])
        if cp is not None:
            dx_skip, g[f"b{i}_P"], g[f"b{i}_Pb"] = conv2d_backward(ds, cp, x_shape, w[f"b{i}_P"])
        else:
            dx_skip = ds
        dx = dx_main + dx_skip
    _, x_shape, cols, a = tape[0]
    _, g["stem_W"], g["stem_b"] = conv2d_backward(dx * (a > 0), cols, x_shape, w["stem_W"])
    return loss, g


def fit_cnn(images, y, p: CnnParams = CnnParams()) -> TrainedModel:
    X = np.asarray(images, dtype=np.float64)
    if X.ndim != 3 or tuple(X.shape[1:]) != tuple(p.input_shape):
        raise ShapeError(f"images must be N x {p.input_shape[0]} x {p.input_shape[1]}, got {X.shape}")
    y = check_binary(y)
    if X.shape[0] != y.size:
        raise ShapeError("image count and label count differ")
    rng = np.random.default_rng(p.seed)
    w = init_cnn(p, rng)
    opt = Adam(w, p.learning_rate)
    curve = []
    for _ in range(p.epochs):
        for idx in minibatches(len(y), p.batch, rng):
            _, grads = cnn_loss_and_grads(w, X[idx], y[idx])
            opt.step(w, grads)
        curve.append(logistic_loss(cnn_forward(w, X)[0], y))
    w["loss_curve"] = np.array(curve)
    model = TrainedModel("cnn", p.to_mapping(), w)
    model.weights["train_proba"] = cnn_proba(model, X)
    return model


def cnn_proba(model: TrainedModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    shape = tuple(model.params["input_shape"])
    if X.ndim != 3 or tuple(X.shape[1:]) != shape:
        raise ShapeError(f"CNN expects N x {shape[0]} x {shape[1]}, got {X.shape}")
    return sigmoid(cnn_forward(model.weights, X)[0])
