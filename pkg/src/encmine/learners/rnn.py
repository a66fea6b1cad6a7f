"""Stacked, optionally bidirectional LSTM/GRU sequence classifiers.

Weight layout per layer and direction: ``Wx`` (D, G*H), ``Wh`` (H, G*H),
``b`` (G*H,) with gate blocks ordered [input, forget, candidate, output] for
LSTM and [reset, update, candidate] for GRU. GRU candidate uses the reset gate
on the previous state before the recurrent product:
``n = tanh(x Wn + (r * h) Un + bn)``, ``h' = z * h + (1 - z) * n``.
"""
from __future__ import annotations

from typing import Dict, List, Tuple

import numpy as np

from ..errors import ShapeError
from .base import NON_PARAMETERS, TrainedModel, check_binary, logistic_loss, sigmoid
from .optim import Adam, minibatches
from .params import RnnParams

GATES = {"LSTM": 4, "GRU": 3}


def lstm_step(x, h, c, Wx, Wh, b):
    H = h.shape[-1]
    a = x @ Wx + h @ Wh + b
    i = sigmoid(a[..., :H])
    f = sigmoid(a[..., H:2 * H])
    g = np.tanh(a[..., 2 * H:3 * H])
    o = sigmoid(a[..., 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (x, h, c, i, f, g, o, tc)


def gru_step(x, h, Wx, Wh, b):
    H = h.shape[-1]
    ax = x @ Wx + b
    a_rz = ax[..., :2 * H] + h @ Wh[:, :2 * H]
    r = sigmoid(a_rz[..., :H])
    z = sigmoid(a_rz[..., H:])
    rh = r * h
    n = np.tanh(ax[..., 2 * H:] + rh @ Wh[:, 2 * H:])
    h_new = z * h + (1.0 - z) * n
    return h_new, (x, h, r, z, n, rh)


def rnn_cell_step(cell: str, x, state, weights: Dict[str, np.ndarray]):
    """One recurrent step. ``state`` is ``(h, c)`` for LSTM and ``h`` for GRU.

    Returns ``(new_state, output)`` where output is the new hidden state.
    """
    Wx, Wh, b = weights["Wx"], weights["Wh"], weights["b"]
    x = np.asarray(x, dtype=np.float64)
    G = GATES[cell]
    if Wx.shape[0] != x.shape[-1] or Wh.shape[1] != Wx.shape[1] or Wx.shape[1] != G * Wh.shape[0]:
        raise ShapeError("cell weights do not match the input width / gate layout")
    if cell == "LSTM":
        h, c = state
        h_new, c_new, _ = lstm_step(x, h, c, Wx, Wh, b)
        return (h_new, c_new), h_new
    h_new, _ = gru_step(x, state, Wx, Wh, b)
    return h_new, h_new


def _lstm_back(dh, dc, cache, Wx, Wh, grads):
    x, h, c, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di, dg, df = dc * g, dc * i, dc * c
    da = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=-1)
    grads["Wx"] += x.T @ da
    grads["Wh"] += h.T @ da
    grads["b"] += da.sum(axis=0)
    return da @ Wx.T, da @ Wh.T, dc * f


def _gru_back(dh, cache, Wx, Wh, grads):
    x, h, r, z, n, rh = cache
    H = h.shape[-1]
    dz = dh * (h - n)
    dn = dh * (1.0 - z)
    dh_prev = dh * z
    dan = dn * (1.0 - n * n)
    grads["Wh"][:, 2 * H:] += rh.T @ dan
    drh = dan @ Wh[:, 2 * H:].T
    dr = drh * h
    dh_prev = dh_prev + drh * r
    da_rz = np.concatenate([dr * r * (1 - r), dz * z * (1 - z)], axis=-1)
    grads["Wh"][:, :2 * H] += h.T @ da_rz
    dh_prev = dh_prev + da_rz @ Wh[:, :2 * H].T
    da = np.concatenate([da_rz, dan], axis=-1)
    grads["Wx"] += x.T @ da
    grads["b"] += da.sum(axis=0)
    return da @ Wx.T, dh_prev


def _directions(p: RnnParams) -> Tuple[str, ...]:
    return ("f", "b") if p.bidirectional else ("f",)


def init_rnn(p: RnnParams, input_dim: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    G, H = GATES[p.cell], p.hidden
    scale = 1.0 / np.sqrt(H)
    w = {}
    for layer in range(p.layers):
        d_in = input_dim if layer == 0 else H * len(_directions(p))
        for d in _directions(p):
            k = f"l{layer}{d}_"
            w[k + "Wx"] = rng.uniform(-scale, scale, (d_in, G * H))
            w[k + "Wh"] = rng.uniform(-scale, scale, (H, G * H))
            b = np.zeros(G * H)
            if p.cell == "LSTM":
                b[H:2 * H] = 1.0
            w[k + "b"] = b
    w["out_W"] = rng.uniform(-scale, scale, (H * len(_directions(p)), 1))
    w["out_b"] = np.zeros(1)
    return w


def _run_direction(p, w, k, X):
    """Run one direction over X (B, T, D) in its processing order."""
    B, T, _ = X.shape
    H = p.hidden
    Wx, Wh, b = w[k + "Wx"], w[k + "Wh"], w[k + "b"]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs, caches = [], []
    for t in range(T):
        if p.cell == "LSTM":
            h, c, cache = lstm_step(X[:, t], h, c, Wx, Wh, b)
        else:
            h, cache = gru_step(X[:, t], h, Wx, Wh, b)
        hs.append(h)
        caches.append(cache)
    return np.stack(hs, axis=1), caches


def rnn_forward(p: RnnParams, w, X):
    """Logits (B,) plus the caches needed for backpropagation."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != w["l0f_Wx"].shape[0]:
        raise ShapeError(f"RNN input must be N x T x {w['l0f_Wx'].shape[0]}, got {X.shape}")
    layer_in = X
    tape = []
    for layer in range(p.layers):
        outs, caches = [], {}
        for d in _directions(p):
            seq = layer_in if d == "f" else layer_in[:, ::-1]
            hs, cache = _run_direction(p, w, f"l{layer}{d}_", seq)
            caches[d] = cache
            outs.append(hs if d == "f" else hs[:, ::-1])
        tape.append((layer_in, caches))
        layer_in = np.concatenate(outs, axis=-1)
    H = p.hidden
    # final state of each direction: forward at t=T-1, backward at t=0
    feats = [layer_in[:, -1, :H]]
    if p.bidirectional:
        feats.append(layer_in[:, 0, H:])
    feat = np.concatenate(feats, axis=-1)
    logits = (feat @ w["out_W"] + w["out_b"])[:, 0]
    return logits, (tape, feat)


def rnn_loss_and_grads(p: RnnParams, w, X, y):
    logits, (tape, feat) = rnn_forward(p, w, X)
    y = np.asarray(y, dtype=np.float64)
    B = len(y)
    loss = logistic_loss(logits, y)
    dz = (sigmoid(logits) - y)[:, None] / B
    grads = {k: np.zeros_like(v) for k, v in w.items() if k not in NON_PARAMETERS}
    grads["out_W"] = feat.T @ dz
    grads["out_b"] = dz.sum(axis=0)
    dfeat = dz @ w["out_W"].T
    H = p.hidden
    T = tape[0][0].shape[1]
    n_dir = len(_directions(p))
    d_out = np.zeros((B, T, H * n_dir))
    d_out[:, -1, :H] = dfeat[:, :H]
    if p.bidirectional:
        d_out[:, 0, H:] = dfeat[:, H:]
    for layer in reversed(range(p.layers)):
        layer_in, caches = tape[layer]
        d_in = np.zeros_like(layer_in)
        for j, d in enumerate(_directions(p)):
            k = f"l{layer}{d}_"
            g = {"Wx": grads[k + "Wx"], "Wh": grads[k + "Wh"], "b": grads[k + "b"]}
            dh_seq = d_out[:, :, j * H:(j + 1) * H]
            if d == "b":
                dh_seq = dh_seq[:, ::-1]
            dx_seq = np.zeros((B, T, layer_in.shape[2]))
            dh_next = np.zeros((B, H))
            dc_next = np.zeros((B, H))
            cache = caches[d]
            for t in reversed(range(T)):
                dh = dh_seq[:, t] + dh_next
                if p.cell == "LSTM":
                    dx, dh_next, dc_next = _lstm_back(dh, dc_next, cache[t], w[k + "Wx"], w[k + "Wh"], g)
                else:
                    dx, dh_next = _gru_back(dh, cache[t], w[k + "Wx"], w[k + "Wh"], g)
                dx_seq[:, t] = dx
            d_in += dx_seq if d == "f" else dx_seq[:, ::-1]
        d_out = d_in
    return loss, grads


def fit_rnn(sequences, y, p: RnnParams = RnnParams()) -> TrainedModel:
    X = np.asarray(sequences, dtype=np.float64)
    if X.ndim != 3:
        raise ShapeError(f"sequences must be N x T x D, got {X.shape}")
    y = check_binary(y)
    if X.shape[0] != y.size:
        raise ShapeError("sequence count and label count differ")
    rng = np.random.default_rng(p.seed)
    w = init_rnn(p, X.shape[2], rng)
    opt = Adam(w, p.learning_rate)
    curve = []
    for _ in range(p.epochs):
        for idx in minibatches(len(y), p.batch, rng):
            _, grads = rnn_loss_and_grads(p, w, X[idx], y[idx])
            opt.step(w, grads)
        curve.append(logistic_loss(rnn_forward(p, w, X)[0], y))
    w["loss_curve"] = np.array(curve)
    model = TrainedModel("rnn", {**p.to_mapping(), "input_dim": X.shape[2], "steps": X.shape[1]}, w)
    model.weights["train_proba"] = rnn_proba(model, X)
    return model


def rnn_params(model: TrainedModel) -> RnnParams:
    keys = RnnParams.__dataclass_fields__
    return RnnParams(**{k: v for k, v in model.params.items() if k in keys})


def rnn_proba(model: TrainedModel, X) -> np.ndarray:
    return sigmoid(rnn_forward(rnn_params(model), model.weights, X)[0])
