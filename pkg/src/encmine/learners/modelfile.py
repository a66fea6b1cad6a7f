"""Self-describing binary model container.

Layout: magic, u16 format version, u32 header length, JSON header, raw
little-endian blobs, then a SHA-256 of everything before it. The header
carries kind, params, meta and a blob table; nothing depends on wall-clock
time, so identical models serialize to identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from typing import Optional

import numpy as np

from ..errors import DigestMismatch, ModelError
from .base import TrainedModel

MAGIC = b"ENCMODEL"
FORMAT_VERSION = 1
_DTYPES = {"f8": "<f8", "i8": "<i8", "u1": "u1"}


def _dtype_tag(a: np.ndarray) -> str:
    if a.dtype.kind == "f":
        return "f8"
    if a.dtype.kind in "iub" and a.dtype.itemsize > 1:
        return "i8"
    if a.dtype == np.uint8:
        return "u1"
    return "i8"


def dumps_model(model: TrainedModel) -> bytes:
    blobs, table, offset = [], [], 0
    for name in sorted(model.weights):
        a = np.asarray(model.weights[name])
        tag = _dtype_tag(a)
        raw = np.ascontiguousarray(a, dtype=_DTYPES[tag]).tobytes()
        table.append({"name": name, "dtype": tag, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"kind": model.kind, "params": model.params, "meta": model.meta, "blobs": table},
                        sort_keys=True).encode()
    body = MAGIC + struct.pack("<HI", FORMAT_VERSION, len(header)) + header + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def loads_model(data: bytes, expected_scaler_digest: Optional[str] = None,
                expected_manifest_version: Optional[str] = None) -> TrainedModel:
    if len(data) < 46 or data[:8] != MAGIC:
        raise ModelError("not a model file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise DigestMismatch("model file checksum mismatch (corrupt or edited)")
    version, hlen = struct.unpack_from("<HI", body, 8)
    if version != FORMAT_VERSION:
        raise ModelError(f"unsupported model format version {version}")
    header = json.loads(body[14:14 + hlen])
    base = 14 + hlen
    weights = {}
    for entry in header["blobs"]:
        start = base + entry["offset"]
        arr = np.frombuffer(body[start:start + entry["nbytes"]], dtype=_DTYPES[entry["dtype"]])
        weights[entry["name"]] = arr.reshape(entry["shape"]).copy()
    meta = header.get("meta", {})
    if expected_scaler_digest is not None and meta.get("scaler_digest") != expected_scaler_digest:
        raise DigestMismatch("model was trained with a different scaler")
    if expected_manifest_version is not None and meta.get("manifest_version") != expected_manifest_version:
        raise DigestMismatch("model was trained against a different feature manifest")
    return TrainedModel(header["kind"], header["params"], weights, meta)


def save_model(model: TrainedModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_model(model))


def load_model(path, **expect) -> TrainedModel:
    with open(path, "rb") as fh:
        return loads_model(fh.read(), **expect)
