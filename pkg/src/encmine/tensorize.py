"""Fixed-shape model inputs built from FeatureRecords.

Per-packet blocks are truncated to the first 15 packets and average-padded
separately per scope (all packets vs encrypted packets), then scaled with a
min-max scaler fitted on training records. The square input is the Gram
product of the scaled image matrix.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, EmptyInput, ManifestMismatch, ShapeError
from .features.engine import FeatureRecord
from .features.manifest import ENC, FeatureManifest

N_PACKETS = 15
EPSILON = 1e-12
LABEL_CODES = {"benign": 0, "malicious": 1}


def truncate_and_pad(rows, n: int = N_PACKETS) -> np.ndarray:
    """Keep the first ``n`` rows; pad short inputs with per-column means."""
    m = np.asarray(rows, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.shape[0] == 0:
        raise EmptyInput("cannot pad an empty packet matrix")
    if m.shape[0] >= n:
        return m[:n].copy()
    fill = np.broadcast_to(m.mean(axis=0), (n - m.shape[0], m.shape[1]))
    return np.vstack([m, fill])


def gram_square(image) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64)
    if x.shape != (N_PACKETS, 38):
        raise ShapeError(f"gram_square expects a 15x38 matrix, got {x.shape}")
    g = x.T @ x
    return (g + g.T) / 2.0


def _check_manifest(record: FeatureRecord, manifest: FeatureManifest) -> None:
    if record.manifest_version != manifest.version:
        raise ManifestMismatch(
            f"record {record.session_id} built with {record.manifest_version}, manifest is {manifest.version}")


def raw_block(record: FeatureRecord, names: Sequence[str]) -> np.ndarray:
    """Unscaled 15 x len(names) block; each scope is padded over its own packets."""
    out = np.empty((N_PACKETS, len(names)))
    for scope, is_enc in (("traditional", False), ("enc", True)):
        idx = [i for i, n in enumerate(names) if n.startswith(ENC) == is_enc]
        if not idx:
            continue
        series = record.packet_series.get(scope, {})
        try:
            cols = [series[names[i]] for i in idx]
        except KeyError as exc:
            raise ManifestMismatch(f"record {record.session_id} lacks per-packet feature {exc}") from exc
        out[:, idx] = truncate_and_pad(np.array(cols, dtype=np.float64).T)
    return out


def raw_ratio_vector(record: FeatureRecord, manifest: FeatureManifest) -> np.ndarray:
    try:
        return np.array([record.ratio_features[n] for n in manifest.ratio_names], dtype=np.float64)
    except KeyError as exc:
        raise ManifestMismatch(f"record {record.session_id} lacks ratio feature {exc}") from exc


@dataclass(frozen=True)
class Scaler:
    """Per-feature min-max scaling; ``identity`` passes values through."""

    bounds: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    epsilon: float = EPSILON
    identity: bool = False

    def __post_init__(self):
        for name, (lo, hi) in self.bounds.items():
            if hi < lo:
                raise ValueError(f"scaler bounds for {name} have max < min")

    def apply_scaler(self, value: float, feature: str) -> float:
        return float(self.apply(np.array([[value]]), [feature])[0, 0])

    def apply(self, matrix: np.ndarray, names: Sequence[str]) -> np.ndarray:
        m = np.asarray(matrix, dtype=np.float64)
        if self.identity:
            return m.copy()
        try:
            lo = np.array([self.bounds[n][0] for n in names])
            hi = np.array([self.bounds[n][1] for n in names])
        except KeyError as exc:
            raise ManifestMismatch(f"scaler has no bounds for {exc}") from exc
        span = hi - lo
        scaled = np.clip((m - lo) / (span + self.epsilon), 0.0, 1.0)
        return np.where(span > 0, scaled, 0.0)

    def to_mapping(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "identity": self.identity,
            "bounds": {k: [float(lo), float(hi)] for k, (lo, hi) in sorted(self.bounds.items())},
        }

    @classmethod
    def from_mapping(cls, m: dict) -> "Scaler":
        return cls({k: (float(v[0]), float(v[1])) for k, v in m["bounds"].items()},
                   float(m.get("epsilon", EPSILON)), bool(m.get("identity", False)))

    def dumps(self) -> str:
        return json.dumps(self.to_mapping(), sort_keys=True)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()


def fit_scaler(records: Sequence[FeatureRecord], manifest: FeatureManifest) -> Scaler:
    if not records:
        raise EmptyInput("fit_scaler needs at least one record")
    time_names, pay_names, ratio_names = (list(manifest.time_feature_list),
                                          list(manifest.payload_feature_list), manifest.ratio_names)
    lo: Dict[str, float] = {}
    hi: Dict[str, float] = {}

    def update(names, values):
        for n, colmin, colmax in zip(names, values.min(axis=0), values.max(axis=0)):
            lo[n] = min(lo.get(n, np.inf), float(colmin))
            hi[n] = max(hi.get(n, -np.inf), float(colmax))

    for r in records:
        _check_manifest(r, manifest)
        update(time_names, raw_block(r, time_names))
        update(pay_names, raw_block(r, pay_names))
        update(ratio_names, raw_ratio_vector(r, manifest)[None, :])
    return Scaler({n: (lo[n], hi[n]) for n in lo})


@dataclass
class TensorBundle:
    time_matrix: np.ndarray
    image_matrix: np.ndarray
    square_matrix: np.ndarray
    ratio_vector: np.ndarray
    label: Optional[int] = None
    session_id: str = ""
    manifest_version: str = ""

    def validate(self, n_ratio: Optional[int] = None) -> None:
        shapes = {"time_matrix": (N_PACKETS, 85), "image_matrix": (N_PACKETS, 38), "square_matrix": (38, 38)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.ratio_vector.ndim != 1 or (n_ratio is not None and self.ratio_vector.size != n_ratio):
            raise ShapeError(f"ratio_vector has shape {self.ratio_vector.shape}")
        for name in ("time_matrix", "image_matrix", "square_matrix", "ratio_vector"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"{name} contains non-finite values")


def build_time_matrix(record: FeatureRecord, scaler: Scaler, manifest: FeatureManifest) -> np.ndarray:
    _check_manifest(record, manifest)
    names = list(manifest.time_feature_list)
    return scaler.apply(raw_block(record, names), names)


def build_image_matrix(record: FeatureRecord, scaler: Scaler, manifest: FeatureManifest) -> np.ndarray:
    _check_manifest(record, manifest)
    names = list(manifest.payload_feature_list)
    return scaler.apply(raw_block(record, names), names)


def build_ratio_vector(record: FeatureRecord, scaler: Scaler, manifest: FeatureManifest) -> np.ndarray:
    _check_manifest(record, manifest)
    return scaler.apply(raw_ratio_vector(record, manifest)[None, :], manifest.ratio_names)[0]


def tensorize(record: FeatureRecord, scaler: Scaler, manifest: FeatureManifest) -> TensorBundle:
    image = build_image_matrix(record, scaler, manifest)
    bundle = TensorBundle(
        time_matrix=build_time_matrix(record, scaler, manifest),
        image_matrix=image,
        square_matrix=gram_square(image),
        ratio_vector=build_ratio_vector(record, scaler, manifest),
        label=LABEL_CODES.get(record.label),
        session_id=record.session_id,
        manifest_version=record.manifest_version,
    )
    bundle.validate(len(manifest.ratio_names))
    return bundle


# -- serialization -----------------------------------------------------------

_BUNDLE_MAGIC = b"ENCTNSR1"
_FIELDS = ("time_matrix", "image_matrix", "square_matrix", "ratio_vector")


def _pack_array(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    return struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape) + a.tobytes()


def _unpack_array(buf: memoryview, pos: int) -> Tuple[np.ndarray, int]:
    (ndim,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    shape = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    a = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
    return a, pos + 8 * count


def dumps_bundles(bundles: Sequence[TensorBundle], provenance: Optional[dict] = None) -> bytes:
    prov = json.dumps(provenance or {}, sort_keys=True).encode()
    parts = [_BUNDLE_MAGIC, struct.pack("<II", len(prov), len(bundles)), prov]
    for b in bundles:
        sid, mv = b.session_id.encode(), b.manifest_version.encode()
        label = 255 if b.label is None else int(b.label)
        parts.append(struct.pack("<BII", label, len(sid), len(mv)) + sid + mv)
        parts.extend(_pack_array(getattr(b, f)) for f in _FIELDS)
    return b"".join(parts)


def loads_bundles(data: bytes) -> Tuple[List[TensorBundle], dict]:
    if data[:8] != _BUNDLE_MAGIC:
        raise DataError("not a tensor bundle file")
    buf = memoryview(data)
    plen, count = struct.unpack_from("<II", buf, 8)
    pos = 16
    provenance = json.loads(bytes(buf[pos:pos + plen]) or b"{}")
    pos += plen
    out = []
    for _ in range(count):
        label, slen, mlen = struct.unpack_from("<BII", buf, pos)
        pos += 9
        sid = bytes(buf[pos:pos + slen]).decode()
        mv = bytes(buf[pos + slen:pos + slen + mlen]).decode()
        pos += slen + mlen
        arrays = []
        for _f in _FIELDS:
            a, pos = _unpack_array(buf, pos)
            arrays.append(a)
        out.append(TensorBundle(*arrays, label=None if label == 255 else label,
                                session_id=sid, manifest_version=mv))
    return out, provenance


def bundle_to_json(b: TensorBundle) -> str:
    return json.dumps({"session_id": b.session_id, "label": b.label, "manifest_version": b.manifest_version,
                       **{f: getattr(b, f).tolist() for f in _FIELDS}}, sort_keys=True)
