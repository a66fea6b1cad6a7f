"""Two-layer detector: three branch models feed a layer-2 meta detector.

Branch routing is fixed (time matrix -> sequence model, payload image or its
Gram square -> CNN, ratio vector -> tree ensemble). The layer-2 random forest
is trained on out-of-fold branch probabilities; every row's inputs come from
branch models fitted without that row's fold.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (DegenerateLabels, DigestMismatch, ModelError, RangeError, ShapeError,
                     TooFewRecords, VersionMismatch)
from .evaluation import evaluate
from .features.engine import FeatureRecord
from .features.manifest import ENC, TRADITIONAL_ONLY, FeatureManifest
from .learners import TrainedModel, TreeEnsembleParams, fit_model, predict_proba
from .learners.forest import fit_random_forest
from .learners.modelfile import dumps_model, loads_model
from .tensorize import LABEL_CODES, Scaler, TensorBundle, fit_scaler, gram_square, tensorize

BRANCHES = ("time", "image", "ratio")
VIEWS = {"time": ("time",), "image": ("image", "square"), "ratio": ("ratio",)}
LAYER2_KINDS = ("random_forest", "average_ensemble")
_SEQUENCE_KINDS = {"rnn": 3, "cnn": 3}

DEFAULT_BRANCHES = {
    "time": {"kind": "rnn", "view": "time", "params": {"cell": "LSTM", "hidden": 16, "epochs": 40}},
    "image": {"kind": "cnn", "view": "image", "params": {"blocks": 1, "channels": [8], "epochs": 30}},
    "ratio": {"kind": "gbt", "view": "ratio", "params": {"n_estimators": 100}},
}
# Leaves of >= 5 rows stop layer-2 trees from carving on near-constant branch outputs,
# whose full-refit values can drift outside the out-of-fold range.
DEFAULT_LAYER2_PARAMS = {"n_estimators": 100, "min_samples_leaf": 5}


@dataclass(frozen=True)
class BranchSpec:
    kind: str
    view: str
    params: dict = field(default_factory=dict)

    def to_mapping(self) -> dict:
        return {"kind": self.kind, "view": self.view, "params": dict(self.params)}


@dataclass(frozen=True)
class FrameworkConfig:
    branches: Dict[str, BranchSpec] = field(
        default_factory=lambda: {k: BranchSpec(**v) for k, v in DEFAULT_BRANCHES.items()})
    layer2: str = "random_forest"
    layer2_params: dict = field(default_factory=lambda: dict(DEFAULT_LAYER2_PARAMS))
    stacking_folds: int = 5
    decision_threshold: float = 0.5
    seed: int = 0
    ablate_enc: bool = False

    def __post_init__(self):
        if set(self.branches) != set(BRANCHES):
            raise ValueError(f"branches must be exactly {BRANCHES}")
        for name, spec in self.branches.items():
            if spec.view not in VIEWS[name]:
                raise ValueError(f"branch {name} cannot consume the {spec.view!r} view")
            if spec.kind not in ("rnn", "cnn", "gbt", "random_forest"):
                raise ValueError(f"unknown branch model kind {spec.kind!r}")
            if spec.kind == "rnn" and spec.view != "time":
                raise ValueError("rnn branches need the time view")
        if self.layer2 not in LAYER2_KINDS:
            raise ValueError(f"layer2 must be one of {LAYER2_KINDS}")
        if self.stacking_folds < 2:
            raise ValueError("stacking_folds must be at least 2")
        if not 0.0 < self.decision_threshold < 1.0:
            raise ValueError("decision_threshold must lie in (0, 1)")

    def to_mapping(self) -> dict:
        return {
            "branches": {k: self.branches[k].to_mapping() for k in BRANCHES},
            "layer2": self.layer2,
            "layer2_params": dict(self.layer2_params),
            "stacking_folds": self.stacking_folds,
            "decision_threshold": self.decision_threshold,
            "seed": self.seed,
            "ablate_enc": self.ablate_enc,
        }

    @classmethod
    def from_mapping(cls, m: Optional[dict]) -> "FrameworkConfig":
        m = dict(m or {})
        branches = {k: dict(v) for k, v in DEFAULT_BRANCHES.items()}
        for name, spec in (m.pop("branches", None) or {}).items():
            if name not in branches:
                raise ValueError(f"unknown branch {name!r}")
            merged = dict(branches[name])
            if "kind" in spec and spec["kind"] != merged["kind"]:
                merged["params"] = {}
            merged.update({k: v for k, v in spec.items() if k != "params"})
            merged["params"] = {**merged["params"], **(spec.get("params") or {})}
            branches[name] = merged
        if "layer2_params" in m:
            m["layer2_params"] = {**DEFAULT_LAYER2_PARAMS, **(m["layer2_params"] or {})}
        return cls(branches={k: BranchSpec(**v) for k, v in branches.items()}, **m)


@dataclass
class FrameworkModel:
    config: FrameworkConfig
    branches: Dict[str, TrainedModel]
    layer2: Optional[TrainedModel]
    scaler: Scaler
    manifest_version: str
    report: dict = field(default_factory=dict)
    ablation: Optional[Dict[str, np.ndarray]] = None

    def __post_init__(self):
        if set(self.branches) != set(BRANCHES):
            raise ModelError("a framework model needs exactly three branch models")
        for m in list(self.branches.values()) + ([self.layer2] if self.layer2 else []):
            if m.meta.get("manifest_version") != self.manifest_version:
                raise VersionMismatch("framework components disagree on the manifest version")


# -- views -------------------------------------------------------------------

def enc_derived(name: str) -> bool:
    """Columns that only exist because some packets were classified encrypted."""
    return name.startswith(ENC) or name in TRADITIONAL_ONLY


def ablation_means(bundles: Sequence[TensorBundle], manifest: FeatureManifest) -> Dict[str, np.ndarray]:
    """Training-mean constants for every Enc-derived column (NaN marks kept columns)."""
    time = np.stack([b.time_matrix for b in bundles]).mean(axis=(0, 1))
    image = np.stack([b.image_matrix for b in bundles]).mean(axis=(0, 1))
    ratio = np.stack([b.ratio_vector for b in bundles]).mean(axis=0)
    tmask = np.array([enc_derived(n) for n in manifest.time_feature_list])
    imask = np.array([enc_derived(n) for n in manifest.payload_feature_list])
    return {"time": np.where(tmask, time, np.nan), "image": np.where(imask, image, np.nan), "ratio": ratio}


def ablate_bundle(b: TensorBundle, means: Dict[str, np.ndarray]) -> TensorBundle:
    """Replace Enc-derived columns by constants, keeping every shape fixed."""
    def sub(m, consts):
        return np.where(np.isnan(consts), m, consts)

    image = sub(b.image_matrix, means["image"])
    return TensorBundle(sub(b.time_matrix, means["time"]), image, gram_square(image),
                        np.broadcast_to(means["ratio"], b.ratio_vector.shape).copy(),
                        b.label, b.session_id, b.manifest_version)


def branch_input(bundles: Sequence[TensorBundle], spec: BranchSpec) -> np.ndarray:
    attr = {"time": "time_matrix", "image": "image_matrix", "square": "square_matrix",
            "ratio": "ratio_vector"}[spec.view]
    X = np.stack([np.asarray(getattr(b, attr), dtype=np.float64) for b in bundles])
    if spec.kind in _SEQUENCE_KINDS:
        if X.ndim != 3:
            raise ShapeError(f"{spec.kind} branch needs a matrix view, got {spec.view}")
        return X
    return X.reshape(len(X), -1)


def _branch_params(spec: BranchSpec, seed: int) -> dict:
    params = {"seed": seed, **spec.params}
    if spec.kind == "cnn" and "input_shape" not in params:
        params["input_shape"] = [15, 38] if spec.view == "image" else [38, 38]
    return params


def _fit_branches(bundles, y, cfg: FrameworkConfig, row_ids=None) -> Dict[str, TrainedModel]:
    out = {}
    for name in BRANCHES:
        spec = cfg.branches[name]
        X = branch_input(bundles, spec)
        params = _branch_params(spec, cfg.seed)
        if spec.kind == "random_forest":
            out[name] = fit_random_forest(X, y, TreeEnsembleParams.from_mapping(params), row_ids=row_ids)
        else:
            out[name] = fit_model(spec.kind, X, y, params)
    return out


def _branch_matrix(models: Dict[str, TrainedModel], bundles, cfg: FrameworkConfig) -> np.ndarray:
    return np.column_stack([predict_proba(models[n], branch_input(bundles, cfg.branches[n])) for n in BRANCHES])


# -- layer 2 -----------------------------------------------------------------

def layer2_average(probs, threshold: float = 0.5) -> Tuple[float, bool]:
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (3,):
        raise ShapeError("layer-2 averaging takes exactly three branch probabilities")
    if not np.all((p >= 0.0) & (p <= 1.0)):
        raise RangeError("branch probabilities must lie in [0, 1]")
    mean = float(p.sum() / 3.0)
    mean = min(max(mean, float(p.min())), float(p.max()))  # guard against rounding drift
    return mean, mean >= threshold


def _layer2_proba(model: FrameworkModel, P: np.ndarray) -> np.ndarray:
    if model.layer2 is None:
        return np.array([layer2_average(row, model.config.decision_threshold)[0] for row in P])
    return predict_proba(model.layer2, P)


# -- training ----------------------------------------------------------------

def stratified_folds(y: np.ndarray, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x5F01D])
    folds = np.empty(len(y), dtype=np.int64)
    offset = 0
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = (np.arange(len(idx)) + offset) % k
        offset += len(idx)
    return folds


def check_no_leakage(log: dict) -> None:
    """Assert every stacked row was predicted by a model that excluded its fold."""
    row_fold = log["row_fold"]
    for entry in log["models"]:
        if entry["fold"] in entry["train_folds"]:
            raise AssertionError(f"fold model {entry['fold']} saw its own fold")
        for row in entry["predicted_rows"]:
            if row_fold[row] != entry["fold"] or row_fold[row] in entry["train_folds"]:
                raise AssertionError(f"row {row} leaked into its producing model")


def _labels(records: Sequence[FeatureRecord]) -> np.ndarray:
    unknown = sorted({r.label for r in records if r.label not in LABEL_CODES}, key=str)
    if unknown:
        raise DegenerateLabels(f"training records carry non-binary labels {unknown}")
    return np.array([LABEL_CODES[r.label] for r in records], dtype=np.int64)


def train_framework(records: Sequence[FeatureRecord], cfg: FrameworkConfig,
                    manifest: FeatureManifest) -> FrameworkModel:
    records = sorted(records, key=lambda r: r.session_id)
    y = _labels(records)
    k = cfg.stacking_folds
    if len(records) < 2 * k:
        raise TooFewRecords(f"need at least {2 * k} labelled records, got {len(records)}")
    if y.min() == y.max():
        raise DegenerateLabels("training labels must contain both classes")
    counts = np.bincount(y, minlength=2)
    if cfg.layer2 == "random_forest" and counts.min() < k:
        raise TooFewRecords(f"each class needs at least {k} records for {k}-fold stacking")

    scaler = fit_scaler(records, manifest)
    bundles = [tensorize(r, scaler, manifest) for r in records]
    ablation = None
    if cfg.ablate_enc:
        ablation = ablation_means(bundles, manifest)
        bundles = [ablate_bundle(b, ablation) for b in bundles]
    row_ids = [r.session_id for r in records]

    report: dict = {"n_records": len(records), "class_counts": {"benign": int(counts[0]),
                                                                "malicious": int(counts[1])}}
    layer2 = None
    if cfg.layer2 == "random_forest":
        folds = stratified_folds(y, k, cfg.seed)
        oof = np.empty((len(records), 3))
        log = {"row_fold": folds.tolist(), "models": []}
        for f in range(k):
            train, held = np.flatnonzero(folds != f), np.flatnonzero(folds == f)
            models = _fit_branches([bundles[i] for i in train], y[train], cfg, [row_ids[i] for i in train])
            oof[held] = _branch_matrix(models, [bundles[i] for i in held], cfg)
            log["models"].append({"fold": f, "train_folds": sorted(set(folds[train].tolist())),
                                  "predicted_rows": held.tolist()})
        check_no_leakage(log)
        l2params = TreeEnsembleParams.from_mapping({"seed": cfg.seed, **cfg.layer2_params})
        layer2 = fit_random_forest(oof, y, l2params, row_ids=row_ids)
        layer2.meta.update(manifest_version=manifest.version, scaler_digest=scaler.digest)
        report["stacking_log"] = log
        report["out_of_fold"] = {n: evaluate(y, oof[:, i], cfg.decision_threshold).to_mapping()
                                 for i, n in enumerate(BRANCHES)}

    branches = _fit_branches(bundles, y, cfg, row_ids)
    for m in branches.values():
        m.meta.update(manifest_version=manifest.version, scaler_digest=scaler.digest)
    model = FrameworkModel(cfg, branches, layer2, scaler, manifest.version, report, ablation)
    P = _branch_matrix(branches, bundles, cfg)
    report["train"] = evaluate(y, _layer2_proba(model, P), cfg.decision_threshold).to_mapping()
    return model


# -- prediction --------------------------------------------------------------

@dataclass(frozen=True)
class Prediction:
    session_id: str
    verdict: str
    probability: float
    branch_probabilities: Dict[str, float]


def predict_bundles(model: FrameworkModel, bundles: Sequence[TensorBundle]) -> List[Prediction]:
    if not bundles:
        return []
    for b in bundles:
        if b.manifest_version != model.manifest_version:
            raise VersionMismatch(
                f"bundle {b.session_id} built with manifest {b.manifest_version!r}, "
                f"model expects {model.manifest_version!r}")
        b.validate(model.branches["ratio"].params.get("n_features"))
    if model.ablation is not None:
        bundles = [ablate_bundle(b, model.ablation) for b in bundles]
    P = _branch_matrix(model.branches, bundles, model.config)
    probs = _layer2_proba(model, P)
    thr = model.config.decision_threshold
    return [Prediction(b.session_id, "malicious" if p >= thr else "benign", float(p),
                       {n: float(P[i, j]) for j, n in enumerate(BRANCHES)})
            for i, (b, p) in enumerate(zip(bundles, probs))]


def predict_session(model: FrameworkModel, bundle: TensorBundle) -> Tuple[str, float, Dict[str, float]]:
    p = predict_bundles(model, [bundle])[0]
    return p.verdict, p.probability, p.branch_probabilities


# -- single-file container ----------------------------------------------------

FRAMEWORK_MAGIC = b"ENCFRAME"
FRAMEWORK_VERSION = 1


def dumps_framework(model: FrameworkModel) -> bytes:
    parts = {f"branch_{n}": dumps_model(model.branches[n]) for n in BRANCHES}
    if model.layer2 is not None:
        parts["layer2"] = dumps_model(model.layer2)
    if model.ablation is not None:
        for k, v in sorted(model.ablation.items()):
            parts[f"ablation_{k}"] = np.ascontiguousarray(v, dtype="<f8").tobytes()
    table, offset = [], 0
    for name in sorted(parts):
        table.append({"name": name, "offset": offset, "nbytes": len(parts[name])})
        offset += len(parts[name])
    header = json.dumps({
        "config": model.config.to_mapping(),
        "manifest_version": model.manifest_version,
        "scaler": model.scaler.to_mapping(),
        "report": model.report,
        "parts": table,
    }, sort_keys=True).encode()
    body = (FRAMEWORK_MAGIC + struct.pack("<HI", FRAMEWORK_VERSION, len(header)) + header
            + b"".join(parts[n] for n in sorted(parts)))
    return body + hashlib.sha256(body).digest()


def loads_framework(data: bytes) -> FrameworkModel:
    if len(data) < 46 or data[:8] != FRAMEWORK_MAGIC:
        raise ModelError("not a framework model file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise DigestMismatch("framework file checksum mismatch (corrupt or edited)")
    version, hlen = struct.unpack_from("<HI", body, 8)
    if version != FRAMEWORK_VERSION:
        raise ModelError(f"unsupported framework format version {version}")
    header = json.loads(body[14:14 + hlen])
    base = 14 + hlen
    parts = {e["name"]: body[base + e["offset"]:base + e["offset"] + e["nbytes"]] for e in header["parts"]}
    scaler = Scaler.from_mapping(header["scaler"])
    mv = header["manifest_version"]
    load = lambda raw: loads_model(raw, expected_scaler_digest=scaler.digest, expected_manifest_version=mv)
    branches = {n: load(parts[f"branch_{n}"]) for n in BRANCHES}
    layer2 = load(parts["layer2"]) if "layer2" in parts else None
    ablation = None
    if "ablation_time" in parts:
        ablation = {k: np.frombuffer(parts[f"ablation_{k}"], dtype="<f8").astype(np.float64)
                    for k in ("image", "ratio", "time")}
    return FrameworkModel(FrameworkConfig.from_mapping(header["config"]), branches, layer2, scaler, mv,
                          header["report"], ablation)


def save_framework(model: FrameworkModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_framework(model))


def load_framework(path) -> FrameworkModel:
    with open(path, "rb") as fh:
        return loads_framework(fh.read())
