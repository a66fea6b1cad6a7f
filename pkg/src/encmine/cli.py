"""Command-line pipeline: synth -> extract -> label -> tensorize/train -> predict/evaluate/ablate.

Every output file carries a provenance stamp (tool version, manifest version,
config digest, feature digest). Errors are reported as one JSON object on
stderr; exit codes are 0 ok, 2 usage, 3 data error, 4 model error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import TOOL_NAME, __version__
from .capture.synth import synth_pcap
from .corpus import CORPORA, labelled_corpus, mixed_corpus, split_by_label
from .encfilter import EncPolicy
from .errors import DataError, DigestMismatch, EncMineError, ModelError
from .evaluation import MetricsReport, evaluate, format_table, report_json
from .features.engine import FeatureRecord
from .features.io import dumps_csv, dumps_jsonl, loads_jsonl
from .features.manifest import FeatureManifest, load_manifest
from .framework import (FrameworkConfig, FrameworkModel, dumps_framework, load_framework,
                        predict_bundles, train_framework)
from .labels import LabelManifest, apply_labels, load_label_manifest
from .pipeline import extract_records
from .tensorize import Scaler, dumps_bundles, fit_scaler, loads_bundles, tensorize

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 2, 3, 4
CONFIG_SECTIONS = ("policy", "manifest", "branches", "layer2", "seed")


class UsageError(Exception):
    pass


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _digest(obj) -> str:
    return hashlib.sha256(_canonical(obj)).hexdigest()


# -- configuration -------------------------------------------------------------

class Settings:
    """Effective configuration after flags have overridden the config file."""

    def __init__(self, raw: dict, args: argparse.Namespace):
        unknown = set(raw) - set(CONFIG_SECTIONS)
        if unknown:
            raise UsageError(f"unknown config sections {sorted(unknown)}")
        try:
            self.policy = EncPolicy.from_mapping(raw.get("policy"))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"[policy]: {exc}") from exc
        mcfg = raw.get("manifest") or {}
        self.manifest = load_manifest(mcfg.get("path"))
        self.idle_timeout = float(mcfg.get("idle_timeout", 300.0))
        if mcfg.get("version") not in (None, self.manifest.version):
            raise UsageError(f"config pins manifest {mcfg['version']!r}, loaded {self.manifest.version!r}")
        l2 = dict(raw.get("layer2") or {})
        seed = raw.get("seed", 0)
        if getattr(args, "seed", None) is not None:
            seed = args.seed
        for flag, key in (("layer2", "kind"), ("folds", "stacking_folds"), ("threshold", "decision_threshold")):
            if getattr(args, flag, None) is not None:
                l2[key] = getattr(args, flag)
        fw = {"branches": raw.get("branches") or {}, "seed": int(seed)}
        for key, target in (("kind", "layer2"), ("params", "layer2_params"),
                            ("stacking_folds", "stacking_folds"), ("decision_threshold", "decision_threshold")):
            if key in l2:
                fw[target] = l2.pop(key)
        if l2:
            raise UsageError(f"unknown [layer2] keys {sorted(l2)}")
        if getattr(args, "ablate_enc", False):
            fw["ablate_enc"] = True
        try:
            self.framework = FrameworkConfig.from_mapping(fw)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"framework config: {exc}") from exc
        self.seed = int(seed)

    @property
    def feature_config(self) -> dict:
        return {"policy": self.policy.to_mapping(), "manifest_version": self.manifest.version,
                "manifest_digest": hashlib.sha256(self.manifest.dumps().encode()).hexdigest(),
                "idle_timeout": self.idle_timeout}

    @property
    def feature_digest(self) -> str:
        return _digest(self.feature_config)

    @property
    def config_digest(self) -> str:
        return _digest({"features": self.feature_config, "framework": self.framework.to_mapping()})

    def provenance(self, **extra) -> dict:
        return {"tool": TOOL_NAME, "tool_version": __version__, "manifest_version": self.manifest.version,
                "config_digest": self.config_digest, "feature_digest": self.feature_digest, **extra}


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise UsageError(f"config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"config {path} must be a mapping of sections")
    return raw


# -- file helpers -----------------------------------------------------------------

def _write(path: str, data) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(path, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": "\n"})) as fh:
        fh.write(data)


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc


def _read_records(paths: Sequence[str]) -> Tuple[List[FeatureRecord], dict]:
    records, provenance = [], None
    for p in paths:
        recs, prov = loads_jsonl(_read_bytes(p).decode("utf-8"))
        prov = prov or {}
        if provenance is not None and prov.get("feature_digest") != provenance.get("feature_digest"):
            raise DigestMismatch(f"{p} was extracted with a different feature configuration")
        provenance = prov if provenance is None else provenance
        records.extend(recs)
    return records, provenance or {}


def _check_features(prov: dict, settings: Settings, what: str) -> None:
    if prov.get("manifest_version") not in (None, settings.manifest.version):
        raise DigestMismatch(f"{what} built with manifest {prov.get('manifest_version')!r}")


def _check_model_matches(model: FrameworkModel, prov: dict, what: str) -> None:
    want = model.report.get("feature_digest")
    have = prov.get("feature_digest")
    if want is None or have != want:
        raise DigestMismatch(f"{what} feature digest {have!r} does not match the model's {want!r}")


def _labelled(records: Sequence[FeatureRecord]) -> List[FeatureRecord]:
    return [r for r in records if r.label in ("benign", "malicious")]


# -- commands -----------------------------------------------------------------------

def cmd_synth(args, s: Settings) -> None:
    out = Path(args.out)
    if args.corpus == "mixed":
        groups = {"mixed": mixed_corpus(args.sessions, s.seed)}
        labels = {"captures": {"mixed": {"default": "benign"}}}
    else:
        groups = split_by_label(labelled_corpus(args.corpus, args.sessions, s.seed))
        labels = {"captures": {name: {"default": name} for name in sorted(groups)}}
    for name, specs in sorted(groups.items()):
        _write(str(out / f"{name}.pcap"), synth_pcap(specs, args.link_type))
    _write(str(out / "labels.yaml"), yaml.safe_dump(labels, sort_keys=True))


def cmd_extract(args, s: Settings) -> None:
    records, stats, inputs = [], Counter(), {}
    for path in args.inputs:
        data = _read_bytes(path)
        capture = Path(path).stem
        inputs[capture] = hashlib.sha256(data).hexdigest()
        records.extend(extract_records(data, capture, s.policy, s.manifest, stats, s.idle_timeout))
    prov = s.provenance(inputs=inputs, stats=dict(sorted(stats.items())))
    _write(args.out, dumps_jsonl(records, prov))
    if args.csv:
        _write(args.csv, dumps_csv(records, s.manifest, prov))


def cmd_label(args, s: Settings) -> None:
    manifest = load_label_manifest(args.labels)
    records, prov = _read_records(args.inputs)
    _check_features(prov, s, "feature file")
    manifest.check_covers({r.capture for r in records})
    labelled = apply_labels(records, manifest)
    prov = {**prov, "label_digest": _digest(manifest.to_mapping())}
    _write(args.out, dumps_jsonl(labelled, prov))


def cmd_tensorize(args, s: Settings) -> None:
    records, prov = _read_records(args.inputs)
    _check_features(prov, s, "feature file")
    if args.model:
        scaler = load_framework(args.model).scaler
    elif args.scaler:
        scaler = Scaler.from_mapping(json.loads(_read_bytes(args.scaler)))
    else:
        scaler = fit_scaler(records, s.manifest)
        if args.scaler_out:
            _write(args.scaler_out, scaler.dumps() + "\n")
    bundles = [tensorize(r, scaler, s.manifest) for r in records]
    _write(args.out, dumps_bundles(bundles, {**prov, "scaler_digest": scaler.digest}))


def cmd_train(args, s: Settings) -> None:
    records, prov = _read_records(args.inputs)
    _check_features(prov, s, "feature file")
    model = train_framework(_labelled(records), s.framework, s.manifest)
    model.report.update(feature_digest=prov.get("feature_digest"), provenance=s.provenance())
    _write(args.out, dumps_framework(model))
    if args.report:
        _write(args.report, json.dumps(model.report, sort_keys=True, indent=2) + "\n")


def _model_inputs(model: FrameworkModel, paths: Sequence[str], s: Settings):
    """Bundles plus labels from either feature files or tensor bundle files."""
    bundles, labels, provs = [], [], []
    for p in paths:
        data = _read_bytes(p)
        if data[:8] == b"ENCTNSR1":
            bs, prov = loads_bundles(data)
            if prov.get("scaler_digest") != model.scaler.digest:
                raise DigestMismatch(f"{p} was scaled with a different scaler than the model's")
            labels.extend({0: "benign", 1: "malicious"}.get(b.label, "unlabeled") for b in bs)
        else:
            recs, prov = loads_jsonl(data.decode("utf-8"))
            prov = prov or {}
            bs = [tensorize(r, model.scaler, s.manifest) for r in recs]
            labels.extend(r.label for r in recs)
        _check_model_matches(model, prov, p)
        bundles.extend(bs)
        provs.append(prov)
    return bundles, labels


def cmd_predict(args, s: Settings) -> None:
    model = load_framework(args.model)
    bundles, _ = _model_inputs(model, args.inputs, s)
    preds = predict_bundles(model, bundles)
    lines = [json.dumps({"_provenance": s.provenance(model_digest=_file_digest(args.model))}, sort_keys=True)]
    for p in preds:
        lines.append(json.dumps({"session_id": p.session_id, "verdict": p.verdict,
                                 "probability": p.probability, "branches": p.branch_probabilities},
                                sort_keys=True))
    _write(args.out, "\n".join(lines) + "\n")


def _file_digest(path: str) -> str:
    return hashlib.sha256(_read_bytes(path)).hexdigest()


def _evaluate_model(model: FrameworkModel, bundles, labels) -> Tuple[MetricsReport, dict]:
    keep = [i for i, l in enumerate(labels) if l in ("benign", "malicious")]
    if not keep:
        raise DataError("no labelled sessions to evaluate")
    preds = predict_bundles(model, [bundles[i] for i in keep])
    y = [labels[i] for i in keep]
    thr = model.config.decision_threshold
    rows = {"framework": evaluate(y, [p.probability for p in preds], thr)}
    for name in ("time", "image", "ratio"):
        rows[f"branch:{name}"] = evaluate(y, [p.branch_probabilities[name] for p in preds], thr)
    return rows["framework"], rows


def cmd_evaluate(args, s: Settings) -> None:
    model = load_framework(args.model)
    bundles, labels = _model_inputs(model, args.inputs, s)
    _, rows = _evaluate_model(model, bundles, labels)
    prov = s.provenance(model_digest=_file_digest(args.model))
    _write(args.out, report_json(rows, prov))
    if args.table:
        _write(args.table, format_table(rows))


def _holdout(records: List[FeatureRecord], fraction: float, seed: int):
    records = sorted(records, key=lambda r: r.session_id)
    rng = np.random.default_rng([seed, 0xAB1A7E])
    test = np.zeros(len(records), dtype=bool)
    for cls in ("benign", "malicious"):
        idx = [i for i, r in enumerate(records) if r.label == cls]
        k = int(round(fraction * len(idx)))
        test[np.array(idx, dtype=np.int64)[rng.permutation(len(idx))[:k]]] = True
    return [r for r, t in zip(records, test) if not t], [r for r, t in zip(records, test) if t]


def cmd_ablate(args, s: Settings) -> None:
    """Train with and without Enc-derived columns and compare on held-out sessions."""
    records, prov = _read_records(args.inputs)
    _check_features(prov, s, "feature file")
    records = _labelled(records)
    if args.test:
        test, tprov = _read_records(args.test)
        if tprov.get("feature_digest") != prov.get("feature_digest"):
            raise DigestMismatch("train and test files were extracted with different configurations")
        train, test = records, _labelled(test)
    else:
        train, test = _holdout(records, args.holdout, s.seed)
    layer2s = [args.layer2] if args.layer2 else ["random_forest", "average_ensemble"]
    rows = {}
    for l2 in layer2s:
        for ablate in (False, True):
            cfg = replace(s.framework, layer2=l2, ablate_enc=ablate)
            model = train_framework(train, cfg, s.manifest)
            bundles = [tensorize(r, model.scaler, s.manifest) for r in test]
            report, _ = _evaluate_model(model, bundles, [r.label for r in test])
            rows[f"{l2}:{'without' if ablate else 'with'}_enc"] = report
    _write(args.out, report_json(rows, s.provenance(n_train=len(train), n_test=len(test))))
    if args.table:
        _write(args.table, format_table(rows))


# -- argument parsing ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=TOOL_NAME, description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {__version__}")
    parser.add_argument("--config", help="YAML config with policy/manifest/branches/layer2/seed sections")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, inputs=True):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        p.add_argument("--seed", type=int)
        if inputs:
            p.add_argument("inputs", nargs="+")
        return p

    p = add("synth", cmd_synth, "write a seeded synthetic corpus (pcaps + labels.yaml)", inputs=False)
    p.add_argument("--corpus", choices=sorted(CORPORA) + ["mixed"], default="enc_signal")
    p.add_argument("--sessions", type=int, default=200)
    p.add_argument("--link-type", type=int, choices=(1, 101), default=1)
    p.add_argument("--out", required=True)

    p = add("extract", cmd_extract, "pcap files -> feature records (JSON lines, optional CSV)")
    p.add_argument("--out", required=True)
    p.add_argument("--csv")

    p = add("label", cmd_label, "apply a label manifest to feature records")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)

    p = add("tensorize", cmd_tensorize, "feature records -> tensor bundle file")
    p.add_argument("--out", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--model", help="reuse the scaler embedded in a framework model")
    g.add_argument("--scaler", help="reuse a scaler JSON file")
    p.add_argument("--scaler-out", help="write the fitted scaler here")

    p = add("train", cmd_train, "train the two-layer framework")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--layer2", choices=("random_forest", "average_ensemble"))
    p.add_argument("--folds", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--ablate-enc", action="store_true")

    p = add("predict", cmd_predict, "per-session verdicts with branch probabilities")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "metrics report for labelled sessions")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--table")

    p = add("ablate", cmd_ablate, "with/without Enc feature comparison")
    p.add_argument("--test", nargs="+")
    p.add_argument("--holdout", type=float, default=1 / 3)
    p.add_argument("--layer2", choices=("random_forest", "average_ensemble"))
    p.add_argument("--folds", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--table")
    return parser


def _error(command: Optional[str], exc: BaseException, code: int) -> int:
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code, "command": command}
    sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        settings = Settings(_load_config(args.config), args)
        args.func(args, settings)
    except UsageError as exc:
        return _error(args.command, exc, EXIT_USAGE)
    except ModelError as exc:
        return _error(args.command, exc, EXIT_MODEL)
    except EncMineError as exc:
        return _error(args.command, exc, EXIT_DATA)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        return _error(args.command, exc, EXIT_DATA)
    return EXIT_OK


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
