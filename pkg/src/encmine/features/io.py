"""FeatureRecord export: one-row-per-session CSV and JSON-lines."""
from __future__ import annotations

import csv
import io
import json
from typing import Iterable, List, Optional, Tuple

from ..errors import DataError
from .engine import FeatureRecord
from .manifest import FeatureManifest

META_COLUMNS = ("session_id", "label", "capture", "endpoint_a", "endpoint_b")
PROVENANCE_KEY = "_provenance"


def record_to_dict(r: FeatureRecord) -> dict:
    return {
        "session_id": r.session_id,
        "label": r.label,
        "capture": r.capture,
        "endpoints": list(r.endpoints),
        "manifest_version": r.manifest_version,
        "n_packets": r.n_packets,
        "n_enc_packets": r.n_enc_packets,
        "degenerate": list(r.degenerate),
        "session_features": r.session_features,
        "ratio_features": r.ratio_features,
        "packet_series": r.packet_series,
    }


def record_from_dict(d: dict) -> FeatureRecord:
    return FeatureRecord(
        session_id=d["session_id"],
        label=d.get("label", "unlabeled"),
        packet_series=d["packet_series"],
        session_features=d["session_features"],
        ratio_features=d["ratio_features"],
        manifest_version=d["manifest_version"],
        capture=d.get("capture", ""),
        endpoints=tuple(d.get("endpoints", ("", ""))),
        degenerate=tuple(d.get("degenerate", ())),
        n_packets=d.get("n_packets", 0),
        n_enc_packets=d.get("n_enc_packets", 0),
    )


def dumps_jsonl(records: Iterable[FeatureRecord], provenance: Optional[dict] = None) -> str:
    lines = []
    if provenance is not None:
        lines.append(json.dumps({PROVENANCE_KEY: provenance}, sort_keys=True))
    lines.extend(json.dumps(record_to_dict(r), sort_keys=True) for r in records)
    return "".join(line + "\n" for line in lines)


def loads_jsonl(text: str) -> Tuple[List[FeatureRecord], Optional[dict]]:
    records, provenance = [], None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            if PROVENANCE_KEY in d:
                provenance = d[PROVENANCE_KEY]
                continue
            records.append(record_from_dict(d))
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"feature file line {lineno} is not a feature record: {exc}") from exc
    return records, provenance


def csv_columns(manifest: FeatureManifest) -> List[str]:
    return list(META_COLUMNS) + manifest.session_feature_names + manifest.ratio_names


def dumps_csv(records: Iterable[FeatureRecord], manifest: FeatureManifest,
              provenance: Optional[dict] = None) -> str:
    buf = io.StringIO()
    if provenance is not None:
        buf.write("# " + json.dumps(provenance, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    cols = csv_columns(manifest)
    w.writerow(cols)
    for r in records:
        values = {**r.session_features, **r.ratio_features}
        row = [r.session_id, r.label, r.capture, r.endpoints[0], r.endpoints[1]]
        row += [repr(float(values[c])) for c in cols[len(META_COLUMNS):]]
        w.writerow(row)
    return buf.getvalue()
