"""Capture-to-record plumbing shared by the CLI and the tests."""
from __future__ import annotations

from collections import Counter
from typing import Dict, List, Optional, Sequence

from .capture.sessions import DEFAULT_IDLE_TIMEOUT, sessions_from_pcap
from .capture.synth import SessionSpec, synth_pcap
from .encfilter import EncPolicy, filter_encrypted_sessions
from .features.engine import FeatureRecord, build_feature_record
from .features.manifest import FeatureManifest, load_manifest


def extract_records(data: bytes, capture: str, policy: Optional[EncPolicy] = None,
                    manifest: Optional[FeatureManifest] = None, stats: Optional[Counter] = None,
                    idle_timeout: float = DEFAULT_IDLE_TIMEOUT) -> List[FeatureRecord]:
    policy = policy or EncPolicy()
    manifest = manifest or load_manifest()
    sessions = sessions_from_pcap(data, idle_timeout, capture, stats)
    kept = filter_encrypted_sessions(sessions, policy, stats)
    return [build_feature_record(s, policy, manifest) for s in kept]


def label_records_by_client(records: Sequence[FeatureRecord], specs: Sequence[SessionSpec]) -> List[FeatureRecord]:
    """Attach each spec's label to the record whose endpoints include its client IP."""
    from dataclasses import replace

    by_ip: Dict[str, str] = {s.client[0]: s.label for s in specs if s.label}
    out = []
    for r in records:
        labels = {by_ip[ip] for ip in r.endpoints if ip in by_ip}
        out.append(replace(r, label=labels.pop()) if len(labels) == 1 else r)
    return out


def records_from_specs(specs: Sequence[SessionSpec], capture: str = "synthetic",
                       policy: Optional[EncPolicy] = None,
                       manifest: Optional[FeatureManifest] = None) -> List[FeatureRecord]:
    return label_records_by_client(extract_records(synth_pcap(specs), capture, policy, manifest), specs)
