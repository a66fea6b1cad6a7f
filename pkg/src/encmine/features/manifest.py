"""Versioned feature manifest: the frozen list of every named feature.

The packaged ``manifest_v1.yaml`` is the source of truth at runtime;
:func:`default_manifest` is the recipe it was generated from.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Tuple

import yaml

from ..errors import ManifestMismatch

ENC = "enc_"
TIME_FEATURE_COUNT = 85
PAYLOAD_FEATURE_COUNT = 38
STATS = ("mean", "median", "max", "min", "std", "var")

# per-packet primitives computed for both scopes
TIME_BASES = ("iat", "iat_fwd", "iat_bwd", "elapsed", "elapsed_fwd", "elapsed_bwd",
              "ttl", "ttl_fwd", "ttl_bwd")
TIME_TRANSFORMS = ("", "_delta", "_cummean", "_cummax")
CUMSTD_BASES = ("iat", "iat_fwd", "iat_bwd", "ttl")
TIME_EXTRAS = ("pkt_rate", "fwd_rate")
TRADITIONAL_ONLY = ("since_last_enc",)

PAYLOAD_COLUMNS = (
    "ip_total_length", "ip_header_length", "tcp_header_length", "payload_length", "tcp_window",
    "ratio_to_previous", "ip_ratio", "ip_total_length_fwd", "ip_total_length_bwd",
    "payload_length_fwd", "payload_length_bwd", "tcp_segment_length", "payload_ratio",
    "ip_total_length_cumsum", "payload_length_cumsum", "payload_length_fwd_cumsum",
    "payload_length_bwd_cumsum", "ip_total_length_cummean", "payload_length_cummean",
)

# Table-order session totals; names are the traditional variants
SESSION_FEATURES = (
    "flow_duration", "flow_duration_bwd", "flow_duration_fwd", "total_ttl_fwd", "total_ttl_bwd",
    "total_window_fwd", "total_window_bwd", "total_ip_length", "total_ttl", "total_payload_fwd",
    "total_payload_bwd", "total_ip_header_fwd", "total_ip_header_bwd", "total_tcp_header_fwd",
    "total_tcp_header_bwd", "count_fwd", "count_bwd", "total_tcp_segment_fwd",
    "total_tcp_segment_bwd", "total_payload",
)
SESSION_IP_RATIO = "ip_ratio"

PACKET_LEVEL_ENC = ("enc_iat_fwd", "enc_iat_bwd", "enc_ratio_to_previous", "enc_ip_ratio")

# (group name, per-packet primitive, direction filter)
AGGREGATE_GROUPS = (
    ("pkt_len_fwd", "ip_total_length", "forward"),
    ("iat_fwd", "iat_fwd", "forward"),
    ("iat_bwd", "iat_bwd", "backward"),
    ("ttl_fwd", "ttl", "forward"),
    ("ttl_bwd", "ttl", "backward"),
    ("window_fwd", "tcp_window", "forward"),
    ("window_bwd", "tcp_window", "backward"),
    ("pkt_len", "ip_total_length", "all"),
    ("pkt_len_bwd", "ip_total_length", "backward"),
)
RATIO_STATS = ("mean", "median", "max", "min", "std")


def time_columns(enc: bool) -> List[str]:
    names = [b + t for b in TIME_BASES for t in TIME_TRANSFORMS]
    names += [b + "_cumstd" for b in CUMSTD_BASES]
    names += list(TIME_EXTRAS)
    if enc:
        return [ENC + n for n in names]
    return names + list(TRADITIONAL_ONLY)


def packet_catalog(enc: bool) -> List[str]:
    """Every per-packet column the engine can compute for one scope."""
    seen = dict.fromkeys(time_columns(enc))
    seen.update(dict.fromkeys((ENC if enc else "") + c for c in PAYLOAD_COLUMNS))
    return list(seen)


@dataclass(frozen=True)
class AggregateSpec:
    name: str
    series: str
    direction: str


@dataclass(frozen=True)
class FeatureManifest:
    version: str
    enc_packet_features: Tuple[str, ...]
    enc_session_features: Tuple[str, ...]
    aggregate_specs: Tuple[AggregateSpec, ...]
    aggregate_stats: Tuple[str, ...]
    ratio_specs: Tuple[Tuple[str, str], ...]
    time_feature_list: Tuple[str, ...]
    payload_feature_list: Tuple[str, ...]
    ratio_orientation: str = "enc/traditional"
    expected_ratio_count: Optional[int] = None
    notes: str = ""

    def __post_init__(self):
        self.validate()

    # derived name lists -------------------------------------------------
    def session_names(self, enc: bool) -> List[str]:
        p = ENC if enc else ""
        base = [n[len(ENC):] for n in self.enc_session_features]
        names = [p + n for n in base] + [p + SESSION_IP_RATIO]
        names += [f"{p}{a.name}_{s}" for a in self.aggregate_specs for s in self.aggregate_stats]
        return names

    @property
    def session_feature_names(self) -> List[str]:
        return self.session_names(False) + self.session_names(True)

    @property
    def enc_feature_names(self) -> List[str]:
        """The Enc catalog: packet-level series, session totals and aggregates."""
        aggs = [f"{ENC}{a.name}_{s}" for a in self.aggregate_specs for s in self.aggregate_stats]
        return list(self.enc_packet_features) + list(self.enc_session_features) + aggs

    @property
    def ratio_names(self) -> List[str]:
        return ["ratio_" + trad for trad, _ in self.ratio_specs]

    def packet_series_names(self, enc: bool) -> List[str]:
        wanted = dict.fromkeys(n for n in self.time_feature_list + self.payload_feature_list
                               if n.startswith(ENC) == enc)
        if enc:
            wanted.update(dict.fromkeys(self.enc_packet_features))
        return list(wanted)

    def validate(self) -> None:
        if len(self.time_feature_list) != TIME_FEATURE_COUNT:
            raise ManifestMismatch(f"time_feature_list has {len(self.time_feature_list)} names, need {TIME_FEATURE_COUNT}")
        if len(self.payload_feature_list) != PAYLOAD_FEATURE_COUNT:
            raise ManifestMismatch(f"payload_feature_list has {len(self.payload_feature_list)} names, need {PAYLOAD_FEATURE_COUNT}")
        if self.expected_ratio_count is not None and len(self.ratio_specs) != self.expected_ratio_count:
            raise ManifestMismatch(f"{len(self.ratio_specs)} ratio specs, manifest declares {self.expected_ratio_count}")
        if self.ratio_orientation not in ("enc/traditional", "traditional/enc"):
            raise ManifestMismatch(f"ratio_orientation {self.ratio_orientation!r}")
        for lst in (self.time_feature_list, self.payload_feature_list):
            if len(set(lst)) != len(lst):
                raise ManifestMismatch("duplicate per-packet feature name")
        if set(self.time_feature_list) & set(self.payload_feature_list):
            raise ManifestMismatch("time and payload lists overlap")
        catalog = set(packet_catalog(False)) | set(packet_catalog(True))
        unknown = [n for n in self.time_feature_list + self.payload_feature_list + self.enc_packet_features
                   if n not in catalog]
        if unknown:
            raise ManifestMismatch(f"unknown per-packet features: {unknown[:5]}")
        bad = [n for n in self.enc_session_features if not n.startswith(ENC) or n[len(ENC):] not in SESSION_FEATURES]
        if bad:
            raise ManifestMismatch(f"unknown session features: {bad[:5]}")
        prims = {c for c in packet_catalog(False)}
        for a in self.aggregate_specs:
            if a.series not in prims or a.direction not in ("all", "forward", "backward"):
                raise ManifestMismatch(f"bad aggregate spec {a}")
        if any(s not in STATS for s in self.aggregate_stats):
            raise ManifestMismatch("unknown aggregate statistic")
        sess = set(self.session_names(False))
        for trad, enc in self.ratio_specs:
            if trad not in sess or enc != ENC + trad:
                raise ManifestMismatch(f"bad ratio spec ({trad}, {enc})")

    # serialization -------------------------------------------------------
    def to_mapping(self) -> dict:
        return {
            "version": self.version,
            "notes": self.notes,
            "ratio_orientation": self.ratio_orientation,
            "expected_ratio_count": self.expected_ratio_count,
            "enc_packet_features": list(self.enc_packet_features),
            "enc_session_features": list(self.enc_session_features),
            "aggregate_stats": list(self.aggregate_stats),
            "aggregate_specs": [{"name": a.name, "series": a.series, "direction": a.direction}
                                for a in self.aggregate_specs],
            "ratio_specs": [[t, e] for t, e in self.ratio_specs],
            "time_feature_list": list(self.time_feature_list),
            "payload_feature_list": list(self.payload_feature_list),
        }

    @classmethod
    def from_mapping(cls, m: dict) -> "FeatureManifest":
        try:
            return cls(
                version=str(m["version"]),
                notes=m.get("notes", ""),
                ratio_orientation=m.get("ratio_orientation", "enc/traditional"),
                expected_ratio_count=m.get("expected_ratio_count"),
                enc_packet_features=tuple(m["enc_packet_features"]),
                enc_session_features=tuple(m["enc_session_features"]),
                aggregate_stats=tuple(m["aggregate_stats"]),
                aggregate_specs=tuple(AggregateSpec(**a) for a in m["aggregate_specs"]),
                ratio_specs=tuple((t, e) for t, e in m["ratio_specs"]),
                time_feature_list=tuple(m["time_feature_list"]),
                payload_feature_list=tuple(m["payload_feature_list"]),
            )
        except (KeyError, TypeError) as exc:
            raise ManifestMismatch(f"malformed manifest: {exc}") from exc

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_mapping(), sort_keys=False, width=100)


def default_manifest() -> FeatureManifest:
    aggs = tuple(AggregateSpec(*g) for g in AGGREGATE_GROUPS)
    ratio = [(n, ENC + n) for n in SESSION_FEATURES]
    ratio += [(f"{a.name}_{s}", f"{ENC}{a.name}_{s}") for a in aggs for s in RATIO_STATS]
    return FeatureManifest(
        version="enc-manifest/1",
        notes=("Per-packet lists: traditional block first (over all packets), enc block second "
               "(over encrypted packets). Variance ratios omitted: each equals the squared std ratio."),
        enc_packet_features=PACKET_LEVEL_ENC,
        enc_session_features=tuple(ENC + n for n in SESSION_FEATURES),
        aggregate_specs=aggs,
        aggregate_stats=STATS,
        ratio_specs=tuple(ratio),
        time_feature_list=tuple(time_columns(False) + time_columns(True)),
        payload_feature_list=tuple(list(PAYLOAD_COLUMNS) + [ENC + c for c in PAYLOAD_COLUMNS]),
        expected_ratio_count=65,
    )


def load_manifest(path=None) -> FeatureManifest:
    if path is None:
        text = resources.files(__package__).joinpath("manifest_v1.yaml").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return FeatureManifest.from_mapping(yaml.safe_load(text))
