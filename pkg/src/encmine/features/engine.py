"""Per-packet, per-session, aggregate and ratio feature computation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..capture.packet import EncClass, ParsedPacket, Session
from ..encfilter import EncPolicy, EncView, classify_packets, encrypted_view
from ..errors import EmptyEncView, EmptySeries, MissingOperand, NotEncrypted
from .manifest import (CUMSTD_BASES, ENC, SESSION_IP_RATIO, STATS, TIME_BASES, FeatureManifest,
                       load_manifest)

LABELS = ("benign", "malicious", "unlabeled")


@dataclass
class FeatureRecord:
    session_id: str
    label: str
    packet_series: Dict[str, Dict[str, List[float]]]  # scope -> name -> per-packet values
    session_features: Dict[str, float]
    ratio_features: Dict[str, float]
    manifest_version: str
    capture: str = ""
    endpoints: Tuple[str, str] = ("", "")
    degenerate: Tuple[str, ...] = ()
    n_packets: int = 0
    n_enc_packets: int = 0

    def feature_names(self) -> List[str]:
        return list(self.session_features) + list(self.ratio_features)

    def series(self, name: str) -> List[float]:
        scope = "enc" if name.startswith(ENC) else "traditional"
        return self.packet_series[scope][name]


def _seconds(ns: np.ndarray) -> np.ndarray:
    return ns.astype(np.float64) / 1e9


def _cumstd(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    mean = m2 = 0.0
    for i, x in enumerate(v):
        d = x - mean
        mean += d / (i + 1)
        m2 += d * (x - mean)
        out[i] = math.sqrt(max(m2 / (i + 1), 0.0))
    return out


def _scope_columns(packets: Sequence[ParsedPacket], prefix: str,
                   enc_marks: Optional[Sequence[bool]] = None) -> Dict[str, np.ndarray]:
    """Every per-packet column for one packet scope, keyed with ``prefix``."""
    n = len(packets)
    ts = np.array([p.timestamp for p in packets], dtype=np.int64)
    fwd = np.array([p.is_forward for p in packets], dtype=bool)
    total = np.array([p.ip_total_length for p in packets], dtype=np.float64)
    iphl = np.array([p.ip_header_length for p in packets], dtype=np.float64)
    thl = np.array([p.tcp_header_length for p in packets], dtype=np.float64)
    pay = np.array([p.payload_length for p in packets], dtype=np.float64)
    ttl = np.array([p.ttl for p in packets], dtype=np.float64)
    win = np.array([p.tcp_window for p in packets], dtype=np.float64)

    c: Dict[str, np.ndarray] = {}
    iat = np.zeros(n)
    iat[1:] = _seconds(np.diff(ts))
    iat_fwd, iat_bwd = np.zeros(n), np.zeros(n)
    elapsed_fwd, elapsed_bwd = np.zeros(n), np.zeros(n)
    last = {True: None, False: None}
    first = {True: None, False: None}
    for i in range(n):
        d = bool(fwd[i])
        if last[d] is not None:
            (iat_fwd if d else iat_bwd)[i] = (ts[i] - last[d]) / 1e9
        last[d] = ts[i]
        if first[d] is None:
            first[d] = ts[i]
        if first[True] is not None:
            elapsed_fwd[i] = (ts[i] - first[True]) / 1e9
        if first[False] is not None:
            elapsed_bwd[i] = (ts[i] - first[False]) / 1e9
    c["iat"], c["iat_fwd"], c["iat_bwd"] = iat, iat_fwd, iat_bwd
    c["elapsed"] = _seconds(ts - ts[0])
    c["elapsed_fwd"], c["elapsed_bwd"] = elapsed_fwd, elapsed_bwd
    c["ttl"], c["ttl_fwd"], c["ttl_bwd"] = ttl, np.where(fwd, ttl, 0.0), np.where(fwd, 0.0, ttl)

    counts = np.arange(1, n + 1, dtype=np.float64)
    for b in TIME_BASES:
        v = c[b]
        delta = np.zeros(n)
        delta[1:] = np.diff(v)
        c[b + "_delta"] = delta
        c[b + "_cummean"] = np.cumsum(v) / counts
        c[b + "_cummax"] = np.maximum.accumulate(v)
    for b in CUMSTD_BASES:
        c[b + "_cumstd"] = _cumstd(c[b])
    el = c["elapsed"]
    safe = np.where(el > 0, el, 1.0)
    c["pkt_rate"] = np.where(el > 0, counts / safe, 0.0)
    c["fwd_rate"] = np.where(el > 0, np.cumsum(fwd) / safe, 0.0)

    c["ip_total_length"], c["ip_header_length"] = total, iphl
    c["tcp_header_length"], c["payload_length"], c["tcp_window"] = thl, pay, win
    rtp = np.ones(n)
    rtp[1:] = total[1:] / total[:-1]
    c["ratio_to_previous"] = rtp
    c["ip_ratio"] = iphl / total
    c["ip_total_length_fwd"], c["ip_total_length_bwd"] = np.where(fwd, total, 0.0), np.where(fwd, 0.0, total)
    c["payload_length_fwd"], c["payload_length_bwd"] = np.where(fwd, pay, 0.0), np.where(fwd, 0.0, pay)
    c["tcp_segment_length"] = thl + pay
    c["payload_ratio"] = pay / total
    c["ip_total_length_cumsum"] = np.cumsum(total)
    c["payload_length_cumsum"] = np.cumsum(pay)
    c["payload_length_fwd_cumsum"] = np.cumsum(c["payload_length_fwd"])
    c["payload_length_bwd_cumsum"] = np.cumsum(c["payload_length_bwd"])
    c["ip_total_length_cummean"] = np.cumsum(total) / counts
    c["payload_length_cummean"] = np.cumsum(pay) / counts

    if enc_marks is not None:
        since = np.zeros(n)
        last_enc = None
        for i, is_enc in enumerate(enc_marks):
            if is_enc:
                last_enc = ts[i]
            if last_enc is not None:
                since[i] = (ts[i] - last_enc) / 1e9
        c["since_last_enc"] = since
    c["_forward"] = fwd
    c["_ts"] = ts
    return {(prefix + k if not k.startswith("_") else k): v for k, v in c.items()}


def packet_features(view: EncView) -> Dict[str, Dict[str, np.ndarray]]:
    """Per-packet columns for the traditional (all packets) and enc scopes."""
    marks = [p.enc_class is EncClass.ENCRYPTED for p in view.all_packets]
    return {
        "traditional": _scope_columns(view.all_packets, "", marks),
        "enc": _scope_columns(view.enc_packets, ENC) if view.enc_packets else {},
    }


def aggregate_stats(series) -> Dict[str, float]:
    v = np.asarray(series, dtype=np.float64)
    if v.size == 0:
        raise EmptySeries("aggregate_stats needs at least one value")
    mean = float(np.mean(v))
    var = float(np.mean((v - mean) ** 2))
    return {
        "mean": mean,
        "median": float(np.median(v)),
        "max": float(np.max(v)),
        "min": float(np.min(v)),
        "std": math.sqrt(var),
        "var": var,
    }


_ZERO_STATS = dict.fromkeys(STATS, 0.0)


def _duration(ts: np.ndarray) -> float:
    return float(ts[-1] - ts[0]) / 1e9 if ts.size else 0.0


def _session_values(cols: Dict[str, np.ndarray], prefix: str, manifest: FeatureManifest) -> Dict[str, float]:
    p = prefix
    fwd, ts = cols["_forward"], cols["_ts"]
    bwd = ~fwd
    g = lambda name: cols[p + name]  # noqa: E731
    s = lambda arr, mask: float(np.sum(arr[mask])) if mask.any() else 0.0  # noqa: E731
    total_len = g("ip_total_length")
    allm = np.ones_like(fwd)
    values = {
        "flow_duration": _duration(ts),
        "flow_duration_bwd": _duration(ts[bwd]),
        "flow_duration_fwd": _duration(ts[fwd]),
        "total_ttl_fwd": s(g("ttl"), fwd),
        "total_ttl_bwd": s(g("ttl"), bwd),
        "total_window_fwd": s(g("tcp_window"), fwd),
        "total_window_bwd": s(g("tcp_window"), bwd),
        "total_ip_length": s(total_len, allm),
        "total_ttl": s(g("ttl"), allm),
        "total_payload_fwd": s(g("payload_length"), fwd),
        "total_payload_bwd": s(g("payload_length"), bwd),
        "total_ip_header_fwd": s(g("ip_header_length"), fwd),
        "total_ip_header_bwd": s(g("ip_header_length"), bwd),
        "total_tcp_header_fwd": s(g("tcp_header_length"), fwd),
        "total_tcp_header_bwd": s(g("tcp_header_length"), bwd),
        "count_fwd": float(np.count_nonzero(fwd)),
        "count_bwd": float(np.count_nonzero(bwd)),
        "total_tcp_segment_fwd": s(g("tcp_segment_length"), fwd),
        "total_tcp_segment_bwd": s(g("tcp_segment_length"), bwd),
        "total_payload": s(g("payload_length"), allm),
    }
    out = {p + n[len(ENC):]: values[n[len(ENC):]] for n in manifest.enc_session_features}
    out[p + SESSION_IP_RATIO] = float(np.sum(g("ip_header_length")) / np.sum(total_len))
    masks = {"all": allm, "forward": fwd, "backward": bwd}
    for a in manifest.aggregate_specs:
        series = g(a.series)[masks[a.direction]]
        stats = aggregate_stats(series) if series.size else _ZERO_STATS
        for st in manifest.aggregate_stats:
            out[f"{p}{a.name}_{st}"] = stats[st]
    return out


def session_features(view: EncView, manifest: Optional[FeatureManifest] = None,
                     columns: Optional[dict] = None) -> Dict[str, float]:
    """Session-level values over the enc packets and, separately, all packets."""
    if not view.enc_packets:
        raise EmptyEncView(f"session {view.session.session_id} has no encrypted packets")
    manifest = manifest or load_manifest()
    cols = columns or packet_features(view)
    out = _session_values(cols["traditional"], "", manifest)
    out.update(_session_values(cols["enc"], ENC, manifest))
    return out


def ratio_features(traditional: Dict[str, float], enc: Dict[str, float], manifest: FeatureManifest,
                   degenerate: Optional[list] = None) -> Dict[str, float]:
    """Enc-over-traditional ratios; zero denominators give 1.0 (0/0) or a flagged 0.0."""
    out = {}
    flip = manifest.ratio_orientation == "traditional/enc"
    for trad_name, enc_name in manifest.ratio_specs:
        if trad_name not in traditional or enc_name not in enc:
            raise MissingOperand(f"ratio operand missing: {trad_name} / {enc_name}")
        num, den = enc[enc_name], traditional[trad_name]
        if flip:
            num, den = den, num
        name = "ratio_" + trad_name
        if den == 0:
            out[name] = 1.0 if num == 0 else 0.0
            if num != 0 and degenerate is not None:
                degenerate.append(name)
        else:
            out[name] = num / den
    return out


def build_feature_record(session: Session, policy: Optional[EncPolicy] = None,
                         manifest: Optional[FeatureManifest] = None, label: str = "unlabeled") -> FeatureRecord:
    manifest = manifest or load_manifest()
    if not session.is_encrypted:
        raise NotEncrypted(f"session {session.session_id} is not an encrypted session")
    if any(p.enc_class is EncClass.AMBIGUOUS for p in session.packets):
        session = classify_packets(session, policy or EncPolicy())
    view = encrypted_view(session)
    cols = packet_features(view)
    sess = session_features(view, manifest, cols)
    degenerate: list = []
    ratios = ratio_features(sess, sess, manifest, degenerate)
    series = {
        "traditional": {n: cols["traditional"][n].tolist() for n in manifest.packet_series_names(False)},
        "enc": {n: cols["enc"][n].tolist() for n in manifest.packet_series_names(True)},
    }
    return FeatureRecord(
        session_id=session.session_id,
        label=label,
        packet_series=series,
        session_features={n: sess[n] for n in manifest.session_feature_names},
        ratio_features=ratios,
        manifest_version=manifest.version,
        capture=session.capture,
        endpoints=session.ips,
        degenerate=tuple(degenerate),
        n_packets=len(view.all_packets),
        n_enc_packets=len(view.enc_packets),
    )
