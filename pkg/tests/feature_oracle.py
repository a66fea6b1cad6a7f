"""Brute-force feature recomputation straight from a SessionSpec.

Shares no code with the engine: packet fields come from the spec (not the
decoded capture), statistics use two-pass loops, and every column is rebuilt
element by element.
"""
import math

IPV4_HEADER = 20


def spec_packets(spec):
    """(t_ns, forward, ttl, window, ip_hl, tcp_hl, payload, total, encrypted) per packet."""
    out = []
    for p, t_us in zip(spec.packets, spec.timestamps_us()):
        pay = len(p.payload_bytes())
        thl = 20 + p.tcp_options
        out.append(dict(t=t_us * 1000, fwd=p.direction == "forward", ttl=p.ttl, win=p.window,
                        iphl=IPV4_HEADER, thl=thl, pay=pay, total=IPV4_HEADER + thl + pay,
                        enc=p.annotation == "encrypted"))
    return out


def _mean(v):
    return sum(v) / len(v)


def _pstd(v):
    m = _mean(v)
    return math.sqrt(sum((x - m) ** 2 for x in v) / len(v))


def _median(v):
    s = sorted(v)
    n = len(s)
    return s[n // 2] if n % 2 else (s[n // 2 - 1] + s[n // 2]) / 2


def _transforms(name, v, out):
    out[name] = list(v)
    out[name + "_delta"] = [0.0] + [v[i] - v[i - 1] for i in range(1, len(v))]
    out[name + "_cummean"] = [_mean(v[:i + 1]) for i in range(len(v))]
    out[name + "_cummax"] = [max(v[:i + 1]) for i in range(len(v))]


def scope_columns(pk, with_since_enc=False):
    n = len(pk)
    sec = lambda a, b: (a - b) / 1e9  # noqa: E731
    col = {}
    iat = [0.0] + [sec(pk[i]["t"], pk[i - 1]["t"]) for i in range(1, n)]
    iat_dir = {True: [], False: []}
    el_dir = {True: [], False: []}
    for i in range(n):
        for d in (True, False):
            prev = [j for j in range(i) if pk[j]["fwd"] == d]
            iat_dir[d].append(sec(pk[i]["t"], pk[prev[-1]]["t"]) if pk[i]["fwd"] == d and prev else 0.0)
            firsts = [j for j in range(i + 1) if pk[j]["fwd"] == d]
            el_dir[d].append(sec(pk[i]["t"], pk[firsts[0]]["t"]) if firsts else 0.0)
    elapsed = [sec(p["t"], pk[0]["t"]) for p in pk]
    ttl = [float(p["ttl"]) for p in pk]
    bases = {
        "iat": iat, "iat_fwd": iat_dir[True], "iat_bwd": iat_dir[False],
        "elapsed": elapsed, "elapsed_fwd": el_dir[True], "elapsed_bwd": el_dir[False],
        "ttl": ttl, "ttl_fwd": [t if p["fwd"] else 0.0 for t, p in zip(ttl, pk)],
        "ttl_bwd": [0.0 if p["fwd"] else t for t, p in zip(ttl, pk)],
    }
    for name, v in bases.items():
        _transforms(name, v, col)
    for name in ("iat", "iat_fwd", "iat_bwd", "ttl"):
        col[name + "_cumstd"] = [_pstd(bases[name][:i + 1]) for i in range(n)]
    col["pkt_rate"] = [(i + 1) / elapsed[i] if elapsed[i] > 0 else 0.0 for i in range(n)]
    col["fwd_rate"] = [sum(p["fwd"] for p in pk[:i + 1]) / elapsed[i] if elapsed[i] > 0 else 0.0
                       for i in range(n)]

    total = [float(p["total"]) for p in pk]
    pay = [float(p["pay"]) for p in pk]
    col["ip_total_length"] = total
    col["ip_header_length"] = [float(p["iphl"]) for p in pk]
    col["tcp_header_length"] = [float(p["thl"]) for p in pk]
    col["payload_length"] = pay
    col["tcp_window"] = [float(p["win"]) for p in pk]
    col["ratio_to_previous"] = [1.0] + [total[i] / total[i - 1] for i in range(1, n)]
    col["ip_ratio"] = [p["iphl"] / p["total"] for p in pk]
    col["ip_total_length_fwd"] = [t if p["fwd"] else 0.0 for t, p in zip(total, pk)]
    col["ip_total_length_bwd"] = [0.0 if p["fwd"] else t for t, p in zip(total, pk)]
    col["payload_length_fwd"] = [x if p["fwd"] else 0.0 for x, p in zip(pay, pk)]
    col["payload_length_bwd"] = [0.0 if p["fwd"] else x for x, p in zip(pay, pk)]
    col["tcp_segment_length"] = [float(p["thl"] + p["pay"]) for p in pk]
    col["payload_ratio"] = [p["pay"] / p["total"] for p in pk]
    for name in ("ip_total_length", "payload_length", "payload_length_fwd", "payload_length_bwd"):
        col[name + "_cumsum"] = [sum(col[name][:i + 1]) for i in range(n)]
    for name in ("ip_total_length", "payload_length"):
        col[name + "_cummean"] = [_mean(col[name][:i + 1]) for i in range(n)]
    if with_since_enc:
        since = []
        for i in range(n):
            prior = [j for j in range(i + 1) if pk[j]["enc"]]
            since.append(sec(pk[i]["t"], pk[prior[-1]]["t"]) if prior else 0.0)
        col["since_last_enc"] = since
    return col


GROUPS = [
    ("pkt_len_fwd", "total", True), ("iat_fwd", "iat_fwd", True), ("iat_bwd", "iat_bwd", False),
    ("ttl_fwd", "ttl", True), ("ttl_bwd", "ttl", False), ("window_fwd", "win", True),
    ("window_bwd", "win", False), ("pkt_len", "total", None), ("pkt_len_bwd", "total", False),
]


def session_values(pk):
    fw = [p for p in pk if p["fwd"]]
    bw = [p for p in pk if not p["fwd"]]
    dur = lambda g: (g[-1]["t"] - g[0]["t"]) / 1e9 if g else 0.0  # noqa: E731
    tot = lambda g, k: float(sum(p[k] for p in g))  # noqa: E731
    v = {
        "flow_duration": dur(pk), "flow_duration_bwd": dur(bw), "flow_duration_fwd": dur(fw),
        "total_ttl_fwd": tot(fw, "ttl"), "total_ttl_bwd": tot(bw, "ttl"),
        "total_window_fwd": tot(fw, "win"), "total_window_bwd": tot(bw, "win"),
        "total_ip_length": tot(pk, "total"), "total_ttl": tot(pk, "ttl"),
        "total_payload_fwd": tot(fw, "pay"), "total_payload_bwd": tot(bw, "pay"),
        "total_ip_header_fwd": tot(fw, "iphl"), "total_ip_header_bwd": tot(bw, "iphl"),
        "total_tcp_header_fwd": tot(fw, "thl"), "total_tcp_header_bwd": tot(bw, "thl"),
        "count_fwd": float(len(fw)), "count_bwd": float(len(bw)),
        "total_tcp_segment_fwd": float(sum(p["thl"] + p["pay"] for p in fw)),
        "total_tcp_segment_bwd": float(sum(p["thl"] + p["pay"] for p in bw)),
        "total_payload": tot(pk, "pay"),
        "ip_ratio": tot(pk, "iphl") / tot(pk, "total"),
    }
    cols = scope_columns(pk)
    iat_by_packet = {"iat_fwd": cols["iat_fwd"], "iat_bwd": cols["iat_bwd"]}
    for name, field, direction in GROUPS:
        idx = [i for i, p in enumerate(pk) if direction is None or p["fwd"] == direction]
        series = [iat_by_packet[field][i] if field in iat_by_packet else float(pk[i][field]) for i in idx]
        if series:
            m = _mean(series)
            var = sum((x - m) ** 2 for x in series) / len(series)
            stats = {"mean": m, "median": _median(series), "max": max(series), "min": min(series),
                     "std": math.sqrt(var), "var": var}
        else:
            stats = dict.fromkeys(("mean", "median", "max", "min", "std", "var"), 0.0)
        for st, x in stats.items():
            v[f"{name}_{st}"] = x
    return v


RATIO_STATS = ("mean", "median", "max", "min", "std")
SESSION_TOTALS = (
    "flow_duration", "flow_duration_bwd", "flow_duration_fwd", "total_ttl_fwd", "total_ttl_bwd",
    "total_window_fwd", "total_window_bwd", "total_ip_length", "total_ttl", "total_payload_fwd",
    "total_payload_bwd", "total_ip_header_fwd", "total_ip_header_bwd", "total_tcp_header_fwd",
    "total_tcp_header_bwd", "count_fwd", "count_bwd", "total_tcp_segment_fwd",
    "total_tcp_segment_bwd", "total_payload",
)


def oracle_features(spec):
    """{'series': {...}, 'session': {...}, 'ratio': {...}} for one encrypted session spec."""
    pk = spec_packets(spec)
    enc = [p for p in pk if p["enc"]]
    series = dict(scope_columns(pk, with_since_enc=True))
    series.update({"enc_" + k: v for k, v in scope_columns(enc).items()})
    trad, encv = session_values(pk), session_values(enc)
    session = dict(trad)
    session.update({"enc_" + k: v for k, v in encv.items()})
    names = list(SESSION_TOTALS) + [f"{g[0]}_{s}" for g in GROUPS for s in RATIO_STATS]
    ratio = {}
    for n in names:
        num, den = encv[n], trad[n]
        ratio["ratio_" + n] = (1.0 if num == 0 else 0.0) if den == 0 else num / den
    return {"series": series, "session": session, "ratio": ratio}
