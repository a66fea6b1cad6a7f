"""Bidirectional session assembly over canonical 5-tuples."""
from __future__ import annotations

from collections import Counter
from dataclasses import replace
from typing import Iterable, List, Optional

from .decode import decode_packet
from .packet import Direction, FlowKey, ParsedPacket, Session
from .pcap import parse_pcap

DEFAULT_IDLE_TIMEOUT = 300.0


def assemble_sessions(packets: Iterable[ParsedPacket], idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
                      capture: str = "") -> List[Session]:
    """Group packets into sessions.

    A gap strictly greater than ``idle_timeout`` seconds between consecutive
    packets of one key starts a new session. FIN/RST do not split sessions.
    """
    if idle_timeout <= 0:
        raise ValueError("idle_timeout must be positive")
    limit = round(idle_timeout * 1e9)
    ordered = sorted(enumerate(packets), key=lambda ip: (ip[1].timestamp, ip[0]))

    open_flows = {}
    finished = []
    for order, pkt in ordered:
        key = FlowKey.for_packet(pkt)
        current = open_flows.get(key)
        if current is not None and pkt.timestamp - current[-1][1].timestamp > limit:
            finished.append(current)
            current = None
        if current is None:
            current = []
            open_flows[key] = current
        current.append((order, pkt))
    finished.extend(open_flows.values())

    finished.sort(key=lambda flow: (flow[0][1].timestamp, flow[0][0]))
    sessions = []
    for idx, flow in enumerate(finished):
        first = flow[0][1]
        initiator = first.source
        pkts = tuple(
            replace(p, direction=Direction.FORWARD if p.source == initiator else Direction.BACKWARD)
            for _, p in flow
        )
        sessions.append(Session(FlowKey.for_packet(first), initiator, pkts, capture=capture, index=idx))
    return sessions


def sessions_from_pcap(data: bytes, idle_timeout: float = DEFAULT_IDLE_TIMEOUT, capture: str = "",
                       stats: Optional[Counter] = None) -> List[Session]:
    decoded = []
    for rec in parse_pcap(data):
        pkt = decode_packet(rec.raw, rec.link_type, rec.timestamp, stats)
        if pkt is not None:
            decoded.append(pkt)
    return assemble_sessions(decoded, idle_timeout, capture)
