"""Link / network / transport decoding into ParsedPacket.

Malformed or unsupported frames never raise; they return ``None`` (a skip)
and bump a reason counter when one is supplied.
"""
from __future__ import annotations

import ipaddress
import struct
from collections import Counter
from typing import Optional

from .packet import ParsedPacket
from .pcap import LINKTYPE_ETHERNET, LINKTYPE_IPV4, LINKTYPE_IPV6, LINKTYPE_RAW

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
ETH_VLAN = (0x8100, 0x88A8)

PROTO_TCP = 6
PROTO_UDP = 17
_TRANSPORT = {PROTO_TCP: "TCP", PROTO_UDP: "UDP"}

# IPv6 extension headers we walk past
_V6_EXT = {0, 43, 60}
_V6_FRAGMENT = 44
_V6_AH = 51


def _skip(stats: Optional[Counter], reason: str) -> None:
    if stats is not None:
        stats[reason] += 1
    return None


def decode_packet(raw: bytes, link_type: int, timestamp: int = 0,
                  stats: Optional[Counter] = None) -> Optional[ParsedPacket]:
    try:
        return _decode(raw, link_type, timestamp, stats)
    except (struct.error, IndexError, ValueError):
        return _skip(stats, "malformed")


def _decode(raw, link_type, timestamp, stats):
    if link_type == LINKTYPE_ETHERNET:
        if len(raw) < 14:
            return _skip(stats, "malformed")
        ethertype = struct.unpack_from("!H", raw, 12)[0]
        offset = 14
        if ethertype in ETH_VLAN:
            if len(raw) < 18:
                return _skip(stats, "malformed")
            ethertype = struct.unpack_from("!H", raw, 16)[0]
            offset = 18
            if ethertype in ETH_VLAN:
                return _skip(stats, "nested_vlan")
        if ethertype == ETH_IPV4:
            return _ipv4(raw, offset, timestamp, stats)
        if ethertype == ETH_IPV6:
            return _ipv6(raw, offset, timestamp, stats)
        return _skip(stats, "non_ip")
    if link_type in (LINKTYPE_RAW, LINKTYPE_IPV4, LINKTYPE_IPV6):
        if not raw:
            return _skip(stats, "malformed")
        version = raw[0] >> 4
        if version == 4:
            return _ipv4(raw, 0, timestamp, stats)
        if version == 6:
            return _ipv6(raw, 0, timestamp, stats)
        return _skip(stats, "non_ip")
    return _skip(stats, "unsupported_link")


def _ipv4(raw, off, timestamp, stats):
    if len(raw) < off + 20 or raw[off] >> 4 != 4:
        return _skip(stats, "malformed")
    ihl = (raw[off] & 0x0F) * 4
    total, frag, ttl, proto = struct.unpack_from("!H2xHBB", raw, off + 2)
    if ihl < 20 or total < ihl or len(raw) < off + ihl:
        return _skip(stats, "malformed")
    if proto not in _TRANSPORT:
        return _skip(stats, "non_tcp_udp")
    more_fragments = bool(frag & 0x2000)
    if frag & 0x1FFF:
        return _skip(stats, "fragment")
    src = str(ipaddress.IPv4Address(raw[off + 12:off + 16]))
    dst = str(ipaddress.IPv4Address(raw[off + 16:off + 20]))
    return _transport(raw, off + ihl, proto, src, dst, total, ihl, ttl,
                      more_fragments, timestamp, stats)


def _ipv6(raw, off, timestamp, stats):
    if len(raw) < off + 40 or raw[off] >> 4 != 6:
        return _skip(stats, "malformed")
    plen, nxt, hop = struct.unpack_from("!HBB", raw, off + 4)
    src = str(ipaddress.IPv6Address(raw[off + 8:off + 24]))
    dst = str(ipaddress.IPv6Address(raw[off + 24:off + 40]))
    pos = off + 40
    more_fragments = False
    while nxt not in _TRANSPORT:
        if len(raw) < pos + 8:
            return _skip(stats, "malformed")
        if nxt in _V6_EXT:
            ext_len = (raw[pos + 1] + 1) * 8
        elif nxt == _V6_FRAGMENT:
            frag = struct.unpack_from("!H", raw, pos + 2)[0]
            if frag & 0xFFF8:
                return _skip(stats, "fragment")
            more_fragments = bool(frag & 1)
            ext_len = 8
        elif nxt == _V6_AH:
            ext_len = (raw[pos + 1] + 2) * 4
        else:
            return _skip(stats, "non_tcp_udp")
        nxt = raw[pos]
        pos += ext_len
    header_len = pos - off
    total = 40 + plen
    if total < header_len:
        return _skip(stats, "malformed")
    return _transport(raw, pos, nxt, src, dst, total, header_len, hop,
                      more_fragments, timestamp, stats)


def _transport(raw, pos, proto, src, dst, total, ip_hlen, ttl, fragmented, timestamp, stats):
    ip_start = pos - ip_hlen
    if proto == PROTO_TCP:
        if len(raw) < pos + 20:
            return _skip(stats, "malformed")
        sport, dport = struct.unpack_from("!HH", raw, pos)
        thl = (raw[pos + 12] >> 4) * 4
        flags = raw[pos + 13]
        window = struct.unpack_from("!H", raw, pos + 14)[0]
        if thl < 20:
            return _skip(stats, "malformed")
        transport_hlen = thl
    else:
        if len(raw) < pos + 8:
            return _skip(stats, "malformed")
        sport, dport = struct.unpack_from("!HH", raw, pos)
        thl, flags, window = 0, 0, 0
        transport_hlen = 8
    data_start = pos + transport_hlen
    ip_end = ip_start + total
    if fragmented:
        payload = bytes(raw[data_start:ip_end])
        payload_length = len(payload)
    else:
        payload_length = total - ip_hlen - transport_hlen
        if payload_length < 0:
            return _skip(stats, "malformed")
        payload = bytes(raw[data_start:data_start + payload_length])
    if stats is not None:
        stats["decoded"] += 1
    return ParsedPacket(
        timestamp=timestamp, src=src, dst=dst, sport=sport, dport=dport,
        transport=_TRANSPORT[proto], ip_total_length=total, ip_header_length=ip_hlen,
        ttl=ttl, tcp_header_length=thl, tcp_window=window,
        payload_length=payload_length, payload=payload, tcp_flags=flags,
    )
