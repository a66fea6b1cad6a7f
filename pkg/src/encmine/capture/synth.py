"""Synthetic pcap generation from declarative session specs.

Used as the oracle source for round-trip and feature tests: every field a
spec declares is recoverable from the emitted capture.
"""
from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

from ..errors import SpecInvalid
from .pcap import LINKTYPE_ETHERNET, LINKTYPE_RAW, write_pcap

MAX_PAYLOAD = 65495

TLS_CHANGE_CIPHER_SPEC = 0x14
TLS_ALERT = 0x15
TLS_HANDSHAKE = 0x16
TLS_APPLICATION_DATA = 0x17


@dataclass(frozen=True)
class TlsRecord:
    """Template for one TLS record; the body is deterministic filler unless given."""

    content_type: int
    length: int
    version: int = 0x0303
    body: Optional[bytes] = None

    def encode(self) -> bytes:
        body = self.body if self.body is not None else filler(self.length, self.content_type)
        if len(body) != self.length:
            raise SpecInvalid("TLS record body length mismatch")
        return struct.pack("!BHH", self.content_type, self.version, self.length) + body


Payload = Union[bytes, TlsRecord, Sequence[TlsRecord]]


@dataclass(frozen=True)
class PacketSpec:
    gap_us: int = 0
    direction: str = "forward"
    payload: Payload = b""
    ttl: int = 64
    window: int = 65535
    tcp_options: int = 0
    flags: Optional[int] = None
    annotation: Optional[str] = None  # expected enc class, set by corpus builders

    def payload_bytes(self) -> bytes:
        p = self.payload
        if isinstance(p, TlsRecord):
            return p.encode()
        if isinstance(p, (bytes, bytearray)):
            return bytes(p)
        return b"".join(r.encode() for r in p)


@dataclass(frozen=True)
class SessionSpec:
    client: Tuple[str, int]
    server: Tuple[str, int]
    packets: Tuple[PacketSpec, ...]
    protocol: str = "TCP"
    start_us: int = 1_600_000_000_000_000
    label: Optional[str] = None

    def timestamps_us(self) -> List[int]:
        t, out = self.start_us, []
        for p in self.packets:
            t += p.gap_us
            out.append(t)
        return out


def filler(n: int, salt: int = 0) -> bytes:
    return bytes(((i * 167 + salt * 31 + 89) & 0xFF) for i in range(n))


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    s = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def _validate(spec: SessionSpec) -> None:
    if spec.protocol not in ("TCP", "UDP"):
        raise SpecInvalid(f"protocol {spec.protocol!r}")
    if not spec.packets:
        raise SpecInvalid("session spec without packets")
    if spec.packets[0].direction != "forward":
        raise SpecInvalid("first packet must be forward (it defines the initiator)")
    if spec.start_us < 0:
        raise SpecInvalid("negative start time")
    for p in spec.packets:
        if p.gap_us < 0:
            raise SpecInvalid("negative inter-packet gap")
        if p.direction not in ("forward", "backward"):
            raise SpecInvalid(f"direction {p.direction!r}")
        if not 0 <= p.ttl <= 255 or not 0 <= p.window <= 0xFFFF:
            raise SpecInvalid("ttl/window out of range")
        if p.tcp_options % 4 or not 0 <= p.tcp_options <= 40:
            raise SpecInvalid("tcp_options must be a multiple of 4 up to 40")
        if len(p.payload_bytes()) > MAX_PAYLOAD:
            raise SpecInvalid(f"payload larger than {MAX_PAYLOAD} bytes")


class _Builder:
    def __init__(self, link_type: int):
        self.link_type = link_type
        self.ip_id = 0
        self.seq = {}

    def frame(self, spec: SessionSpec, p: PacketSpec) -> bytes:
        fwd = p.direction == "forward"
        (sip, sport), (dip, dport) = (spec.client, spec.server) if fwd else (spec.server, spec.client)
        payload = p.payload_bytes()
        src, dst = ipaddress.ip_address(sip), ipaddress.ip_address(dip)
        if spec.protocol == "TCP":
            seg = self._tcp(sport, dport, p, payload, fwd, spec)
            proto = 6
        else:
            seg = struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload
            proto = 17
        if src.version == 4:
            pseudo = src.packed + dst.packed + struct.pack("!BBH", 0, proto, len(seg))
            seg = self._with_checksum(seg, pseudo, proto)
            self.ip_id = (self.ip_id + 1) & 0xFFFF
            hdr = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(seg), self.ip_id, 0x4000,
                              p.ttl, proto, 0, src.packed, dst.packed)
            hdr = hdr[:10] + struct.pack("!H", _checksum(hdr)) + hdr[12:]
            ethertype = 0x0800
        else:
            pseudo = src.packed + dst.packed + struct.pack("!IxxxB", len(seg), proto)
            seg = self._with_checksum(seg, pseudo, proto)
            hdr = struct.pack("!IHBB16s16s", 6 << 28, len(seg), proto, p.ttl, src.packed, dst.packed)
            ethertype = 0x86DD
        packet = hdr + seg
        if self.link_type == LINKTYPE_ETHERNET:
            return b"\x02\x00\x00\x00\x00\x02\x02\x00\x00\x00\x00\x01" + struct.pack("!H", ethertype) + packet
        return packet

    def _tcp(self, sport, dport, p, payload, fwd, spec):
        key = (spec.client, spec.server, fwd)
        seq = self.seq.get(key, 1000 if fwd else 5000)
        ack = self.seq.get((spec.client, spec.server, not fwd), 0)
        self.seq[key] = (seq + len(payload)) & 0xFFFFFFFF
        flags = p.flags if p.flags is not None else (0x18 if payload else 0x10)
        thl = 20 + p.tcp_options
        options = b"\x01" * p.tcp_options
        return struct.pack("!HHIIBBHHH", sport, dport, seq, ack, (thl // 4) << 4, flags,
                           p.window, 0, 0) + options + payload

    @staticmethod
    def _with_checksum(seg, pseudo, proto):
        csum = _checksum(pseudo + seg)
        at = 16 if proto == 6 else 6
        if proto == 17 and csum == 0:
            csum = 0xFFFF
        return seg[:at] + struct.pack("!H", csum) + seg[at + 2:]


def synth_frames(specs: Sequence[SessionSpec], link_type: int = LINKTYPE_ETHERNET) -> List[Tuple[bytes, int]]:
    """Frames with nanosecond timestamps, merged across sessions in time order."""
    for s in specs:
        _validate(s)
    builder = _Builder(link_type)
    tagged = []
    for si, s in enumerate(specs):
        for pi, (p, t) in enumerate(zip(s.packets, s.timestamps_us())):
            tagged.append((t, si, pi, s, p))
    tagged.sort(key=lambda x: x[:3])
    return [(builder.frame(s, p), t * 1000) for t, _, _, s, p in tagged]


def synth_pcap(specs: Sequence[SessionSpec], link_type: int = LINKTYPE_ETHERNET) -> bytes:
    if link_type not in (LINKTYPE_ETHERNET, LINKTYPE_RAW):
        raise SpecInvalid(f"unsupported link type {link_type}")
    return write_pcap(synth_frames(specs, link_type), link_type=link_type)
