"""Decoded packet, flow key and session records."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


class EncClass(str, Enum):
    ENCRYPTED = "encrypted"
    PLAINTEXT = "plaintext"
    AMBIGUOUS = "ambiguous"


Endpoint = Tuple[str, int]


@dataclass(frozen=True)
class ParsedPacket:
    """One decoded IP/TCP or IP/UDP packet.

    ``timestamp`` is integer nanoseconds since the epoch. ``direction`` is
    ``None`` until the packet has been placed in a session.
    """

    timestamp: int
    src: str
    dst: str
    sport: int
    dport: int
    transport: str  # "TCP" | "UDP"
    ip_total_length: int
    ip_header_length: int
    ttl: int
    tcp_header_length: int
    tcp_window: int
    payload_length: int
    payload: bytes = b""
    tcp_flags: int = 0
    direction: Optional[Direction] = None
    enc_class: EncClass = EncClass.AMBIGUOUS

    @property
    def source(self) -> Endpoint:
        return (self.src, self.sport)

    @property
    def destination(self) -> Endpoint:
        return (self.dst, self.dport)

    @property
    def seconds(self) -> float:
        return self.timestamp / 1e9

    @property
    def is_forward(self) -> bool:
        return self.direction is Direction.FORWARD


@dataclass(frozen=True, order=True)
class FlowKey:
    protocol: str
    endpoint_a: Endpoint
    endpoint_b: Endpoint

    @classmethod
    def of(cls, protocol: str, src: Endpoint, dst: Endpoint) -> "FlowKey":
        a, b = (src, dst) if src <= dst else (dst, src)
        return cls(protocol, a, b)

    @classmethod
    def for_packet(cls, pkt: ParsedPacket) -> "FlowKey":
        return cls.of(pkt.transport, pkt.source, pkt.destination)

    def __str__(self) -> str:
        (ia, pa), (ib, pb) = self.endpoint_a, self.endpoint_b
        return f"{self.protocol} {ia}:{pa}<->{ib}:{pb}"


@dataclass(frozen=True)
class Session:
    key: FlowKey
    initiator: Endpoint
    packets: Tuple[ParsedPacket, ...]
    is_encrypted: bool = False
    capture: str = ""
    index: int = 0

    def __post_init__(self):
        if not self.packets:
            raise ValueError("a session holds at least one packet")

    @property
    def session_id(self) -> str:
        return f"{self.capture}#{self.index}" if self.capture else f"#{self.index}"

    @property
    def responder(self) -> Endpoint:
        a, b = self.key.endpoint_a, self.key.endpoint_b
        return b if self.initiator == a else a

    @property
    def ips(self) -> Tuple[str, str]:
        return (self.key.endpoint_a[0], self.key.endpoint_b[0])

    def forward(self) -> Tuple[ParsedPacket, ...]:
        return tuple(p for p in self.packets if p.is_forward)

    def backward(self) -> Tuple[ParsedPacket, ...]:
        return tuple(p for p in self.packets if not p.is_forward)
