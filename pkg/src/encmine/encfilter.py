"""Two-step encrypted-traffic filter.

Step 1 drops sessions that carry no ciphertext at all; step 2 exposes only the
encrypted packets of the surviving sessions. Packet classification is
content-based (TLS record headers, SSH binary-packet framing) with a port
fallback for payloads that cannot be parsed.
"""
from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Tuple

from .capture.packet import Direction, EncClass, ParsedPacket, Session
from .errors import NotEncrypted

TLS_CCS, TLS_ALERT, TLS_HANDSHAKE, TLS_APPDATA, TLS_HEARTBEAT = 0x14, 0x15, 0x16, 0x17, 0x18
_TLS_TYPES = {TLS_CCS, TLS_ALERT, TLS_HANDSHAKE, TLS_APPDATA, TLS_HEARTBEAT}
_TLS_MAX_RECORD = (1 << 14) + 2048

SSH_MSG_NEWKEYS = 21
_SSH_MAX_PACKET = 35000


@dataclass(frozen=True)
class EncPolicy:
    tls_ports: frozenset = frozenset({443, 8443, 993, 995, 465, 990})
    ssh_ports: frozenset = frozenset({22})
    detect_by_content: bool = True
    treat_ambiguous_as: EncClass = EncClass.PLAINTEXT
    # alerts/heartbeats sent after ChangeCipherSpec carry ciphertext
    encrypted_alerts: bool = True

    def __post_init__(self):
        object.__setattr__(self, "tls_ports", frozenset(int(p) for p in self.tls_ports))
        object.__setattr__(self, "ssh_ports", frozenset(int(p) for p in self.ssh_ports))
        object.__setattr__(self, "treat_ambiguous_as", EncClass(self.treat_ambiguous_as))
        if self.tls_ports & self.ssh_ports:
            raise ValueError(f"tls_ports and ssh_ports overlap: {sorted(self.tls_ports & self.ssh_ports)}")
        if self.treat_ambiguous_as is EncClass.AMBIGUOUS:
            raise ValueError("treat_ambiguous_as must be plaintext or encrypted")

    @property
    def ports(self) -> frozenset:
        return self.tls_ports | self.ssh_ports

    @classmethod
    def from_mapping(cls, cfg: Optional[dict]) -> "EncPolicy":
        cfg = dict(cfg or {})
        known = {"tls_ports", "ssh_ports", "detect_by_content", "treat_ambiguous_as", "encrypted_alerts"}
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown policy keys: {sorted(unknown)}")
        return cls(**cfg)

    def to_mapping(self) -> dict:
        return {
            "tls_ports": sorted(self.tls_ports),
            "ssh_ports": sorted(self.ssh_ports),
            "detect_by_content": self.detect_by_content,
            "treat_ambiguous_as": self.treat_ambiguous_as.value,
            "encrypted_alerts": self.encrypted_alerts,
        }


@dataclass(frozen=True)
class EncView:
    session: Session
    enc_packets: Tuple[ParsedPacket, ...]
    all_packets: Tuple[ParsedPacket, ...] = field(repr=False)


def parse_tls_records(payload: bytes) -> Optional[List[int]]:
    """Content types of the consecutive TLS records in ``payload``.

    Returns None unless the payload starts with a plausible record header.
    A record running past the end of the segment is accepted (it continues in
    a later segment); parsing stops at the first implausible header.
    """
    types = []
    pos, n = 0, len(payload)
    while n - pos >= 5:
        ctype, major, minor, length = payload[pos], payload[pos + 1], payload[pos + 2], \
            struct.unpack_from("!H", payload, pos + 3)[0]
        if ctype not in _TLS_TYPES or major != 3 or minor > 4 or length > _TLS_MAX_RECORD:
            break
        types.append(ctype)
        pos += 5 + length
    return types or None


def _ssh_messages(payload: bytes) -> Optional[List[int]]:
    """Message codes of unencrypted SSH binary packets, or None if unparseable."""
    codes = []
    pos, n = 0, len(payload)
    while n - pos >= 6:
        plen = struct.unpack_from("!I", payload, pos)[0]
        pad = payload[pos + 4]
        if plen < 5 or plen > _SSH_MAX_PACKET or pad >= plen or pos + 4 + plen > n:
            return None
        codes.append(payload[pos + 5])
        pos += 4 + plen
    if pos != n:
        return None
    return codes or None


def _strip_banner(payload: bytes) -> bytes:
    end = payload.find(b"\n")
    return b"" if end < 0 else payload[end + 1:]


def _is_ssh(session: Session, policy: EncPolicy) -> bool:
    if any(p.payload.startswith(b"SSH-") for p in session.packets):
        return True
    return bool({session.key.endpoint_a[1], session.key.endpoint_b[1]} & policy.ssh_ports)


def classify_packets(session: Session, policy: EncPolicy = EncPolicy(),
                     stats: Optional[Counter] = None) -> Session:
    """Return a copy of ``session`` with ``enc_class`` set on every packet."""
    on_policy_port = bool({session.key.endpoint_a[1], session.key.endpoint_b[1]} & policy.ports)
    if policy.detect_by_content and _is_ssh(session, policy):
        classes = _classify_ssh(session, policy, on_policy_port)
    elif policy.detect_by_content:
        classes = _classify_tls(session, policy, on_policy_port)
    else:
        classes = [
            EncClass.PLAINTEXT if not p.payload_length
            else EncClass.ENCRYPTED if on_policy_port else EncClass.AMBIGUOUS
            for p in session.packets
        ]
    resolved = []
    for pkt, cls in zip(session.packets, classes):
        if cls is EncClass.AMBIGUOUS:
            if stats is not None:
                stats["ambiguous"] += 1
            cls = policy.treat_ambiguous_as
        resolved.append(replace(pkt, enc_class=cls))
    return replace(session, packets=tuple(resolved))


def _classify_tls(session, policy, on_policy_port):
    after_ccs = {Direction.FORWARD: False, Direction.BACKWARD: False}
    handshake_seen = False
    out = []
    for pkt in session.packets:
        if not pkt.payload_length:
            out.append(EncClass.PLAINTEXT)
            continue
        records = parse_tls_records(pkt.payload)
        if records is None:
            if on_policy_port and handshake_seen:
                out.append(EncClass.ENCRYPTED)
            else:
                out.append(EncClass.AMBIGUOUS)
            continue
        d = pkt.direction
        cipher = []
        for ctype in records:
            if ctype == TLS_APPDATA:
                cipher.append(True)
            elif ctype == TLS_CCS:
                cipher.append(False)
                after_ccs[d] = True
                handshake_seen = True
            elif ctype == TLS_HANDSHAKE:
                cipher.append(after_ccs[d])
                handshake_seen = True
            else:
                cipher.append(after_ccs[d] and policy.encrypted_alerts)
        # a segment mixing cleartext and ciphertext records counts as cleartext
        out.append(EncClass.ENCRYPTED if all(cipher) else EncClass.PLAINTEXT)
    return out


def _classify_ssh(session, policy, on_policy_port):
    newkeys = {Direction.FORWARD: False, Direction.BACKWARD: False}
    out = []
    for pkt in session.packets:
        d = pkt.direction
        if not pkt.payload_length:
            out.append(EncClass.PLAINTEXT)
            continue
        if newkeys[d]:
            out.append(EncClass.ENCRYPTED)
            continue
        body = pkt.payload
        banner = body.startswith(b"SSH-")
        if banner:
            body = _strip_banner(body)
        codes = _ssh_messages(body) if body else []
        if codes is None:
            out.append(EncClass.PLAINTEXT if banner else EncClass.AMBIGUOUS)
            continue
        if SSH_MSG_NEWKEYS in codes:
            newkeys[d] = True
        out.append(EncClass.PLAINTEXT)
    return out


def _is_classified(session: Session) -> bool:
    return all(p.enc_class is not EncClass.AMBIGUOUS for p in session.packets)


def filter_encrypted_sessions(sessions: Iterable[Session], policy: EncPolicy = EncPolicy(),
                              stats: Optional[Counter] = None) -> List[Session]:
    """Keep sessions holding at least one encrypted packet, flagged ``is_encrypted``."""
    kept = []
    for s in sessions:
        if not _is_classified(s):
            s = classify_packets(s, policy, stats)
        if any(p.enc_class is EncClass.ENCRYPTED for p in s.packets):
            kept.append(replace(s, is_encrypted=True))
        elif stats is not None:
            stats["dropped:no_encrypted_packets"] += 1
    return kept


def encrypted_view(session: Session) -> EncView:
    if not session.is_encrypted:
        raise NotEncrypted(f"session {session.session_id} did not pass the encrypted-session filter")
    enc = tuple(p for p in session.packets if p.enc_class is EncClass.ENCRYPTED)
    if not enc:
        raise NotEncrypted(f"session {session.session_id} has no encrypted packets")
    return EncView(session, enc, session.packets)
