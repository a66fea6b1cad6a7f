"""Seeded synthetic session corpora with known encryption annotations.

Every builder returns :class:`SessionSpec` objects; ``PacketSpec.annotation``
holds the class the content classifier is expected to assign.
"""
from __future__ import annotations

from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .capture.synth import (TLS_APPLICATION_DATA, TLS_CHANGE_CIPHER_SPEC, TLS_HANDSHAKE, PacketSpec,
                            SessionSpec, TlsRecord)

ENC, PLAIN = "encrypted", "plaintext"
BASE_START_US = 1_600_000_000_000_000
SESSION_SPACING_US = 400_000_000  # wider than the idle timeout


def _addr(index: int, net: str = "10") -> str:
    return f"{net}.{(index >> 16) & 0xFF}.{(index >> 8) & 0xFF}.{(index & 0xFF) or 1}"


def endpoints(index: int, server_port: int = 443, server_net: str = "192.0.2") -> Tuple[tuple, tuple]:
    return (_addr(index + 1), 20000 + index % 40000), (f"{server_net}.{1 + index % 250}", server_port)


def _gap(rng: np.random.Generator, scale_us: float = 20_000.0) -> int:
    return int(rng.exponential(scale_us)) + 1


def _ttl(direction: str) -> int:
    return 64 if direction == "forward" else 52


def _pkt(rng, direction, payload, annotation, gap_scale=20_000.0, first=False) -> PacketSpec:
    return PacketSpec(gap_us=0 if first else _gap(rng, gap_scale), direction=direction, payload=payload,
                      ttl=_ttl(direction), window=65535 if direction == "forward" else 29200,
                      annotation=annotation)


def _tcp_open(rng) -> List[PacketSpec]:
    return [
        PacketSpec(0, "forward", b"", 64, 65535, 20, 0x02, PLAIN),
        PacketSpec(_gap(rng, 5_000), "backward", b"", 52, 29200, 20, 0x12, PLAIN),
        PacketSpec(_gap(rng, 2_000), "forward", b"", 64, 65535, 0, 0x10, PLAIN),
    ]


def tls12_session(rng: np.random.Generator, index: int, n_app: int = 8, label: Optional[str] = None,
                  start_us: Optional[int] = None) -> SessionSpec:
    """Full TLS 1.2 handshake, CCS in both directions, then application data."""
    pk = _tcp_open(rng)
    pk.append(_pkt(rng, "forward", TlsRecord(TLS_HANDSHAKE, int(rng.integers(180, 520))), PLAIN))
    pk.append(_pkt(rng, "backward", [TlsRecord(TLS_HANDSHAKE, int(rng.integers(1200, 3000)))], PLAIN))
    pk.append(_pkt(rng, "forward", [TlsRecord(TLS_HANDSHAKE, 70), TlsRecord(TLS_CHANGE_CIPHER_SPEC, 1),
                                    TlsRecord(TLS_HANDSHAKE, 40)], PLAIN))
    pk.append(_pkt(rng, "backward", [TlsRecord(TLS_CHANGE_CIPHER_SPEC, 1)], PLAIN))
    pk.append(_pkt(rng, "backward", TlsRecord(TLS_HANDSHAKE, 40), ENC))
    for i in range(n_app):
        d = "forward" if rng.random() < 0.45 else "backward"
        pk.append(_pkt(rng, d, TlsRecord(TLS_APPLICATION_DATA, int(rng.integers(20, 1400))), ENC))
        if rng.random() < 0.3:
            pk.append(_pkt(rng, "backward" if d == "forward" else "forward", b"", PLAIN, 3_000))
    return SessionSpec(*endpoints(index), tuple(pk), start_us=_start(index, start_us), label=label)


def tls13_session(rng: np.random.Generator, index: int, n_app: int = 8, label: Optional[str] = None,
                  start_us: Optional[int] = None) -> SessionSpec:
    """TLS 1.3: encrypted handshake travels as application-data records."""
    pk = _tcp_open(rng)
    pk.append(_pkt(rng, "forward", TlsRecord(TLS_HANDSHAKE, int(rng.integers(200, 600)), 0x0301), PLAIN))
    pk.append(_pkt(rng, "backward", [TlsRecord(TLS_HANDSHAKE, 90), TlsRecord(TLS_CHANGE_CIPHER_SPEC, 1),
                                     TlsRecord(TLS_APPLICATION_DATA, int(rng.integers(1500, 4000)))], PLAIN))
    pk.append(_pkt(rng, "forward", [TlsRecord(TLS_CHANGE_CIPHER_SPEC, 1),
                                    TlsRecord(TLS_APPLICATION_DATA, 53)], PLAIN))
    for _ in range(n_app):
        d = "forward" if rng.random() < 0.5 else "backward"
        pk.append(_pkt(rng, d, TlsRecord(TLS_APPLICATION_DATA, int(rng.integers(20, 1400))), ENC))
    return SessionSpec(*endpoints(index), tuple(pk), start_us=_start(index, start_us), label=label)


def _ssh_packet(code: int, body_len: int) -> bytes:
    pad = 4 + (-(body_len + 5 + 4)) % 8
    plen = 1 + 1 + body_len + pad
    return plen.to_bytes(4, "big") + bytes([pad, code]) + bytes(body_len) + bytes(pad)


def ssh_session(rng: np.random.Generator, index: int, n_app: int = 8, label: Optional[str] = None,
                start_us: Optional[int] = None) -> SessionSpec:
    """Banner exchange, KEXINIT, NEWKEYS per direction, then ciphertext."""
    pk = _tcp_open(rng)
    pk.append(_pkt(rng, "backward", b"SSH-2.0-OpenSSH_8.9\r\n", PLAIN))
    pk.append(_pkt(rng, "forward", b"SSH-2.0-OpenSSH_9.3\r\n", PLAIN))
    pk.append(_pkt(rng, "forward", _ssh_packet(20, int(rng.integers(200, 900))), PLAIN))
    pk.append(_pkt(rng, "backward", _ssh_packet(20, int(rng.integers(200, 900))), PLAIN))
    pk.append(_pkt(rng, "forward", _ssh_packet(30, 40), PLAIN))
    pk.append(_pkt(rng, "backward", _ssh_packet(31, 500) + _ssh_packet(21, 0), PLAIN))
    pk.append(_pkt(rng, "forward", _ssh_packet(21, 0), PLAIN))
    for _ in range(n_app):
        d = "forward" if rng.random() < 0.5 else "backward"
        pk.append(_pkt(rng, d, bytes(rng.integers(0, 256, int(rng.integers(36, 600)), dtype=np.uint8)), ENC))
    return SessionSpec(*endpoints(index, 22), tuple(pk), start_us=_start(index, start_us), label=label)


def http_session(rng: np.random.Generator, index: int, n: int = 4, label: Optional[str] = None,
                 start_us: Optional[int] = None) -> SessionSpec:
    """Cleartext HTTP; the filter must drop it."""
    pk = _tcp_open(rng)
    for i in range(n):
        pk.append(_pkt(rng, "forward", b"GET /%d HTTP/1.1\r\nHost: example.test\r\n\r\n" % i, PLAIN))
        pk.append(_pkt(rng, "backward", b"HTTP/1.1 200 OK\r\n\r\n" + bytes(int(rng.integers(10, 900))), PLAIN))
    return SessionSpec(*endpoints(index, 80), tuple(pk), start_us=_start(index, start_us), label=label)


def _start(index: int, start_us: Optional[int]) -> int:
    return BASE_START_US + index * SESSION_SPACING_US if start_us is None else start_us


def random_encrypted_session(rng: np.random.Generator, index: int, label: Optional[str] = None) -> SessionSpec:
    kind = int(rng.integers(0, 3))
    n_app = int(rng.integers(1, 30))
    builder = (tls12_session, tls13_session, ssh_session)[kind]
    return builder(rng, index, n_app=n_app, label=label)


def insert_plaintext(spec: SessionSpec, rng: np.random.Generator, count: int) -> SessionSpec:
    """Add pure ACKs strictly between existing packets without moving any of them."""
    packets = list(spec.packets)
    slots = [i for i in range(1, len(packets)) if packets[i].gap_us >= 2]
    if not slots:
        raise ValueError("session has no gap wide enough to insert packets into")
    inserts: Dict[int, int] = {}
    for _ in range(count):
        i = int(rng.choice(slots))
        inserts[i] = inserts.get(i, 0) + 1
    out: List[PacketSpec] = []
    for i, p in enumerate(packets):
        k = min(inserts.get(i, 0), p.gap_us - 1)
        if k > 0:
            cuts = np.sort(rng.choice(np.arange(1, p.gap_us), size=k, replace=False))
            last = 0
            for c in cuts:
                d = "forward" if rng.random() < 0.5 else "backward"
                out.append(PacketSpec(int(c - last), d, b"", _ttl(d), 1024, 0, 0x10, PLAIN))
                last = int(c)
            p = replace(p, gap_us=p.gap_us - last)
        out.append(p)
    return replace(spec, packets=tuple(out))


# -- labelled corpora ------------------------------------------------------------

def _shared_shape(rng, n_min=18, n_max=30):
    """Size, direction and timing draws that do not depend on the class."""
    n = int(rng.integers(n_min, n_max + 1))
    sizes = rng.integers(60, 1400, n)
    dirs = np.where(rng.random(n) < 0.5, "forward", "backward")
    dirs[0] = "forward"
    gaps = [int(g) + 1 for g in rng.exponential(20_000.0, n)]
    gaps[0] = 0
    return sizes, dirs, gaps


def enc_signal_session(rng: np.random.Generator, index: int, malicious: bool) -> SessionSpec:
    """Class signal lives only in which packets are encrypted.

    Sizes, directions and timing come from one class-independent
    distribution. Malicious sessions encrypt the packets above the session's
    median size; benign ones a random half. Everything else is a cleartext
    handshake record (no ChangeCipherSpec is ever sent).
    """
    sizes, dirs, gaps = _shared_shape(rng)
    n = len(sizes)
    if malicious:
        enc = sizes > np.median(sizes)
    else:
        enc = np.zeros(n, dtype=bool)
        enc[rng.choice(n, size=n // 2, replace=False)] = True
    pk = []
    for i in range(n):
        ctype = TLS_APPLICATION_DATA if enc[i] else TLS_HANDSHAKE
        d = str(dirs[i])
        pk.append(PacketSpec(gaps[i], d, TlsRecord(ctype, int(sizes[i])), _ttl(d),
                             65535 if d == "forward" else 29200, annotation=ENC if enc[i] else PLAIN))
    label = "malicious" if malicious else "benign"
    return SessionSpec(*endpoints(index), tuple(pk), start_us=_start(index, None), label=label)


def tail_signal_session(rng: np.random.Generator, index: int, malicious: bool) -> SessionSpec:
    """Class signal lives only past the 15th encrypted packet.

    The per-packet views truncate to 15 packets per scope, so only the
    session totals (and hence the ratio vector) can see the tail.
    """
    pk = [PacketSpec(0, "forward", TlsRecord(TLS_HANDSHAKE, int(rng.integers(180, 520))), 64, 65535,
                     annotation=PLAIN),
          _pkt(rng, "backward", TlsRecord(TLS_HANDSHAKE, int(rng.integers(1200, 3000))), PLAIN)]
    for _ in range(20):
        d = "forward" if rng.random() < 0.5 else "backward"
        pk.append(_pkt(rng, d, TlsRecord(TLS_APPLICATION_DATA, int(rng.integers(60, 1400))), ENC))
    n_tail = int(rng.integers(15, 30))
    lo, hi = (900, 1400) if malicious else (60, 560)
    for _ in range(n_tail):
        d = "forward" if rng.random() < 0.5 else "backward"
        pk.append(_pkt(rng, d, TlsRecord(TLS_APPLICATION_DATA, int(rng.integers(lo, hi))), ENC))
    # cleartext filler keeps the all-packet totals in a class-independent range
    for _ in range(int(rng.integers(0, 4))):
        pk.append(_pkt(rng, "forward", b"", PLAIN))
    label = "malicious" if malicious else "benign"
    return SessionSpec(*endpoints(index), tuple(pk), start_us=_start(index, None), label=label)


CORPORA = {"enc_signal": enc_signal_session, "tail_signal": tail_signal_session}


def labelled_corpus(kind: str, n_sessions: int, seed: int) -> List[SessionSpec]:
    """Balanced, interleaved benign/malicious sessions with distinct endpoints."""
    builder = CORPORA[kind]
    rng = np.random.default_rng([seed, 0xC0])
    return [builder(rng, i, malicious=bool(i % 2)) for i in range(n_sessions)]


def mixed_corpus(n_sessions: int, seed: int) -> List[SessionSpec]:
    """TLS 1.2/1.3, SSH and cleartext HTTP sessions for filter and pipeline smoke runs."""
    rng = np.random.default_rng([seed, 0x31])
    builders = (tls12_session, tls13_session, ssh_session, http_session)
    return [builders[i % 4](rng, i, int(rng.integers(2, 20))) for i in range(n_sessions)]


def split_by_label(specs: Sequence[SessionSpec]) -> Dict[str, List[SessionSpec]]:
    out: Dict[str, List[SessionSpec]] = {}
    for s in specs:
        out.setdefault(s.label or "unlabelled", []).append(s)
    return out
