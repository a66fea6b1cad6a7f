"""Classic libpcap file reading and writing (no pcapng)."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Iterator

from ..errors import BadMagic, Truncated

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_IPV4 = 228
LINKTYPE_IPV6 = 229

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

# first four bytes on disk -> (struct byte order, nanoseconds per fractional tick)
_MAGICS = {
    b"\xd4\xc3\xb2\xa1": ("<", 1000),
    b"\xa1\xb2\xc3\xd4": (">", 1000),
    b"\x4d\x3c\xb2\xa1": ("<", 1),
    b"\xa1\xb2\x3c\x4d": (">", 1),
}


@dataclass(frozen=True)
class PcapRecord:
    raw: bytes
    timestamp: int  # nanoseconds
    link_type: int
    orig_len: int = 0


@dataclass(frozen=True)
class PcapHeader:
    byte_order: str
    tick_ns: int
    snaplen: int
    link_type: int


def read_header(data: bytes) -> PcapHeader:
    if len(data) < 4 or bytes(data[:4]) not in _MAGICS:
        raise BadMagic(f"unrecognized pcap magic {bytes(data[:4]).hex() or '<empty>'}")
    order, tick = _MAGICS[bytes(data[:4])]
    if len(data) < GLOBAL_HEADER_LEN:
        raise Truncated("pcap global header shorter than 24 bytes")
    _major, _minor, _zone, _sigfigs, snaplen, network = struct.unpack(order + "HHiIII", data[4:24])
    return PcapHeader(order, tick, snaplen, network & 0xFFFF)


def parse_pcap(data: bytes) -> Iterator[PcapRecord]:
    """Validate the global header eagerly and return a record iterator.

    Raises BadMagic immediately; Truncated is raised while iterating, at the
    first record whose header or body runs past the end of the buffer.
    """
    header = read_header(data)
    return _records(memoryview(data), header)


def _records(view: memoryview, header: PcapHeader) -> Iterator[PcapRecord]:
    fmt = header.byte_order + "IIII"
    pos = GLOBAL_HEADER_LEN
    end = len(view)
    while pos < end:
        if end - pos < RECORD_HEADER_LEN:
            raise Truncated(f"record header at offset {pos} cut short")
        ts_sec, ts_frac, incl_len, orig_len = struct.unpack_from(fmt, view, pos)
        pos += RECORD_HEADER_LEN
        if incl_len > end - pos:
            raise Truncated(f"record at offset {pos - RECORD_HEADER_LEN} claims {incl_len} bytes, {end - pos} remain")
        raw = bytes(view[pos:pos + incl_len])
        pos += incl_len
        yield PcapRecord(raw, ts_sec * 1_000_000_000 + ts_frac * header.tick_ns, header.link_type, orig_len)


def read_pcap_file(path) -> Iterator[PcapRecord]:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_pcap(data)


def write_pcap(records: Iterable[tuple], link_type: int = LINKTYPE_ETHERNET,
               nanosecond: bool = False, snaplen: int = 262144) -> bytes:
    """Serialize ``(raw_bytes, timestamp_ns)`` pairs as a little-endian pcap.

    Microsecond files require timestamps that are whole microseconds.
    """
    magic = 0xA1B23C4D if nanosecond else 0xA1B2C3D4
    tick = 1 if nanosecond else 1000
    out = [struct.pack("<IHHiIII", magic, 2, 4, 0, 0, snaplen, link_type)]
    for raw, ts in records:
        if ts < 0:
            raise ValueError("negative timestamp")
        sec, rem = divmod(int(ts), 1_000_000_000)
        frac, lost = divmod(rem, tick)
        if lost:
            raise ValueError(f"timestamp {ts} not representable at {tick} ns resolution")
        out.append(struct.pack("<IIII", sec, frac, len(raw), len(raw)))
        out.append(bytes(raw))
    return b"".join(out)
