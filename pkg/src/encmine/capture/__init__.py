from .decode import decode_packet
from .packet import Direction, EncClass, FlowKey, ParsedPacket, Session
from .pcap import PcapRecord, parse_pcap, read_pcap_file, write_pcap
from .sessions import DEFAULT_IDLE_TIMEOUT, assemble_sessions, sessions_from_pcap
from .synth import PacketSpec, SessionSpec, TlsRecord, synth_pcap

__all__ = [
    "Direction", "EncClass", "FlowKey", "ParsedPacket", "Session", "PcapRecord",
    "parse_pcap", "read_pcap_file", "write_pcap", "decode_packet", "assemble_sessions",
    "sessions_from_pcap", "DEFAULT_IDLE_TIMEOUT", "PacketSpec", "SessionSpec", "TlsRecord",
    "synth_pcap",
]
