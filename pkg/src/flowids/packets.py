"""Packet records plus the two packet input formats: CSV and a small pcap subset.

The pcap reader understands classic libpcap files (micro- or nanosecond
magic, either byte order) with Ethernet link type carrying IPv4 and TCP or
UDP. Anything else is counted in :class:`ReadStats` and skipped.
"""

from __future__ import annotations

import csv
import enum
import io
import socket
import struct
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

TCP = 6
UDP = 17

PACKET_CSV_HEADER = ["timestamp_us", "src", "dst", "sport", "dport", "proto", "flags"]


class TcpFlags(enum.IntFlag):
    NONE = 0
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10


_FLAG_LETTERS = [(TcpFlags.FIN, "F"), (TcpFlags.SYN, "S"), (TcpFlags.RST, "R"),
                 (TcpFlags.PSH, "P"), (TcpFlags.ACK, "A")]


def flags_to_str(flags: TcpFlags) -> str:
    return "".join(letter for bit, letter in _FLAG_LETTERS if flags & bit)


def flags_from_str(text: str) -> TcpFlags:
    out = TcpFlags.NONE
    for ch in text.strip().upper():
        for bit, letter in _FLAG_LETTERS:
            if ch == letter:
                out |= bit
                break
        else:
            raise ValueError(f"unknown TCP flag letter {ch!r}")
    return out


@dataclass(frozen=True, slots=True)
class PacketRecord:
    timestamp: int  # microseconds since epoch
    src_addr: str
    dst_addr: str
    src_port: int
    dst_port: int
    protocol: int
    tcp_flags: TcpFlags = TcpFlags.NONE

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")
        for port in (self.src_port, self.dst_port):
            if not 0 <= port <= 65535:
                raise ValueError(f"port {port} out of range")

    @property
    def is_metered(self) -> bool:
        return self.protocol in (TCP, UDP)


@dataclass
class ReadStats:
    parsed: int = 0
    skipped: int = 0
    reasons: dict = field(default_factory=dict)

    def skip(self, reason: str):
        self.skipped += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1


# ---------------------------------------------------------------- CSV


def read_packet_csv(stream: IO[str], stats: ReadStats | None = None) -> Iterator[PacketRecord]:
    stats = stats if stats is not None else ReadStats()
    reader = csv.DictReader(stream)
    for row in reader:
        try:
            yield PacketRecord(
                timestamp=int(row["timestamp_us"]),
                src_addr=row["src"],
                dst_addr=row["dst"],
                src_port=int(row["sport"]),
                dst_port=int(row["dport"]),
                protocol=int(row["proto"]),
                tcp_flags=flags_from_str(row.get("flags") or ""),
            )
        except (KeyError, TypeError, ValueError):
            stats.skip("bad_csv_row")
            continue
        stats.parsed += 1


def write_packet_csv(packets: Iterable[PacketRecord], stream: IO[str]) -> int:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(PACKET_CSV_HEADER)
    n = 0
    for p in packets:
        writer.writerow([p.timestamp, p.src_addr, p.dst_addr, p.src_port, p.dst_port,
                         p.protocol, flags_to_str(p.tcp_flags)])
        n += 1
    return n


def sort_packets(packets: Iterable[PacketRecord]) -> list[PacketRecord]:
    """Stable sort by timestamp; the meter rejects out-of-order input."""
    return sorted(packets, key=lambda p: p.timestamp)


# ---------------------------------------------------------------- pcap

_PCAP_MAGICS = {
    b"\xd4\xc3\xb2\xa1": ("<", 1),
    b"\xa1\xb2\xc3\xd4": (">", 1),
    b"\x4d\x3c\xb2\xa1": ("<", 1000),
    b"\xa1\xb2\x3c\x4d": (">", 1000),
}
_LINKTYPE_ETHERNET = 1
_ETHERTYPE_IPV4 = 0x0800


def read_pcap(stream: IO[bytes], stats: ReadStats | None = None) -> Iterator[PacketRecord]:
    stats = stats if stats is not None else ReadStats()
    header = stream.read(24)
    if len(header) < 24 or header[:4] not in _PCAP_MAGICS:
        raise ValueError("not a libpcap file")
    endian, ts_div = _PCAP_MAGICS[header[:4]]
    linktype = struct.unpack(endian + "I", header[20:24])[0]
    if linktype != _LINKTYPE_ETHERNET:
        raise ValueError(f"unsupported link type {linktype}")
    rec_fmt = endian + "IIII"
    while True:
        rec = stream.read(16)
        if len(rec) < 16:
            if rec:
                stats.skip("truncated_record")
            return
        ts_sec, ts_frac, incl_len, _ = struct.unpack(rec_fmt, rec)
        frame = stream.read(incl_len)
        if len(frame) < incl_len:
            stats.skip("truncated_record")
            return
        pkt = _decode_frame(frame, ts_sec * 1_000_000 + ts_frac // ts_div, stats)
        if pkt is not None:
            stats.parsed += 1
            yield pkt


def _decode_frame(frame: bytes, ts_us: int, stats: ReadStats) -> PacketRecord | None:
    if len(frame) < 14:
        stats.skip("short_ethernet")
        return None
    if struct.unpack("!H", frame[12:14])[0] != _ETHERTYPE_IPV4:
        stats.skip("not_ipv4")
        return None
    ip = frame[14:]
    if len(ip) < 20 or ip[0] >> 4 != 4:
        stats.skip("bad_ipv4")
        return None
    ihl = (ip[0] & 0x0F) * 4
    if ihl < 20 or len(ip) < ihl:
        stats.skip("bad_ipv4")
        return None
    frag = struct.unpack("!H", ip[6:8])[0]
    if frag & 0x1FFF or frag & 0x2000:
        stats.skip("ip_fragment")
        return None
    proto = ip[9]
    src = socket.inet_ntoa(ip[12:16])
    dst = socket.inet_ntoa(ip[16:20])
    l4 = ip[ihl:]
    if proto == TCP:
        if len(l4) < 14:
            stats.skip("short_tcp")
            return None
        sport, dport = struct.unpack("!HH", l4[:4])
        flags = TcpFlags(l4[13] & 0x1F)
    elif proto == UDP:
        if len(l4) < 8:
            stats.skip("short_udp")
            return None
        sport, dport = struct.unpack("!HH", l4[:4])
        flags = TcpFlags.NONE
    else:
        stats.skip("unsupported_protocol")
        return None
    return PacketRecord(ts_us, src, dst, sport, dport, proto, flags)


def write_pcap(packets: Iterable[PacketRecord], stream: IO[bytes]) -> int:
    """Write minimal Ethernet/IPv4/TCP|UDP frames. Addresses must be dotted quads."""
    stream.write(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, _LINKTYPE_ETHERNET))
    n = 0
    for p in packets:
        if p.protocol == TCP:
            l4 = struct.pack("!HHIIBBHHH", p.src_port, p.dst_port, 0, 0, 5 << 4,
                             int(p.tcp_flags), 65535, 0, 0)
        elif p.protocol == UDP:
            l4 = struct.pack("!HHHH", p.src_port, p.dst_port, 8, 0)
        else:
            l4 = b""
        ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(l4), 0, 0, 64, p.protocol, 0,
                         socket.inet_aton(p.src_addr), socket.inet_aton(p.dst_addr))
        frame = b"\x00" * 12 + struct.pack("!H", _ETHERTYPE_IPV4) + ip + l4
        sec, usec = divmod(p.timestamp, 1_000_000)
        stream.write(struct.pack("<IIII", sec, usec, len(frame), len(frame)))
        stream.write(frame)
        n += 1
    return n


def read_packets(path: str, stats: ReadStats | None = None) -> list[PacketRecord]:
    """Read a packet file, sniffing pcap versus CSV from the first bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
        fh.seek(0)
        if head in _PCAP_MAGICS:
            return list(read_pcap(fh, stats))
        text = io.TextIOWrapper(fh, encoding="utf-8", newline="")
        return list(read_packet_csv(text, stats))
