"""Minimal IPv4/IPv6 + TCP segment construction and parsing.

Enough of the wire format to build SYN probes, synthesize captures, and read
TCP headers back out of responses and ICMP-quoted packets. No fragmentation,
no IPv6 extension headers, no payload reassembly.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass
from enum import IntFlag

from .options import TcpOption, parse_options_prefix


class TcpFlags(IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20
    ECE = 0x40
    CWR = 0x80


IPV4_HEADER_LEN = 20
IPV6_HEADER_LEN = 40
TCP_HEADER_LEN = 20


@dataclass(frozen=True)
class TcpPacket:
    """Builder-side description of one TCP segment."""

    src: str
    dst: str
    src_port: int
    dst_port: int
    seq: int
    ack: int = 0
    flags: int = int(TcpFlags.SYN)
    ttl: int = 64
    window: int = 65535
    options: bytes = b""
    payload: bytes = b""


@dataclass(frozen=True)
class ParsedSegment:
    """Reader-side view of an IP+TCP packet."""

    src: str
    dst: str
    src_port: int
    dst_port: int
    seq: int
    ack: int
    flags: int
    ttl: int
    window: int
    options: bytes
    ip_bytes: int  # IP-layer total length, the byte-accounting unit
    payload_len: int


def ip_family(addr: str) -> int:
    return ipaddress.ip_address(addr).version


def internet_checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _tcp_bytes(pkt: TcpPacket, src_packed: bytes, dst_packed: bytes) -> bytes:
    options = pkt.options + b"\x00" * (-len(pkt.options) % 4)
    offset = (TCP_HEADER_LEN + len(options)) // 4
    header = struct.pack(
        "!HHIIBBHHH",
        pkt.src_port,
        pkt.dst_port,
        pkt.seq & 0xFFFFFFFF,
        pkt.ack & 0xFFFFFFFF,
        offset << 4,
        pkt.flags & 0xFF,
        pkt.window,
        0,
        0,
    )
    segment = header + options + pkt.payload
    if len(src_packed) == 4:
        pseudo = src_packed + dst_packed + struct.pack("!BBH", 0, 6, len(segment))
    else:
        pseudo = src_packed + dst_packed + struct.pack("!IBBBB", len(segment), 0, 0, 0, 6)
    csum = internet_checksum(pseudo + segment)
    return segment[:16] + struct.pack("!H", csum) + segment[18:]


def encode_packet(pkt: TcpPacket) -> bytes:
    """Serialize to IP header + TCP header + options + payload, checksummed."""
    src = ipaddress.ip_address(pkt.src)
    dst = ipaddress.ip_address(pkt.dst)
    if src.version != dst.version:
        raise ValueError("source and destination address families differ")
    segment = _tcp_bytes(pkt, src.packed, dst.packed)
    if src.version == 4:
        total = IPV4_HEADER_LEN + len(segment)
        header = struct.pack(
            "!BBHHHBBH4s4s",
            0x45,
            0,
            total,
            0,
            0,
            pkt.ttl,
            6,
            0,
            src.packed,
            dst.packed,
        )
        csum = internet_checksum(header)
        header = header[:10] + struct.pack("!H", csum) + header[12:]
        return header + segment
    header = struct.pack(
        "!IHBB16s16s", 0x60000000, len(segment), 6, pkt.ttl, src.packed, dst.packed
    )
    return header + segment


def _ip_header(data: bytes) -> tuple[int, str, str, int, int, int] | None:
    """Return (ip_header_len, src, dst, ttl, ip_total_bytes, proto) or None."""
    if not data:
        return None
    version = data[0] >> 4
    if version == 4:
        if len(data) < IPV4_HEADER_LEN:
            return None
        ihl = (data[0] & 0x0F) * 4
        if ihl < IPV4_HEADER_LEN or len(data) < ihl:
            return None
        total_len = struct.unpack("!H", data[2:4])[0]
        ttl = data[8]
        proto = data[9]
        src = str(ipaddress.IPv4Address(data[12:16]))
        dst = str(ipaddress.IPv4Address(data[16:20]))
        return ihl, src, dst, ttl, total_len, proto
    if version == 6:
        if len(data) < IPV6_HEADER_LEN:
            return None
        payload_len = struct.unpack("!H", data[4:6])[0]
        proto = data[6]
        ttl = data[7]
        src = str(ipaddress.IPv6Address(data[8:24]))
        dst = str(ipaddress.IPv6Address(data[24:40]))
        return IPV6_HEADER_LEN, src, dst, ttl, IPV6_HEADER_LEN + payload_len, proto
    return None


def decode_packet(data: bytes) -> ParsedSegment | None:
    """Parse an IP+TCP packet; None for anything not complete TCP."""
    ip = _ip_header(data)
    if ip is None:
        return None
    ihl, src, dst, ttl, ip_total, proto = ip
    if proto != 6 or len(data) < ihl + TCP_HEADER_LEN:
        return None
    (
        src_port,
        dst_port,
        seq,
        ack,
        offset_byte,
        flags,
        window,
        _csum,
        _urg,
    ) = struct.unpack("!HHIIBBHHH", data[ihl : ihl + TCP_HEADER_LEN])
    tcp_len = (offset_byte >> 4) * 4
    if tcp_len < TCP_HEADER_LEN or len(data) < ihl + tcp_len:
        return None
    options = bytes(data[ihl + TCP_HEADER_LEN : ihl + tcp_len])
    payload_len = max(0, ip_total - ihl - tcp_len)
    return ParsedSegment(
        src, dst, src_port, dst_port, seq, ack, flags, ttl, window, options,
        ip_total, payload_len,
    )


def extract_quoted_options(quote: bytes) -> list[TcpOption] | None:
    """Read the TCP options region out of an ICMP-quoted packet prefix.

    Returns None when the quote is too short to cover the full options
    region: absence of evidence, not evidence of absence.
    """
    ip = _ip_header(quote)
    if ip is None:
        return None
    ihl = ip[0]
    if len(quote) < ihl + 13:
        return None
    tcp_len = (quote[ihl + 12] >> 4) * 4
    if tcp_len < TCP_HEADER_LEN or len(quote) < ihl + tcp_len:
        return None
    region = bytes(quote[ihl + TCP_HEADER_LEN : ihl + tcp_len])
    opts, err = parse_options_prefix(region)
    if err is not None:
        return None
    return opts
