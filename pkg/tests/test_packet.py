import struct

from mptcpkit.options import TcpOption
from mptcpkit.packet import (
    TcpFlags,
    TcpPacket,
    decode_packet,
    encode_packet,
    extract_quoted_options,
    internet_checksum,
)


def syn(src="192.0.2.1", dst="10.0.0.1", options=b"\x1e\x04\x01\x81"):
    return TcpPacket(
        src=src, dst=dst, src_port=40000, dst_port=80, seq=12345,
        flags=int(TcpFlags.SYN), options=options,
    )


def test_encode_decode_round_trip_v4():
    pkt = syn()
    seg = decode_packet(encode_packet(pkt))
    assert seg is not None
    assert (seg.src, seg.dst) == (pkt.src, pkt.dst)
    assert (seg.src_port, seg.dst_port, seg.seq) == (40000, 80, 12345)
    assert seg.options == pkt.options  # 4-byte option needs no padding


def test_encode_decode_round_trip_v6():
    pkt = syn(src="2001:db8::1", dst="2001:db8::2")
    seg = decode_packet(encode_packet(pkt))
    assert seg is not None
    assert seg.src == "2001:db8::1"
    assert seg.dst == "2001:db8::2"


def test_options_padded_to_word():
    pkt = syn(options=b"\xfd\x03\x01")  # 3 bytes -> padded to 4
    seg = decode_packet(encode_packet(pkt))
    assert seg.options == b"\xfd\x03\x01\x00"


def test_ipv4_header_checksum_valid():
    data = encode_packet(syn())
    assert internet_checksum(data[:20]) == 0


def test_tcp_checksum_valid_v4():
    data = encode_packet(syn())
    pseudo = data[12:20] + struct.pack("!BBH", 0, 6, len(data) - 20)
    assert internet_checksum(pseudo + data[20:]) == 0


def test_ip_total_length_field():
    pkt = syn(options=b"")
    data = encode_packet(pkt)
    seg = decode_packet(data)
    assert seg.ip_bytes == len(data) == 40


def test_decode_rejects_non_tcp():
    data = bytearray(encode_packet(syn()))
    data[9] = 17  # protocol = UDP
    assert decode_packet(bytes(data)) is None


def test_decode_rejects_short_input():
    assert decode_packet(b"") is None
    assert decode_packet(b"\x45" + bytes(10)) is None


def test_quote_full_packet_shows_options():
    data = encode_packet(syn())
    quoted = extract_quoted_options(data)
    assert quoted == [TcpOption(30, b"\x01\x81")]


def test_quote_28_bytes_hides_options():
    # classic minimal quote: IPv4 header + 8 bytes of TCP
    data = encode_packet(syn())
    assert extract_quoted_options(data[:28]) is None


def test_quote_covering_headers_but_not_options():
    data = encode_packet(syn())
    assert extract_quoted_options(data[:41]) is None


def test_quote_of_optionless_packet():
    data = encode_packet(syn(options=b""))
    assert extract_quoted_options(data) == []
