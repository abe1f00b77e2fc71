"""Classic pcap file reading and writing.

Handles microsecond and nanosecond magic in either byte order. Link types
supported downstream: Ethernet (1), raw IP (101), and NULL/loopback (0).
A truncated trailing record ends the stream quietly; only an unreadable
global header is fatal.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import IO, Iterable, Iterator

from .errors import MalformedCapture

MAGIC_US = 0xA1B2C3D4
MAGIC_NS = 0xA1B23C4D

LINKTYPE_NULL = 0
LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101


def read_pcap(source: str | Path | IO[bytes]) -> tuple[int, Iterator[tuple[float, bytes]]]:
    """Open a pcap file; returns (linktype, iterator of (timestamp, frame))."""
    f = open(source, "rb") if isinstance(source, (str, Path)) else source
    header = f.read(24)
    if len(header) < 24:
        raise MalformedCapture("file too short for a pcap global header")
    magic = struct.unpack("<I", header[:4])[0]
    if magic in (MAGIC_US, MAGIC_NS):
        endian = "<"
    else:
        magic = struct.unpack(">I", header[:4])[0]
        if magic in (MAGIC_US, MAGIC_NS):
            endian = ">"
        else:
            raise MalformedCapture(f"unknown pcap magic {header[:4].hex()}")
    ts_divisor = 1e9 if magic == MAGIC_NS else 1e6
    linktype = struct.unpack(f"{endian}I", header[20:24])[0]

    def frames() -> Iterator[tuple[float, bytes]]:
        try:
            while True:
                rec = f.read(16)
                if len(rec) < 16:
                    return
                ts_sec, ts_frac, incl_len, _orig_len = struct.unpack(f"{endian}IIII", rec)
                data = f.read(incl_len)
                if len(data) < incl_len:
                    return
                yield ts_sec + ts_frac / ts_divisor, data
        finally:
            if isinstance(source, (str, Path)):
                f.close()

    return linktype, frames()


def write_pcap(
    dest: str | Path | IO[bytes],
    frames: Iterable[tuple[float, bytes]],
    linktype: int = LINKTYPE_RAW,
) -> None:
    """Write frames of (timestamp seconds, bytes) as a microsecond pcap."""
    f = open(dest, "wb") if isinstance(dest, (str, Path)) else dest
    try:
        f.write(struct.pack("<IHHiIII", MAGIC_US, 2, 4, 0, 0, 65535, linktype))
        for ts, data in frames:
            sec = int(ts)
            usec = int(round((ts - sec) * 1e6))
            f.write(struct.pack("<IIII", sec, usec, len(data), len(data)))
            f.write(data)
    finally:
        if isinstance(dest, (str, Path)):
            f.close()
