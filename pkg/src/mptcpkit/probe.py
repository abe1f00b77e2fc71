"""SYN probe construction, response classification, and campaign running.

Classification is stateless: a response is judged from the probe spec and the
packet alone, so campaigns scale like single-packet scanners. One probe per
target per campaign, no retries; the first valid response wins.
"""

from __future__ import annotations

import hashlib
import ipaddress
import json
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Iterator, Protocol

from .errors import GuardViolation, IllegalCombination
from .options import (
    DEFAULT_MP_FLAGS,
    HandshakePhase,
    Key,
    MpCapable,
    TcpOption,
    decode_mp_capable,
    encode_mp_capable,
    parse_options_prefix,
)
from .packet import TcpFlags, TcpPacket, decode_packet

# Default v0 campaign key: a documented constant of Hamming weight 16, so key
# weight histograms from different campaigns line up.
DEFAULT_PROBE_KEY = Key(0x000000000000FFFF)

DEFAULT_SCANNER_ADDR_V4 = "192.0.2.1"
DEFAULT_SCANNER_ADDR_V6 = "2001:db8:ffff::1"


@dataclass(frozen=True)
class ProbeSpec:
    """One probe: target, port, MPTCP version, and (for v0) the static key."""

    target: str
    port: int
    version: int
    probe_key: Key | None = None
    timeout_ms: float = 2000.0
    flags: int = DEFAULT_MP_FLAGS

    def __post_init__(self) -> None:
        if self.version not in (0, 1):
            raise ValueError(f"version must be 0 or 1, got {self.version}")
        if self.version == 0 and self.probe_key is None:
            raise IllegalCombination("v0 probes require a probe key")
        if self.version == 1 and self.probe_key is not None:
            raise IllegalCombination("v1 probes must not carry a key")
        if not 0 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port}")

    def syn_option(self) -> bytes:
        """The exact MP_CAPABLE bytes this probe sends in its SYN."""
        return encode_mp_capable(
            MpCapable(self.version, self.flags, self.probe_key), HandshakePhase.SYN
        )


@dataclass(frozen=True)
class ProbeResponse:
    """A packet received before the timeout, with its parsed options."""

    tcp_flags: int
    options: list[TcpOption]
    rtt_ms: float
    raw: bytes = b""
    note: str | None = None


@dataclass(frozen=True)
class HopReply:
    """An ICMP-style time-exceeded reply quoting the in-flight packet."""

    responder: str
    quote: bytes
    rtt_ms: float


class ClassificationKind(Enum):
    NO_RESPONSE = "no_response"
    NO_MP_CAPABLE = "no_mp_capable"
    MIRRORED_KEY = "mirrored_key"
    VERSION_MISMATCH = "version_mismatch"
    POTENTIAL_CAPABLE = "potential_capable"


@dataclass(frozen=True)
class Classification:
    """Outcome of one probe exchange; exactly one kind per probe."""

    kind: ClassificationKind
    sender_key: Key | None = None
    got_version: int | None = None
    note: str | None = None

    @property
    def label(self) -> str:
        return self.kind.value


def derive_seq(target: str, port: int, seed: int) -> int:
    """Deterministic sequence number from the target and campaign seed.

    A keyed hash of the flow identity lets replies be validated without a
    per-target state table.
    """
    digest = hashlib.blake2b(
        f"{target},{port}".encode(),
        key=seed.to_bytes(8, "big", signed=False),
        digest_size=4,
    ).digest()
    return int.from_bytes(digest, "big")


def derive_src_port(target: str, port: int, seed: int) -> int:
    digest = hashlib.blake2b(
        f"sport:{target},{port}".encode(),
        key=seed.to_bytes(8, "big", signed=False),
        digest_size=2,
    ).digest()
    return 32768 + int.from_bytes(digest, "big") % 28000


def build_syn_probe(
    spec: ProbeSpec,
    seed: int = 0,
    src: str | None = None,
    ttl: int = 64,
) -> TcpPacket:
    """Build the SYN carrying exactly one MP_CAPABLE option."""
    if src is None:
        src = (
            DEFAULT_SCANNER_ADDR_V4
            if ipaddress.ip_address(spec.target).version == 4
            else DEFAULT_SCANNER_ADDR_V6
        )
    return TcpPacket(
        src=src,
        dst=spec.target,
        src_port=derive_src_port(spec.target, spec.port, seed),
        dst_port=spec.port,
        seq=derive_seq(spec.target, spec.port, seed),
        ack=0,
        flags=int(TcpFlags.SYN),
        ttl=ttl,
        options=spec.syn_option(),
    )


def _is_syn_ack(flags: int) -> bool:
    return bool(flags & TcpFlags.SYN) and bool(flags & TcpFlags.ACK)


def classify_response(spec: ProbeSpec, resp: ProbeResponse | None) -> Classification:
    """Classify one probe exchange. Total: never raises on packet content.

    v0: a returned sender's key equal to ours means a mirroring middlebox;
    a different key is potentially MPTCP-capable. v1: a byte-identical echo
    of our option means mirroring (checked before anything else), and a
    decoded version other than 1 is a version mismatch.
    """
    if resp is None:
        return Classification(ClassificationKind.NO_RESPONSE)
    if not _is_syn_ack(resp.tcp_flags):
        note = "reset" if resp.tcp_flags & TcpFlags.RST else "not a SYN-ACK"
        return Classification(ClassificationKind.NO_RESPONSE, note=note)
    kind30 = [o for o in resp.options if o.kind == 30]
    if not kind30:
        return Classification(ClassificationKind.NO_MP_CAPABLE)

    if spec.version == 1:
        sent = spec.syn_option()
        if any(o.encode() == sent for o in kind30):
            return Classification(ClassificationKind.MIRRORED_KEY)

    decoded: list[MpCapable] = []
    notes: list[str] = []
    for opt in kind30:
        try:
            decoded.append(decode_mp_capable(opt, HandshakePhase.SYN_ACK))
        except Exception as exc:  # all codec errors fold into a diagnostic
            notes.append(str(exc))
    if not decoded:
        return Classification(
            ClassificationKind.NO_MP_CAPABLE, note="; ".join(notes) or None
        )

    if spec.version == 0:
        for mc in decoded:
            if mc.sender_key == spec.probe_key:
                return Classification(
                    ClassificationKind.MIRRORED_KEY, sender_key=mc.sender_key
                )
    first = decoded[0]
    if first.version != spec.version:
        return Classification(
            ClassificationKind.VERSION_MISMATCH, got_version=first.version
        )
    return Classification(
        ClassificationKind.POTENTIAL_CAPABLE,
        sender_key=first.sender_key,
        got_version=first.version,
    )


class PacketTransport(Protocol):
    """Transport contract shared by the live scanner and the simulator."""

    def handshake(self, syn: TcpPacket) -> ProbeResponse | None: ...

    def ttl_probe(self, syn: TcpPacket, ttl: int) -> HopReply | ProbeResponse | None: ...


class Blocklist:
    """CIDR prefixes that must never be probed."""

    def __init__(self, networks: Iterable[ipaddress.IPv4Network | ipaddress.IPv6Network] = ()):
        self.networks = list(networks)

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Blocklist":
        nets = []
        for line in lines:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            nets.append(ipaddress.ip_network(line, strict=False))
        return cls(nets)

    @classmethod
    def load(cls, path) -> "Blocklist":
        with open(path, encoding="utf-8") as f:
            return cls.from_lines(f)

    def matches(self, address: str) -> bool:
        addr = ipaddress.ip_address(address)
        return any(addr.version == n.version and addr in n for n in self.networks)

    def __len__(self) -> int:
        return len(self.networks)


@dataclass
class CampaignGuard:
    """Mandatory rate and blocklist guardrails for a campaign."""

    max_packets_per_second: float
    blocklist: Blocklist | None
    dry_run: bool = False

    def validate(self) -> None:
        if self.dry_run:
            return
        if self.blocklist is None:
            raise GuardViolation("campaign refused: no blocklist reference")
        if self.max_packets_per_second <= 0:
            raise GuardViolation("campaign refused: rate must be positive")


class VirtualClock:
    """Deterministic clock for tests and simulated campaigns."""

    def __init__(self, start: float = 0.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            self.now += seconds


class RatePacer:
    """Spaces sends one interval apart so no 1-second window exceeds the rate.

    Send k is scheduled at exactly base + k*interval (no accumulation drift);
    a stalled campaign re-anchors instead of bursting to catch up.
    """

    def __init__(
        self,
        packets_per_second: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if packets_per_second <= 0:
            raise GuardViolation("rate must be positive")
        self.interval = 1.0 / packets_per_second
        self._clock = clock
        self._sleep = sleep
        self._base = clock() + self.interval
        self._count = 0

    def acquire(self) -> float:
        now = self._clock()
        send_at = self._base + self._count * self.interval
        if send_at < now:
            self._base = now
            self._count = 0
            send_at = now
        elif send_at > now:
            self._sleep(send_at - now)
        self._count += 1
        return send_at


@dataclass
class CampaignRecord:
    """One output record per target; `label` adds skipped/dry_run outcomes."""

    timestamp: float
    address: str
    port: int
    version: int
    label: str
    sender_key: Key | None = None
    got_version: int | None = None
    note: str | None = None

    def to_csv(self) -> str:
        key = self.sender_key.hex if self.sender_key is not None else ""
        return f"{self.timestamp:.6f},{self.address},{self.port},{self.version},{self.label},{key}"

    def to_json(self) -> str:
        payload = {
            "timestamp": round(self.timestamp, 6),
            "address": self.address,
            "port": self.port,
            "version": self.version,
            "classification": self.label,
            "sender_key": self.sender_key.hex if self.sender_key else None,
            "got_version": self.got_version,
            "note": self.note,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_csv(cls, line: str) -> "CampaignRecord":
        parts = line.rstrip("\n").split(",")
        if len(parts) != 6:
            raise ValueError(f"expected 6 fields, got {len(parts)}: {line!r}")
        ts, address, port, version, label, key = parts
        return cls(
            timestamp=float(ts),
            address=address,
            port=int(port),
            version=int(version),
            label=label,
            sender_key=Key.from_hex(key) if key else None,
        )


def load_targets(lines: Iterable[str]) -> list[tuple[str, int]]:
    """Parse a target list: one `address,port` per line, `#` comments."""
    targets = []
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        address, port = line.rsplit(",", 1)
        targets.append((address.strip(), int(port)))
    return targets


def run_campaign(
    targets: Iterable[tuple[str, int]],
    *,
    version: int,
    guard: CampaignGuard,
    transport: PacketTransport | None,
    probe_key: Key | None = None,
    timeout_ms: float = 2000.0,
    flags: int = DEFAULT_MP_FLAGS,
    seed: int = 0,
    clock: Callable[[], float] = time.monotonic,
    sleep: Callable[[float], None] = time.sleep,
) -> Iterator[CampaignRecord]:
    """Probe each target once, classify, and yield one record per target.

    Blocklisted targets are skipped (and still recorded); dry runs emit the
    built probes without sending anything. Output order follows input order.
    """
    guard.validate()
    if version == 0 and probe_key is None:
        probe_key = DEFAULT_PROBE_KEY
    if not guard.dry_run and transport is None:
        raise GuardViolation("campaign refused: no transport")
    pacer = None if guard.dry_run else RatePacer(
        guard.max_packets_per_second, clock=clock, sleep=sleep
    )

    for address, port in targets:
        if guard.blocklist is not None and guard.blocklist.matches(address):
            yield CampaignRecord(clock(), address, port, version, "skipped")
            continue
        spec = ProbeSpec(address, port, version, probe_key, timeout_ms, flags)
        syn = build_syn_probe(spec, seed)
        if guard.dry_run:
            yield CampaignRecord(
                clock(), address, port, version, "dry_run",
                note=syn.options.hex(),
            )
            continue
        ts = pacer.acquire()
        resp = transport.handshake(syn)
        cls = classify_response(spec, resp)
        yield CampaignRecord(
            ts, address, port, version, cls.label,
            sender_key=cls.sender_key, got_version=cls.got_version, note=cls.note,
        )


def make_response(
    packet_bytes: bytes, rtt_ms: float, note: str | None = None
) -> ProbeResponse | None:
    """Build a ProbeResponse from raw reply bytes with a tolerant option parse."""
    seg = decode_packet(packet_bytes)
    if seg is None:
        return None
    opts, err = parse_options_prefix(seg.options)
    joined = "; ".join(x for x in (note, err) if x) or None
    return ProbeResponse(seg.flags, opts, rtt_ms, raw=packet_bytes, note=joined)
