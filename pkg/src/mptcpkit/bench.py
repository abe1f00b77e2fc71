"""Paired GET timing: the same target measured over MPTCP and plain TCP.

Runs are paired by index and differenced per metric (delta = mptcp - tcp, so
negative deltas mean MPTCP was faster). The simulated transport derives its
timings from a topology: paths through a stripping middlebox charge the
MPTCP side a fallback retry penalty, reproducing the slow-connect signature
such boxes leave on real measurements.
"""

from __future__ import annotations

import hashlib
import random
import socket
import ssl
import time
from dataclasses import dataclass, field
from typing import IO, Iterable, Protocol

from .errors import PairingMismatch, TransportUnavailable
from .netsim import BehaviorKind, SimNetwork

METRICS = ("connect", "tls", "ttfb", "total")

# Linux socket protocol number for MPTCP sockets (kernel 5.6+).
IPPROTO_MPTCP = 262


@dataclass(frozen=True)
class TimingSample:
    transport: str  # "tcp" | "mptcp"
    success: bool
    connect_ms: float | None = None
    tls_handshake_ms: float | None = None
    ttfb_ms: float | None = None
    total_ms: float | None = None

    def metric(self, name: str) -> float | None:
        return {
            "connect": self.connect_ms,
            "tls": self.tls_handshake_ms,
            "ttfb": self.ttfb_ms,
            "total": self.total_ms,
        }[name]


@dataclass(frozen=True)
class DeltaRecord:
    target: str
    metric: str
    delta_ms: float


class TimingTransport(Protocol):
    transport: str

    def fetch(self, target: str, port: int, run: int) -> TimingSample: ...


class SimTimingTransport:
    """Deterministic timing source backed by a simulated topology.

    connect time is one path round trip; a TLS handshake adds two more; the
    response adds one each for first byte and drain. When the path contains
    a stripping middlebox the MPTCP side pays `fallback_penalty_ms` on
    connect (SYN retry without extensions after a fallback timeout).
    """

    def __init__(
        self,
        network: SimNetwork,
        transport: str,
        fallback_penalty_ms: float = 250.0,
        jitter_ms: float = 0.5,
        seed: int = 0,
    ):
        if transport not in ("tcp", "mptcp"):
            raise ValueError(f"transport must be tcp or mptcp, got {transport!r}")
        self.network = network
        self.transport = transport
        self.fallback_penalty_ms = fallback_penalty_ms
        self.jitter_ms = jitter_ms
        self.seed = seed

    def _jitter(self, target: str, port: int, run: int, metric: str) -> float:
        if self.jitter_ms <= 0:
            return 0.0
        # stable across processes, unlike hash()
        ident = f"{self.seed}|{self.transport}|{target}|{port}|{run}|{metric}"
        digest = hashlib.blake2b(ident.encode(), digest_size=8).digest()
        rng = random.Random(int.from_bytes(digest, "big"))
        return rng.uniform(0, self.jitter_ms)

    def fetch(self, target: str, port: int, run: int = 0) -> TimingSample:
        path = self.network.paths.get((target, port))
        if path is None or any(
            n.kind is BehaviorKind.DROP_FIREWALL for n in path.interior
        ):
            return TimingSample(self.transport, success=False)
        rtt = 2.0 * path.per_hop_latency_ms * len(path.nodes)
        connect = rtt + self._jitter(target, port, run, "connect")
        if self.transport == "mptcp" and any(
            n.kind is BehaviorKind.STRIP_MIDDLEBOX for n in path.interior
        ):
            connect += self.fallback_penalty_ms
        tls = None
        after_connect = connect
        if port == 443:
            tls = 2.0 * rtt + self._jitter(target, port, run, "tls")
            after_connect = connect + tls
        ttfb = after_connect + rtt + self._jitter(target, port, run, "ttfb")
        total = ttfb + rtt + self._jitter(target, port, run, "total")
        return TimingSample(
            self.transport,
            success=True,
            connect_ms=connect,
            tls_handshake_ms=tls,
            ttfb_ms=ttfb,
            total_ms=total,
        )


class SystemTimingTransport:
    """GET timing over the host network stack.

    transport="mptcp" asks the kernel for an MPTCP socket and raises
    TransportUnavailable where the platform has none, so callers can degrade
    to TCP-only reporting.
    """

    def __init__(self, transport: str = "tcp", timeout_s: float = 10.0):
        self.transport = transport
        self.timeout_s = timeout_s
        if transport == "mptcp":
            try:
                probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM, IPPROTO_MPTCP)
                probe.close()
            except OSError as exc:
                raise TransportUnavailable(f"no MPTCP-capable stack: {exc}") from exc

    def _socket(self) -> socket.socket:
        proto = IPPROTO_MPTCP if self.transport == "mptcp" else 0
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM, proto)
        sock.settimeout(self.timeout_s)
        return sock

    def fetch(self, target: str, port: int, run: int = 0) -> TimingSample:
        start = time.monotonic()
        sock = None
        try:
            sock = self._socket()
            sock.connect((target, port))
            connect_ms = (time.monotonic() - start) * 1000
            tls_ms = None
            stream = sock
            if port == 443:
                tls_start = time.monotonic()
                context = ssl.create_default_context()
                context.check_hostname = False
                context.verify_mode = ssl.CERT_NONE
                stream = context.wrap_socket(sock)
                tls_ms = (time.monotonic() - tls_start) * 1000
            request = f"GET / HTTP/1.0\r\nHost: {target}\r\nConnection: close\r\n\r\n"
            stream.sendall(request.encode())
            first = stream.recv(1)
            ttfb_ms = (time.monotonic() - start) * 1000
            while first and stream.recv(65536):
                pass
            total_ms = (time.monotonic() - start) * 1000
            return TimingSample(
                self.transport, True, connect_ms, tls_ms, ttfb_ms, total_ms
            )
        except OSError:
            return TimingSample(self.transport, success=False)
        finally:
            if sock is not None:
                try:
                    sock.close()
                except OSError:
                    pass


def time_get(
    target: str, port: int, transport: TimingTransport, runs: int = 10
) -> list[TimingSample]:
    """One sample per run; failed runs are kept with success=False."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    return [transport.fetch(target, port, run) for run in range(runs)]


@dataclass
class DeltaReport:
    records: list[DeltaRecord]
    cdf: dict[str, list[tuple[float, float]]]
    fractions: dict[str, tuple[float, float, float]]  # (faster, even, slower)
    paired_runs: int = 0

    def deltas(self, metric: str) -> list[float]:
        return [r.delta_ms for r in self.records if r.metric == metric]


def delta_report(
    mptcp_samples: list[TimingSample],
    tcp_samples: list[TimingSample],
    target: str = "",
    zero_tolerance_ms: float = 1.0,
) -> DeltaReport:
    """Pair runs by index and difference each metric (mptcp - tcp).

    Only pairs where both runs succeeded contribute. Summary fractions
    partition deltas into below -tolerance, within tolerance, and above.
    """
    if len(mptcp_samples) != len(tcp_samples):
        raise PairingMismatch(
            f"{len(mptcp_samples)} mptcp runs vs {len(tcp_samples)} tcp runs"
        )
    records: list[DeltaRecord] = []
    paired = 0
    for mp, tcp in zip(mptcp_samples, tcp_samples):
        if not (mp.success and tcp.success):
            continue
        paired += 1
        for metric in METRICS:
            a, b = mp.metric(metric), tcp.metric(metric)
            if a is None or b is None:
                continue
            records.append(DeltaRecord(target, metric, a - b))
    cdf: dict[str, list[tuple[float, float]]] = {}
    fractions: dict[str, tuple[float, float, float]] = {}
    for metric in METRICS:
        deltas = sorted(r.delta_ms for r in records if r.metric == metric)
        if not deltas:
            continue
        n = len(deltas)
        cdf[metric] = [(d, (i + 1) / n) for i, d in enumerate(deltas)]
        faster = sum(1 for d in deltas if d < -zero_tolerance_ms) / n
        slower = sum(1 for d in deltas if d > zero_tolerance_ms) / n
        fractions[metric] = (faster, 1.0 - faster - slower, slower)
    return DeltaReport(records, cdf, fractions, paired_runs=paired)


def merge_reports(reports: Iterable[DeltaReport], zero_tolerance_ms: float = 1.0) -> DeltaReport:
    """Combine per-target reports into one distribution per metric."""
    records: list[DeltaRecord] = []
    paired = 0
    for report in reports:
        records.extend(report.records)
        paired += report.paired_runs
    cdf: dict[str, list[tuple[float, float]]] = {}
    fractions: dict[str, tuple[float, float, float]] = {}
    for metric in METRICS:
        deltas = sorted(r.delta_ms for r in records if r.metric == metric)
        if not deltas:
            continue
        n = len(deltas)
        cdf[metric] = [(d, (i + 1) / n) for i, d in enumerate(deltas)]
        faster = sum(1 for d in deltas if d < -zero_tolerance_ms) / n
        slower = sum(1 for d in deltas if d > zero_tolerance_ms) / n
        fractions[metric] = (faster, 1.0 - faster - slower, slower)
    return DeltaReport(records, cdf, fractions, paired_runs=paired)


def write_cdf(report: DeltaReport, metric: str, f: IO[str]) -> None:
    """Two-column text: delta_ms, cumulative fraction."""
    for delta, fraction in report.cdf.get(metric, []):
        f.write(f"{delta:.6f},{fraction:.6f}\n")
