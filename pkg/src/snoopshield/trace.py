"""Packet/flow data model, trace CSV interchange, synthetic device traces.

The trace CSV format is line-oriented and bit-exact under round-trip:

    timestamp_us,src_addr,dst_addr,src_port,dst_port,protocol,size,direction,dns_query,src_hw

- ``protocol`` is ``TCP`` or ``UDP``; ``direction`` is ``UP`` or ``DOWN``.
- Optional fields (``dns_query``, ``src_hw``) serialize as empty strings.
- UTF-8, LF line endings, no quoting; fields may not contain commas.
- Records must be sorted by non-decreasing ``timestamp_us``.

All types here are immutable after construction and the operations are pure
functions, so independent traces can be processed concurrently.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field

import numpy as np

TRACE_HEADER = (
    "timestamp_us,src_addr,dst_addr,src_port,dst_port,protocol,size,direction,dns_query,src_hw"
)

_HW_RE = re.compile(r"^[0-9A-Fa-f]{2}(:[0-9A-Fa-f]{2}){5}$")

MICROS = 1_000_000


class TraceFormatError(ValueError):
    """Raised for malformed trace documents; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class Protocol(enum.Enum):
    TCP = "TCP"
    UDP = "UDP"


class Direction(enum.Enum):
    UPLOAD = "UP"
    DOWNLOAD = "DOWN"


class RateScope(enum.Enum):
    COMBINED = "combined"
    UPLOAD_ONLY = "upload_only"
    DOWNLOAD_ONLY = "download_only"


def _check_field_text(name: str, value: str) -> None:
    if not value or "," in value or "\n" in value:
        raise ValueError(f"{name} must be non-empty and free of commas/newlines: {value!r}")


@dataclass(frozen=True)
class PacketRecord:
    """Metadata of one observed packet (timestamps in microseconds)."""

    timestamp: int
    src_addr: str
    dst_addr: str
    src_port: int
    dst_port: int
    protocol: Protocol
    size: int
    direction: Direction
    dns_query: str | None = None
    src_hw: str | None = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"timestamp must be non-negative, got {self.timestamp}")
        for name, port in (("src_port", self.src_port), ("dst_port", self.dst_port)):
            if not 0 <= port <= 65535:
                raise ValueError(f"{name} out of range 0-65535: {port}")
        if self.size < 1:
            raise ValueError(f"size must be >= 1, got {self.size}")
        _check_field_text("src_addr", self.src_addr)
        _check_field_text("dst_addr", self.dst_addr)
        if self.dns_query is not None:
            _check_field_text("dns_query", self.dns_query)
        if self.src_hw is not None and not _HW_RE.match(self.src_hw):
            raise ValueError(f"malformed hardware address: {self.src_hw!r}")


@dataclass(frozen=True)
class FlowKey:
    """The 5-tuple identifying a unidirectional flow (no normalization)."""

    src_addr: str
    dst_addr: str
    src_port: int
    dst_port: int
    protocol: Protocol

    @staticmethod
    def of(record: PacketRecord) -> "FlowKey":
        return FlowKey(record.src_addr, record.dst_addr, record.src_port,
                       record.dst_port, record.protocol)


@dataclass(frozen=True)
class Flow:
    """Packets sharing a 5-tuple within an inactivity timeout."""

    key: FlowKey
    packets: tuple[PacketRecord, ...]

    def __post_init__(self):
        if not self.packets:
            raise ValueError("flow must contain at least one packet")

    @property
    def first_ts(self) -> int:
        return self.packets[0].timestamp

    @property
    def last_ts(self) -> int:
        return self.packets[-1].timestamp

    @property
    def total_bytes(self) -> int:
        return sum(p.size for p in self.packets)


@dataclass(frozen=True, eq=False)
class RateSeries:
    """Bytes per consecutive sample interval for a set of packets.

    Samples are aligned to ``origin_ts`` and cover ``[origin_ts,
    origin_ts + len(samples) * sample_seconds)``. ``samples`` is a
    read-only int64 array.
    """

    sample_seconds: int
    samples: np.ndarray
    origin_ts: int
    scope: RateScope = RateScope.COMBINED

    def __post_init__(self):
        if self.sample_seconds < 1:
            raise ValueError("sample_seconds must be a positive integer")
        arr = np.asarray(self.samples, dtype=np.int64)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def span_seconds(self) -> int:
        return len(self.samples) * self.sample_seconds

    def sample_time_us(self, index: int) -> int:
        """Start time of sample `index` in microseconds."""
        return self.origin_ts + index * self.sample_seconds * MICROS


# ---------------------------------------------------------------------------
# trace CSV parsing / emission
# ---------------------------------------------------------------------------

def parse_trace(text: str) -> list[PacketRecord]:
    """Parse a trace CSV document into records, validating as it goes.

    Raises TraceFormatError naming the offending line for malformed fields,
    timestamp regressions, or out-of-range values.
    """
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TraceFormatError("empty document, expected header")
    if lines[0] != TRACE_HEADER:
        raise TraceFormatError(f"bad header: {lines[0]!r}", line=1)
    records: list[PacketRecord] = []
    prev_ts = -1
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != 10:
            raise TraceFormatError(f"expected 10 fields, got {len(fields)}", line=lineno)
        ts_s, src, dst, sp_s, dp_s, proto_s, size_s, dir_s, dns, hw = fields
        try:
            ts = int(ts_s)
            sp = int(sp_s)
            dp = int(dp_s)
            size = int(size_s)
        except ValueError as exc:
            raise TraceFormatError(f"bad integer field: {exc}", line=lineno) from None
        try:
            proto = Protocol(proto_s)
        except ValueError:
            raise TraceFormatError(f"unknown protocol {proto_s!r}", line=lineno) from None
        try:
            direction = Direction(dir_s)
        except ValueError:
            raise TraceFormatError(f"unknown direction {dir_s!r}", line=lineno) from None
        try:
            record = PacketRecord(
                timestamp=ts, src_addr=src, dst_addr=dst, src_port=sp, dst_port=dp,
                protocol=proto, size=size, direction=direction,
                dns_query=dns or None, src_hw=hw or None,
            )
        except ValueError as exc:
            raise TraceFormatError(str(exc), line=lineno) from None
        _check_dns_invariant(record, lineno)
        if record.timestamp < prev_ts:
            raise TraceFormatError(
                f"timestamp regression: {record.timestamp} after {prev_ts}", line=lineno)
        prev_ts = record.timestamp
        records.append(record)
    return records


def _check_dns_invariant(record: PacketRecord, lineno: int | None = None) -> None:
    if record.dns_query is not None and (
            record.protocol is not Protocol.UDP or record.dst_port != 53):
        raise TraceFormatError(
            "dns_query is only valid on UDP packets to port 53", line=lineno)


def emit_trace(records: list[PacketRecord]) -> str:
    """Serialize records to the trace CSV format (inverse of parse_trace)."""
    out = [TRACE_HEADER]
    prev_ts = -1
    for record in records:
        if record.timestamp < prev_ts:
            raise ValueError("records must be sorted by timestamp before emitting")
        prev_ts = record.timestamp
        _check_dns_invariant(record)
        out.append(
            f"{record.timestamp},{record.src_addr},{record.dst_addr},"
            f"{record.src_port},{record.dst_port},{record.protocol.value},"
            f"{record.size},{record.direction.value},"
            f"{record.dns_query or ''},{record.src_hw or ''}"
        )
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# flows and DNS extraction
# ---------------------------------------------------------------------------

def split_flows(records: list[PacketRecord], timeout: float = 60.0) -> list[Flow]:
    """Partition records into flows: same 5-tuple, inter-packet gap <= timeout.

    A gap strictly greater than `timeout` seconds since the key's previous
    packet starts a new flow. Flows are returned ordered by first packet
    time, then key fields.
    """
    if timeout <= 0:
        raise ValueError("timeout must be positive")
    timeout_us = int(round(timeout * MICROS))
    open_flows: dict[FlowKey, list[PacketRecord]] = {}
    done: list[Flow] = []
    prev_ts = -1
    for record in records:
        if record.timestamp < prev_ts:
            raise ValueError("records must be sorted by timestamp")
        prev_ts = record.timestamp
        key = FlowKey.of(record)
        bucket = open_flows.get(key)
        if bucket is not None and record.timestamp - bucket[-1].timestamp > timeout_us:
            done.append(Flow(key, tuple(bucket)))
            bucket = None
        if bucket is None:
            open_flows[key] = [record]
        else:
            bucket.append(record)
    done.extend(Flow(k, tuple(b)) for k, b in open_flows.items())
    done.sort(key=lambda f: (f.first_ts, f.key.src_addr, f.key.dst_addr,
                             f.key.src_port, f.key.dst_port, f.key.protocol.value))
    return done


def extract_dns(records: list[PacketRecord]) -> dict[str, set[str]]:
    """Collect queried domain names grouped by source address."""
    queries: dict[str, set[str]] = {}
    for record in records:
        if record.dns_query is not None:
            queries.setdefault(record.src_addr, set()).add(record.dns_query)
    return queries


def group_by_source(records: list[PacketRecord]) -> dict[str, list[PacketRecord]]:
    """Group records by src_addr, preserving order (per-device view)."""
    groups: dict[str, list[PacketRecord]] = {}
    for record in records:
        groups.setdefault(record.src_addr, []).append(record)
    return groups


# ---------------------------------------------------------------------------
# rate series
# ---------------------------------------------------------------------------

def rate_series(packets: list[PacketRecord], s: int,
                scope: RateScope = RateScope.COMBINED,
                origin_ts: int | None = None) -> RateSeries:
    """Bin packet bytes into consecutive s-second samples.

    Bins are aligned to the first packet's timestamp (or an explicit
    `origin_ts` at or before it, e.g. to align several devices) and span
    through the last packet, regardless of scope; scope only selects which
    packets contribute bytes. This keeps upload-only and download-only
    series sample-aligned with the combined series.
    """
    if s < 1 or int(s) != s:
        raise ValueError("sample interval s must be a positive integer")
    s = int(s)
    if not packets:
        return RateSeries(s, np.zeros(0, np.int64), origin_ts or 0, scope)
    origin = packets[0].timestamp if origin_ts is None else origin_ts
    if origin > packets[0].timestamp:
        raise ValueError("origin_ts must not be after the first packet")
    times = np.fromiter((p.timestamp for p in packets), np.int64, len(packets))
    if np.any(np.diff(times) < 0):
        raise ValueError("packets must be sorted by timestamp")
    sizes = np.fromiter((p.size for p in packets), np.int64, len(packets))
    if scope is RateScope.UPLOAD_ONLY:
        keep = np.fromiter((p.direction is Direction.UPLOAD for p in packets),
                           bool, len(packets))
    elif scope is RateScope.DOWNLOAD_ONLY:
        keep = np.fromiter((p.direction is Direction.DOWNLOAD for p in packets),
                           bool, len(packets))
    else:
        keep = np.ones(len(packets), bool)
    n = int((times[-1] - origin) // (s * MICROS)) + 1
    idx = (times[keep] - origin) // (s * MICROS)
    samples = np.bincount(idx, weights=sizes[keep], minlength=n).astype(np.int64)
    return RateSeries(s, samples, origin, scope)


# ---------------------------------------------------------------------------
# synthetic device traces
# ---------------------------------------------------------------------------

class ArchetypeKind(enum.Enum):
    SLEEP_MONITOR = "SleepMonitor"
    STREAMING_CAMERA = "StreamingCamera"
    MOTION_CAMERA = "MotionCamera"
    SMART_PLUG = "SmartPlug"
    VOICE_ASSISTANT = "VoiceAssistant"


@dataclass(frozen=True)
class DeviceArchetype:
    """Behavioral parameters of one synthetic device.

    `event_profile` maps an event label to (burst_bytes, burst_seconds);
    a burst of that many bytes is spread over a window centered on the
    event time. `domains` are queried once at trace start.
    """

    name: ArchetypeKind
    baseline_rate: float
    packet_size: int = 256
    event_profile: tuple[tuple[str, int, float], ...] = ()
    noise_seed_salt: int = 0
    domains: tuple[str, ...] = ()
    src_addr: str = "10.0.0.2"
    dst_addr: str = "198.51.100.10"
    src_hw: str | None = None

    def __post_init__(self):
        if self.baseline_rate < 0:
            raise ValueError("baseline_rate must be >= 0")
        if self.packet_size < 1:
            raise ValueError("packet_size must be >= 1")
        for label, burst_bytes, burst_seconds in self.event_profile:
            if burst_bytes <= 0:
                raise ValueError(f"burst bytes must be > 0 for event {label!r}")
            if burst_seconds <= 0:
                raise ValueError(f"burst duration must be > 0 for event {label!r}")

    def profile_for(self, label: str) -> tuple[int, float]:
        for name, burst_bytes, burst_seconds in self.event_profile:
            if name == label:
                return burst_bytes, burst_seconds
        raise KeyError(f"archetype {self.name.value} has no event profile {label!r}")


def synth_device_trace(archetype: DeviceArchetype, duration: float,
                       events: list[tuple[float, str]], seed: int) -> list[PacketRecord]:
    """Generate a deterministic labeled trace for one device.

    Baseline packets approximate `baseline_rate` bytes/s with seeded timing
    jitter; each (time, label) event adds a burst from the archetype's event
    profile centered on the event time; the archetype's domains are queried
    once near t=0. Identical inputs produce byte-identical traces.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    for t, label in events:
        if not 0 <= t < duration:
            raise ValueError(f"event at {t}s outside trace duration [0, {duration})")
        archetype.profile_for(label)  # raises for unknown labels

    rng = np.random.default_rng([seed, archetype.noise_seed_salt])
    times: list[np.ndarray] = []
    sizes: list[np.ndarray] = []
    uploads: list[np.ndarray] = []

    if archetype.baseline_rate > 0:
        interval = archetype.packet_size / archetype.baseline_rate
        n = int(duration / interval)
        base = (np.arange(n) + 0.5) * interval
        jitter = rng.uniform(-0.2, 0.2, n) * interval
        times.append(np.clip(base + jitter, 0.0, duration - 1e-6))
        sizes.append(np.full(n, archetype.packet_size, np.int64))
        uploads.append(rng.random(n) < 0.6)

    for t, label in events:
        burst_bytes, burst_seconds = archetype.profile_for(label)
        count = math.ceil(burst_bytes / archetype.packet_size)
        offsets = (np.arange(count) + 0.5) * (burst_seconds / count)
        burst_times = np.clip(t - burst_seconds / 2 + offsets, 0.0, duration - 1e-6)
        burst_sizes = np.full(count, archetype.packet_size, np.int64)
        burst_sizes[-1] = burst_bytes - (count - 1) * archetype.packet_size
        times.append(burst_times)
        sizes.append(burst_sizes)
        uploads.append(np.ones(count, bool))

    records: list[PacketRecord] = []
    src_port = 40000 + archetype.noise_seed_salt % 20000
    for i, domain in enumerate(archetype.domains):
        records.append(PacketRecord(
            timestamp=int(round((0.25 + 0.5 * i) * MICROS)),
            src_addr=archetype.src_addr, dst_addr=archetype.dst_addr,
            src_port=src_port, dst_port=53, protocol=Protocol.UDP,
            size=60, direction=Direction.UPLOAD, dns_query=domain,
            src_hw=archetype.src_hw,
        ))

    if times:
        all_times = np.rint(np.concatenate(times) * MICROS).astype(np.int64)
        all_sizes = np.concatenate(sizes)
        all_up = np.concatenate(uploads)
        order = np.argsort(all_times, kind="stable")
        for i in order:
            records.append(PacketRecord(
                timestamp=int(all_times[i]),
                src_addr=archetype.src_addr, dst_addr=archetype.dst_addr,
                src_port=src_port, dst_port=443, protocol=Protocol.TCP,
                size=int(all_sizes[i]),
                direction=Direction.UPLOAD if all_up[i] else Direction.DOWNLOAD,
                src_hw=archetype.src_hw,
            ))

    records.sort(key=lambda r: r.timestamp)
    return records
