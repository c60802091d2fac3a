"""Independent-link-padding shaper: cell padding/fragmentation, a two-class
priority schedule (device cells before cover cells), constant-interval (CIT)
and variable-interval (VIT) departure timing, and overhead/latency reports.

All simulation time is an integer microsecond grid so runs are bit-exact
across platforms. Each schedule run is single-threaded and deterministic;
independent runs share no state and may execute concurrently.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import IO, Iterator

import numpy as np

from ._kernels import assign_slots
from .trace import MICROS, Direction, PacketRecord, Protocol, RateScope, RateSeries

SECONDS_PER_MONTH = 86400 * 30


class Discipline(enum.Enum):
    CIT = "cit"
    VIT = "vit"


class CellOrigin(enum.Enum):
    DEVICE = "device"
    COVER = "cover"


@dataclass(frozen=True)
class ShapingConfig:
    """Shaper parameters.

    CIT sends one cell every ``cell_size / rate`` seconds; VIT draws each
    inter-departure interval from Normal(vit_mean, vit_stddev), clamped
    below at ``vit_mean / 10`` so intervals stay positive (negligible at
    the default stddev of one percent of the mean). ``direction`` records
    which traffic leg the schedule shapes.
    """

    rate: float | None = None
    cell_size: int = 512
    discipline: Discipline = Discipline.CIT
    vit_mean: float = 1.0
    vit_stddev: float = 0.010
    seed: int = 0
    direction: Direction = Direction.UPLOAD

    def __post_init__(self):
        if self.cell_size < 1:
            raise ValueError("cell_size must be >= 1")
        if self.discipline is Discipline.CIT:
            if self.rate is None or self.rate <= 0:
                raise ValueError("CIT shaping requires rate > 0 bytes/s")
            if self.cell_size * MICROS / self.rate < 1:
                raise ValueError("rate too high: departure interval under one microsecond")
        else:
            if self.vit_stddev < 0:
                raise ValueError("vit_stddev must be >= 0")
            if not self.vit_mean > 4 * self.vit_stddev:
                raise ValueError("vit_mean must exceed 4 * vit_stddev")

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "cell_size": self.cell_size,
            "discipline": self.discipline.value,
            "vit_mean": self.vit_mean,
            "vit_stddev": self.vit_stddev,
            "seed": self.seed,
            "direction": self.direction.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ShapingConfig":
        return cls(
            rate=data.get("rate"),
            cell_size=int(data.get("cell_size", 512)),
            discipline=Discipline(data.get("discipline", "cit")),
            vit_mean=float(data.get("vit_mean", 1.0)),
            vit_stddev=float(data.get("vit_stddev", 0.010)),
            seed=int(data.get("seed", 0)),
            direction=Direction(data.get("direction", "UP")),
        )

    def label(self) -> str:
        if self.discipline is Discipline.CIT:
            return f"cit@{self.rate:g}B/s"
        return f"vit@{self.vit_mean:g}s"


@dataclass(frozen=True)
class Cell:
    """One fixed-size transmission unit; cover cells carry no payload."""

    arrival: int
    origin: CellOrigin
    payload_bytes: int
    source_packet: int | None = None


def cellify(packets: list[PacketRecord], cell_size: int) -> list[Cell]:
    """Fragment/pad packets into cells sharing the packet's arrival time.

    A packet of b bytes becomes ceil(b / cell_size) cells; every cell but
    the last carries a full payload, and the on-wire shortfall of the last
    one is padding overhead.
    """
    if cell_size < 1:
        raise ValueError("cell_size must be >= 1")
    cells: list[Cell] = []
    prev_ts = -1
    for index, packet in enumerate(packets):
        if packet.timestamp < prev_ts:
            raise ValueError("packets must be sorted by timestamp")
        prev_ts = packet.timestamp
        count = math.ceil(packet.size / cell_size)
        for i in range(count - 1):
            cells.append(Cell(packet.timestamp, CellOrigin.DEVICE, cell_size, index))
        cells.append(Cell(packet.timestamp, CellOrigin.DEVICE,
                          packet.size - (count - 1) * cell_size, index))
    return cells


@dataclass(frozen=True, eq=False)
class ShapedSchedule:
    """Per-opportunity departure log of one shaper run (array-backed).

    ``origin`` is 0 for device cells and 1 for cover cells; ``arrival_us``
    and ``source_packet`` are -1 for cover cells. ``undelivered_cells``
    counts device cells still queued when the horizon ended.
    """

    config: ShapingConfig
    departure_us: np.ndarray
    origin: np.ndarray
    payload_bytes: np.ndarray
    arrival_us: np.ndarray
    source_packet: np.ndarray
    undelivered_cells: int = 0

    def __len__(self) -> int:
        return len(self.departure_us)

    @property
    def device_mask(self) -> np.ndarray:
        return self.origin == 0

    def departures(self) -> Iterator[tuple[int, Cell]]:
        """Iterate (departure time, Cell); intended for small schedules."""
        for i in range(len(self.departure_us)):
            if self.origin[i] == 0:
                source = int(self.source_packet[i])
                cell = Cell(int(self.arrival_us[i]), CellOrigin.DEVICE,
                            int(self.payload_bytes[i]),
                            source if source >= 0 else None)
            else:
                cell = Cell(int(self.departure_us[i]), CellOrigin.COVER, 0)
            yield int(self.departure_us[i]), cell

    def write_csv(self, fp: IO[str]) -> None:
        """Flat export for plotting: departure_us,origin,payload_bytes."""
        fp.write("departure_us,origin,payload_bytes\n")
        origins = np.where(self.origin == 0, "device", "cover")
        for t, origin, payload in zip(self.departure_us, origins, self.payload_bytes):
            fp.write(f"{t},{origin},{payload}\n")

    def to_json(self) -> str:
        return json.dumps({
            "config": self.config.to_dict(),
            "undelivered_cells": self.undelivered_cells,
            "departures": [
                {
                    "departure_us": int(self.departure_us[i]),
                    "origin": "device" if self.origin[i] == 0 else "cover",
                    "payload_bytes": int(self.payload_bytes[i]),
                    "arrival_us": int(self.arrival_us[i]),
                    "source_packet": int(self.source_packet[i]),
                }
                for i in range(len(self.departure_us))
            ],
        }, sort_keys=True)


def cit_slot_times(horizon_us: int, cell_size: int, rate: float) -> np.ndarray:
    """Departure opportunities at t=0 and every cell_size/rate seconds after,
    rounded to the microsecond grid, through the horizon inclusive."""
    step_us = cell_size * MICROS / rate
    count = int(horizon_us / step_us) + 2
    times = np.rint(np.arange(count, dtype=np.float64) * step_us).astype(np.int64)
    return times[times <= horizon_us]


def vit_slot_times(horizon_us: int, mean: float, stddev: float, seed: int) -> np.ndarray:
    """Departure opportunities with seeded Normal(mean, stddev) intervals,
    clamped below at mean/10, through the horizon inclusive."""
    rng = np.random.default_rng(seed)
    floor_us = max(1, int(round(mean / 10 * MICROS)))
    chunk = max(int(horizon_us / (mean * MICROS) * 1.01) + 16, 1024)
    pieces = [np.zeros(1, np.int64)]
    total = 0
    while total <= horizon_us:
        intervals = np.rint(rng.normal(mean, stddev, chunk) * MICROS).astype(np.int64)
        np.maximum(intervals, floor_us, out=intervals)
        pieces.append(total + np.cumsum(intervals))
        total = int(pieces[-1][-1])
    times = np.concatenate(pieces)
    return times[times <= horizon_us]


def _slot_times(cfg: ShapingConfig, horizon_us: int) -> np.ndarray:
    if cfg.discipline is Discipline.CIT:
        return cit_slot_times(horizon_us, cfg.cell_size, cfg.rate)
    return vit_slot_times(horizon_us, cfg.vit_mean, cfg.vit_stddev, cfg.seed)


def shape(cells: list[Cell], cfg: ShapingConfig, horizon: float) -> ShapedSchedule:
    """Run the shaper over a sorted cell stream.

    Exactly one cell departs at every opportunity within the horizon: the
    earliest-arrived queued device cell if any, else a cover cell. The
    device queue is unbounded, so delay (not loss) is the cost; the
    visible (time, wire size) sequence depends only on the config and
    horizon, never on the workload.
    """
    horizon_us = int(round(horizon * MICROS))
    arrivals = np.fromiter((c.arrival for c in cells), np.int64, len(cells))
    if len(arrivals) and np.any(np.diff(arrivals) < 0):
        raise ValueError("cells must be sorted by arrival time")
    if len(arrivals) and horizon_us < arrivals[-1]:
        raise ValueError("horizon must reach the last cell arrival")

    slots = _slot_times(cfg, horizon_us)
    assigned = assign_slots(arrivals, slots)

    n_slots = len(slots)
    origin = np.ones(n_slots, np.uint8)
    payload = np.zeros(n_slots, np.int64)
    arrival = np.full(n_slots, -1, np.int64)
    source = np.full(n_slots, -1, np.int64)

    delivered = assigned >= 0
    taken = assigned[delivered]
    origin[taken] = 0
    payload[taken] = np.fromiter((c.payload_bytes for c in cells), np.int64,
                                 len(cells))[delivered]
    arrival[taken] = arrivals[delivered]
    source[taken] = np.fromiter(
        (c.source_packet if c.source_packet is not None else -1 for c in cells),
        np.int64, len(cells))[delivered]

    return ShapedSchedule(
        config=cfg, departure_us=slots, origin=origin, payload_bytes=payload,
        arrival_us=arrival, source_packet=source,
        undelivered_cells=int(np.count_nonzero(~delivered)),
    )


def shape_home(device_cell_streams: list[list[Cell]], cfg: ShapingConfig,
               horizon: float) -> ShapedSchedule:
    """Shape the merged traffic of several devices through one schedule."""
    merged = [cell for stream in device_cell_streams for cell in stream]
    merged.sort(key=lambda c: c.arrival)
    return shape(merged, cfg, horizon)


# ---------------------------------------------------------------------------
# cost reporting
# ---------------------------------------------------------------------------

def gb_per_month(rate_bytes_per_s: float) -> float:
    """Project a constant byte rate to gigabytes (1e9 bytes) per 30 days."""
    return rate_bytes_per_s * SECONDS_PER_MONTH / 1e9


def cost_context(rate: float, upload_capacity: float,
                 data_cap: float) -> tuple[float, float]:
    """Relate an overhead rate to link capacity and a monthly data cap.

    Returns (fraction of upload capacity, fraction of the monthly cap).
    """
    if upload_capacity <= 0 or data_cap <= 0:
        raise ValueError("capacity and data cap must be positive")
    if rate == 0:
        return 0.0, 0.0
    return rate / upload_capacity, rate * SECONDS_PER_MONTH / data_cap


@dataclass(frozen=True)
class OverheadReport:
    """Bandwidth and latency cost of one shaped schedule.

    Latencies are per device cell; the per-packet figures treat a packet
    as delivered when its last cell departs. All latency fields are None
    when the schedule carried no device cells.
    """

    device_bytes: int
    cover_bytes: int
    padding_bytes: int
    avg_latency: float | None
    max_latency: float | None
    packet_avg_latency: float | None
    packet_max_latency: float | None
    overhead_rate: float
    gb_per_month: float
    undelivered_cells: int = 0

    def to_dict(self) -> dict:
        return {
            "device_bytes": self.device_bytes,
            "cover_bytes": self.cover_bytes,
            "padding_bytes": self.padding_bytes,
            "avg_latency_s": _round6(self.avg_latency),
            "max_latency_s": _round6(self.max_latency),
            "packet_avg_latency_s": _round6(self.packet_avg_latency),
            "packet_max_latency_s": _round6(self.packet_max_latency),
            "overhead_rate_bytes_per_s": round(self.overhead_rate, 6),
            "gb_per_month": round(self.gb_per_month, 6),
            "undelivered_cells": self.undelivered_cells,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _round6(value: float | None) -> float | None:
    return None if value is None else round(value, 6)


def overhead_report(schedule: ShapedSchedule, span: float) -> OverheadReport:
    """Summarize schedule cost over a span of seconds."""
    if span <= 0:
        raise ValueError("span must be positive")
    cell_size = schedule.config.cell_size
    device = schedule.device_mask
    device_bytes = int(schedule.payload_bytes[device].sum())
    cover_bytes = int(np.count_nonzero(~device)) * cell_size
    padding_bytes = int(np.count_nonzero(device)) * cell_size - device_bytes

    if np.any(device):
        waits = (schedule.departure_us[device] - schedule.arrival_us[device]) / MICROS
        avg_latency = float(waits.mean())
        max_latency = float(waits.max())
        sources = schedule.source_packet[device]
        known = sources >= 0
        if np.any(known):
            # cells of one packet share an arrival and depart FIFO, so the
            # packet completes at its last cell's departure
            last = np.flatnonzero(np.diff(sources[known]) != 0)
            ends = np.concatenate((last, [np.count_nonzero(known) - 1]))
            pkt_waits = waits[known][ends]
            packet_avg = float(pkt_waits.mean())
            packet_max = float(pkt_waits.max())
        else:
            packet_avg = packet_max = None
    else:
        avg_latency = max_latency = packet_avg = packet_max = None

    rate = (cover_bytes + padding_bytes) / span
    return OverheadReport(
        device_bytes=device_bytes, cover_bytes=cover_bytes, padding_bytes=padding_bytes,
        avg_latency=avg_latency, max_latency=max_latency,
        packet_avg_latency=packet_avg, packet_max_latency=packet_max,
        overhead_rate=rate, gb_per_month=gb_per_month(rate),
        undelivered_cells=schedule.undelivered_cells,
    )


def schedule_to_records(schedule: ShapedSchedule, src_addr: str, dst_addr: str,
                        src_port: int = 40000, dst_port: int = 443) -> list[PacketRecord]:
    """Render a schedule as the wire trace an observer would capture:
    one cell_size packet per departure, device and cover alike."""
    cfg = schedule.config
    return [
        PacketRecord(
            timestamp=int(t), src_addr=src_addr, dst_addr=dst_addr,
            src_port=src_port, dst_port=dst_port, protocol=Protocol.TCP,
            size=cfg.cell_size, direction=cfg.direction,
        )
        for t in schedule.departure_us
    ]


def wire_rate_series(schedule: ShapedSchedule, s: int) -> RateSeries:
    """Bin the schedule's on-wire bytes (cell_size per departure) into
    s-second samples, as a passive observer of the shaped link would."""
    if s < 1:
        raise ValueError("sample interval s must be a positive integer")
    times = schedule.departure_us
    origin = int(times[0])
    idx = (times - origin) // (s * MICROS)
    n = int(idx[-1]) + 1
    samples = np.bincount(idx, minlength=n).astype(np.int64) * schedule.config.cell_size
    return RateSeries(s, samples, origin, RateScope.COMBINED)
