"""Activity inference from rate series: spike detection against a rolling
median baseline, camera mode segmentation, device-type activity mapping,
and VPN-style aggregation of multiple device series into one tunnel trace.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import IO

import numpy as np

from ._kernels import rolling_baseline
from .trace import MICROS, ArchetypeKind, RateSeries


class ActivityKind(enum.Enum):
    TOGGLE = "Toggle"
    INTERACTION = "Interaction"
    SLEEP_TRANSITION = "SleepTransition"
    MOTION_DETECTED = "MotionDetected"
    STREAM_START = "StreamStart"
    STREAM_STOP = "StreamStop"


class CameraMode(enum.Enum):
    LIVE_STREAMING = "LiveStreaming"
    MOTION_DETECTION = "MotionDetection"


@dataclass(frozen=True)
class ActivityEvent:
    time_us: int
    device_label: str
    kind: ActivityKind
    magnitude: float

    def __post_init__(self):
        if self.magnitude <= 0:
            raise ValueError("activity magnitude must be > 0")


@dataclass(frozen=True)
class EventDetectorConfig:
    """Thresholds for rate-spike event detection.

    A sample spikes when it exceeds `spike_multiplier` times the rolling
    median of the preceding `baseline_window` samples; spiking samples
    within `min_gap` seconds of each other merge into one event.
    `stream_rate_threshold` (bytes/s) separates camera live streaming from
    motion-detection idling.
    """

    baseline_window: int = 30
    spike_multiplier: float = 5.0
    min_gap: float = 30.0
    stream_rate_threshold: float = 90000.0  # 10x the motion-camera baseline rate

    def __post_init__(self):
        if self.baseline_window < 3:
            raise ValueError("baseline_window must be >= 3")
        if self.spike_multiplier <= 1:
            raise ValueError("spike_multiplier must be > 1")


@dataclass(frozen=True)
class ModeInterval:
    """A maximal run of samples in one camera mode.

    `peak_sample` is the largest sample (bytes) observed in the interval,
    used to size the magnitude of stream-edge activities.
    """

    start_us: int
    end_us: int
    mode: CameraMode
    peak_sample: int


@dataclass(frozen=True)
class TunnelTrace:
    """Aggregate of several device series as seen outside a VPN tunnel."""

    member_devices: tuple[str, ...]
    aggregate: RateSeries


def detect_events(series: RateSeries, cfg: EventDetectorConfig) -> list[tuple[int, float]]:
    """Find rate spikes; returns (time_us, magnitude) per merged event.

    The event is timed at the peak sample of its spiking run and the
    magnitude is the peak's excess over the rolling-median baseline.
    Detection is invariant under positive scaling of the series.
    """
    if len(series.samples) <= cfg.baseline_window:
        raise ValueError(
            f"series of {len(series.samples)} samples is too short for a "
            f"baseline window of {cfg.baseline_window}")
    x = series.samples.astype(np.float64)
    baseline = rolling_baseline(x, cfg.baseline_window)
    spiking = np.flatnonzero(x > cfg.spike_multiplier * baseline)
    if spiking.size == 0:
        return []
    gap_samples = max(1, int(round(cfg.min_gap / series.sample_seconds)))
    breaks = np.flatnonzero(np.diff(spiking) > gap_samples) + 1
    events = []
    for run in np.split(spiking, breaks):
        peak = run[np.argmax(x[run])]
        events.append((series.sample_time_us(int(peak)), float(x[peak] - baseline[peak])))
    return events


def classify_camera_mode(series: RateSeries, cfg: EventDetectorConfig) -> list[ModeInterval]:
    """Segment a camera series into live-streaming / motion-detection runs.

    A sample is streaming when its byte rate strictly exceeds
    `stream_rate_threshold`; equal-mode runs merge into intervals.
    """
    if len(series.samples) == 0:
        return []
    rates = series.samples / series.sample_seconds
    streaming = rates > cfg.stream_rate_threshold
    edges = np.flatnonzero(np.diff(streaming.astype(np.int8))) + 1
    bounds = np.concatenate(([0], edges, [len(streaming)]))
    intervals = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        mode = CameraMode.LIVE_STREAMING if streaming[lo] else CameraMode.MOTION_DETECTION
        intervals.append(ModeInterval(
            start_us=series.sample_time_us(int(lo)),
            end_us=series.sample_time_us(int(hi)),
            mode=mode,
            peak_sample=int(series.samples[lo:hi].max()),
        ))
    return intervals


_DIRECT_KINDS = {
    ArchetypeKind.SMART_PLUG: ActivityKind.TOGGLE,
    ArchetypeKind.VOICE_ASSISTANT: ActivityKind.INTERACTION,
    ArchetypeKind.SLEEP_MONITOR: ActivityKind.SLEEP_TRANSITION,
}

_CAMERA_KINDS = (ArchetypeKind.STREAMING_CAMERA, ArchetypeKind.MOTION_CAMERA)


def infer_activities(device_label: str, device_type: ArchetypeKind,
                     events: list[tuple[int, float]],
                     mode_intervals: list[ModeInterval] | None = None) -> list[ActivityEvent]:
    """Map detected rate events to user activities for a known device type.

    Plugs, assistants, and sleep monitors map events directly to Toggle /
    Interaction / SleepTransition. Cameras report MotionDetected only for
    events inside motion-detection intervals (streaming subsumes spikes)
    plus StreamStart/StreamStop at live-streaming interval edges.
    """
    if device_type in _DIRECT_KINDS:
        kind = _DIRECT_KINDS[device_type]
        activities = [ActivityEvent(t, device_label, kind, mag) for t, mag in events]
    elif device_type in _CAMERA_KINDS:
        intervals = mode_intervals or []
        live = [iv for iv in intervals if iv.mode is CameraMode.LIVE_STREAMING]
        activities = []
        for t, mag in events:
            if any(iv.start_us <= t < iv.end_us for iv in live):
                continue
            activities.append(ActivityEvent(t, device_label, ActivityKind.MOTION_DETECTED, mag))
        for iv in live:
            edge_mag = max(float(iv.peak_sample), 1.0)
            activities.append(ActivityEvent(iv.start_us, device_label,
                                            ActivityKind.STREAM_START, edge_mag))
            activities.append(ActivityEvent(iv.end_us, device_label,
                                            ActivityKind.STREAM_STOP, edge_mag))
    else:
        raise ValueError(f"unknown device type: {device_type!r}")
    activities.sort(key=lambda a: (a.time_us, a.kind.value))
    return activities


def aggregate_tunnel(members: list[tuple[str, RateSeries]]) -> TunnelTrace:
    """Sum member device series into the single flow an observer would see.

    Members must share the sample interval, origin, and scope; shorter
    series are zero-padded to the longest. Labels are retained only as
    evaluation ground truth.
    """
    if not members:
        raise ValueError("tunnel needs at least one member device")
    first = members[0][1]
    for label, series in members[1:]:
        if (series.sample_seconds != first.sample_seconds
                or series.origin_ts != first.origin_ts
                or series.scope is not first.scope):
            raise ValueError(f"member {label!r} has mismatched sampling or alignment")
    length = max(len(series.samples) for _, series in members)
    total = np.zeros(length, np.int64)
    for _, series in members:
        total[: len(series.samples)] += series.samples
    return TunnelTrace(
        member_devices=tuple(label for label, _ in members),
        aggregate=RateSeries(first.sample_seconds, total, first.origin_ts, first.scope),
    )


def write_activities(activities: list[ActivityEvent], fp: IO[str]) -> None:
    """Emit activities as JSON lines: {time_us, device, kind, magnitude}."""
    for activity in activities:
        fp.write(json.dumps({
            "time_us": activity.time_us,
            "device": activity.device_label,
            "kind": activity.kind.value,
            "magnitude": round(activity.magnitude, 3),
        }, sort_keys=True))
        fp.write("\n")
