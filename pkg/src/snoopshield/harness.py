"""End-to-end evaluation pipeline: generate a labeled synthetic corpus, run
the identification/inference attack against raw, tunneled, and shaped
traffic, sweep shaping configurations, and assemble a reproducible JSON
report. The command-line front end lives in cli.py.

All randomness derives from the experiment seed; per-device generators mix
in each device's noise salt, so any sub-result can be regenerated alone.
Reports embed the spec hash, seed, and tool version, and serialize with
sorted keys so equal inputs produce byte-identical output.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from . import __version__
from .identify import (
    DnsFingerprintDb,
    WindowFeature,
    dns_identify,
    load_default_dns_db,
    stratified_cv,
    window_features,
)
from .infer import (
    ActivityEvent,
    ActivityKind,
    EventDetectorConfig,
    aggregate_tunnel,
    classify_camera_mode,
    detect_events,
    infer_activities,
)
from .shield import (
    ShapingConfig,
    cellify,
    overhead_report,
    shape,
    shape_home,
    wire_rate_series,
)
from .trace import (
    MICROS,
    ArchetypeKind,
    DeviceArchetype,
    Direction,
    PacketRecord,
    RateSeries,
    emit_trace,
    extract_dns,
    parse_trace,
    rate_series,
    synth_device_trace,
)

SCHEMA_VERSION = 1

_CAMERA_KINDS = (ArchetypeKind.STREAMING_CAMERA, ArchetypeKind.MOTION_CAMERA)

_DIRECT_ACTIVITY = {
    ArchetypeKind.SMART_PLUG: ActivityKind.TOGGLE,
    ArchetypeKind.VOICE_ASSISTANT: ActivityKind.INTERACTION,
    ArchetypeKind.SLEEP_MONITOR: ActivityKind.SLEEP_TRANSITION,
}


class SpecError(ValueError):
    """Invalid experiment specification."""


def load_archetype_defaults() -> dict[str, dict]:
    text = resources.files("snoopshield.data").joinpath("archetypes.json").read_text()
    return json.loads(text)["kinds"]


@dataclass(frozen=True)
class DeviceSpec:
    label: str
    archetype: DeviceArchetype
    events: tuple[tuple[float, str], ...]


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    seed: int
    duration_s: float
    devices: tuple[DeviceSpec, ...]
    sample_grid: tuple[int, ...] = (1, 5, 10)
    window_grid: tuple[int, ...] = (60, 300, 600)
    k: int = 3
    folds: int = 10
    shaping: tuple[ShapingConfig, ...] = ()
    detector: EventDetectorConfig = EventDetectorConfig()
    horizon_slack_s: float = 600.0
    match_tolerance_s: float = 15.0

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "devices": [
                {
                    "label": d.label,
                    "archetype": d.archetype.name.value,
                    "baseline_rate": d.archetype.baseline_rate,
                    "packet_size": d.archetype.packet_size,
                    "event_profile": [list(p) for p in d.archetype.event_profile],
                    "noise_seed_salt": d.archetype.noise_seed_salt,
                    "domains": list(d.archetype.domains),
                    "src_addr": d.archetype.src_addr,
                    "dst_addr": d.archetype.dst_addr,
                    "src_hw": d.archetype.src_hw,
                    "events": [[t, label] for t, label in d.events],
                }
                for d in self.devices
            ],
            "attack": {
                "sample_seconds": list(self.sample_grid),
                "window_seconds": list(self.window_grid),
                "k": self.k,
                "folds": self.folds,
            },
            "detector": {
                "baseline_window": self.detector.baseline_window,
                "spike_multiplier": self.detector.spike_multiplier,
                "min_gap": self.detector.min_gap,
                "stream_rate_threshold": self.detector.stream_rate_threshold,
            },
            "shaping": [cfg.to_dict() for cfg in self.shaping],
            "horizon_slack_s": self.horizon_slack_s,
            "match_tolerance_s": self.match_tolerance_s,
        }

    def sha256(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentSpec":
        return replace(self, seed=seed)

    @property
    def horizon_s(self) -> float:
        return self.duration_s + self.horizon_slack_s

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        try:
            return cls._parse(data)
        except SpecError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"invalid experiment spec: {exc}") from exc

    @classmethod
    def _parse(cls, data: dict) -> "ExperimentSpec":
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise SpecError(f"unsupported spec schema_version {version}")
        duration = float(data["duration_s"])
        if duration <= 0:
            raise SpecError("duration_s must be positive")
        raw_devices = data.get("devices", [])
        if not raw_devices:
            raise SpecError("device roster is empty")

        defaults = load_archetype_defaults()
        dns_db = load_default_dns_db()
        devices = []
        seen_labels: set[str] = set()
        for entry in raw_devices:
            label = entry["label"]
            if label in seen_labels:
                raise SpecError(f"duplicate device label {label!r}")
            seen_labels.add(label)
            kind_name = entry["archetype"]
            try:
                kind = ArchetypeKind(kind_name)
            except ValueError:
                raise SpecError(f"unknown archetype {kind_name!r}") from None
            base = defaults.get(kind_name, {})
            profile = entry.get("event_profile", base.get("event_profile", []))
            domains = entry.get("domains")
            if domains is None:
                domains = sorted(dns_db.entries.get(label, ()))
            archetype = DeviceArchetype(
                name=kind,
                baseline_rate=float(entry.get("baseline_rate", base.get("baseline_rate", 0))),
                packet_size=int(entry.get("packet_size", base.get("packet_size", 256))),
                event_profile=tuple((str(p[0]), int(p[1]), float(p[2])) for p in profile),
                noise_seed_salt=int(entry.get("noise_seed_salt", 0)),
                domains=tuple(domains),
                src_addr=entry.get("src_addr", "10.0.0.2"),
                dst_addr=entry.get("dst_addr", "198.51.100.10"),
                src_hw=entry.get("src_hw"),
            )
            events = tuple((float(t), str(name)) for t, name in entry.get("events", []))
            for t, name in events:
                if not 0 <= t < duration:
                    raise SpecError(
                        f"device {label!r}: event at {t}s outside [0, {duration})")
                archetype.profile_for(name)
            devices.append(DeviceSpec(label, archetype, events))

        attack = data.get("attack", {})
        sample_grid = tuple(int(s) for s in attack.get("sample_seconds", (1, 5, 10)))
        window_grid = tuple(int(w) for w in attack.get("window_seconds", (60, 300, 600)))
        if not sample_grid or not window_grid:
            raise SpecError("attack grids must be non-empty")
        for w in window_grid:
            for s in sample_grid:
                if w % s != 0 or w // s < 2:
                    raise SpecError(f"window {w}s incompatible with sample interval {s}s")
        if duration <= max(window_grid):
            raise SpecError("duration_s must exceed the largest analysis window")
        k = int(attack.get("k", 3))
        folds = int(attack.get("folds", 10))
        if k < 1 or k % 2 == 0:
            raise SpecError("k must be odd and >= 1")
        if folds < 2:
            raise SpecError("folds must be >= 2")

        det = data.get("detector", {})
        detector = EventDetectorConfig(
            baseline_window=int(det.get("baseline_window", 30)),
            spike_multiplier=float(det.get("spike_multiplier", 5.0)),
            min_gap=float(det.get("min_gap", 30.0)),
            stream_rate_threshold=float(det.get("stream_rate_threshold", 90000.0)),
        )
        shaping = tuple(ShapingConfig.from_dict(cfg) for cfg in data.get("shaping", []))
        return cls(
            name=str(data.get("name", "experiment")),
            seed=int(data.get("seed", 0)),
            duration_s=duration,
            devices=tuple(devices),
            sample_grid=sample_grid,
            window_grid=window_grid,
            k=k,
            folds=folds,
            shaping=shaping,
            detector=detector,
            horizon_slack_s=float(data.get("horizon_slack_s", 600.0)),
            match_tolerance_s=float(data.get("match_tolerance_s", 15.0)),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentSpec":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SpecError(f"spec is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def default(cls) -> "ExperimentSpec":
        text = resources.files("snoopshield.data").joinpath(
            "default_experiment.json").read_text()
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# corpus generation and ground truth
# ---------------------------------------------------------------------------

def generate(spec: ExperimentSpec) -> dict[str, list[PacketRecord]]:
    """Synthesize the per-device traces of an experiment, roster order."""
    return {
        device.label: synth_device_trace(
            device.archetype, spec.duration_s, list(device.events), spec.seed)
        for device in spec.devices
    }


def expected_activities(device: DeviceSpec,
                        detector: EventDetectorConfig) -> list[tuple[int, ActivityKind]]:
    """Activities an ideal attacker should recover for planted events."""
    out: list[tuple[int, ActivityKind]] = []
    kind = device.archetype.name
    for t, label in device.events:
        burst_bytes, burst_seconds = device.archetype.profile_for(label)
        t_us = int(round(t * MICROS))
        if kind in _DIRECT_ACTIVITY:
            out.append((t_us, _DIRECT_ACTIVITY[kind]))
        elif kind in _CAMERA_KINDS:
            burst_rate = burst_bytes / burst_seconds
            if burst_rate > detector.stream_rate_threshold:
                half = int(round(burst_seconds / 2 * MICROS))
                out.append((t_us - half, ActivityKind.STREAM_START))
                out.append((t_us + half, ActivityKind.STREAM_STOP))
            else:
                out.append((t_us, ActivityKind.MOTION_DETECTED))
    out.sort()
    return out


def ground_truth(spec: ExperimentSpec) -> dict:
    """JSON-able record of what was planted, for scoring attack output."""
    devices = []
    for device in spec.devices:
        spans = []
        for t, label in device.events:
            _, burst_seconds = device.archetype.profile_for(label)
            spans.append([
                int(round((t - burst_seconds / 2) * MICROS)),
                int(round((t + burst_seconds / 2) * MICROS)),
            ])
        devices.append({
            "label": device.label,
            "archetype": device.archetype.name.value,
            "src_addr": device.archetype.src_addr,
            "baseline_rate": device.archetype.baseline_rate,
            "events": [[t, label] for t, label in device.events],
            "expected_activities": [
                {"time_us": t_us, "kind": kind.value}
                for t_us, kind in expected_activities(device, spec.detector)
            ],
            "burst_spans_us": spans,
        })
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": spec.seed,
        "duration_s": spec.duration_s,
        "devices": devices,
    }


def slugify(label: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", label.lower()).strip("_")


def write_corpus(spec: ExperimentSpec, outdir: str | Path) -> list[Path]:
    """Write one trace CSV per device plus ground_truth.json; returns paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    corpus = generate(spec)
    paths = []
    for label, records in corpus.items():
        path = outdir / f"{slugify(label)}.csv"
        path.write_text(emit_trace(records))
        paths.append(path)
    truth_path = outdir / "ground_truth.json"
    truth_path.write_text(dump_json(ground_truth(spec)))
    paths.append(truth_path)
    return paths


def read_corpus(directory: str | Path) -> tuple[dict[str, list[PacketRecord]], dict | None]:
    """Load all trace CSVs in a directory; labels come from ground_truth.json
    when present (matched by filename slug), else from the filename stem."""
    directory = Path(directory)
    truth = None
    truth_path = directory / "ground_truth.json"
    if truth_path.exists():
        truth = json.loads(truth_path.read_text())
    slug_to_label = {}
    if truth:
        slug_to_label = {slugify(d["label"]): d["label"] for d in truth["devices"]}
    corpus = {}
    for path in sorted(directory.glob("*.csv")):
        label = slug_to_label.get(path.stem, path.stem)
        corpus[label] = parse_trace(path.read_text())
    if not corpus:
        raise SpecError(f"no trace CSV files found in {directory}")
    return corpus, truth


def dump_json(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# attack pipeline
# ---------------------------------------------------------------------------

def fingerprint_grid(series_for, labels: list[str], sample_grid, window_grid,
                     k: int, folds: int, cv_seed: int = 0) -> dict:
    """Cross-validated rate-fingerprint accuracy over an (s, w) grid.

    `series_for(label, s)` supplies the byte-rate series to featurize. Grid
    cells that cannot be evaluated (too few windows per class) report null.
    """
    grid: dict[str, float | None] = {}
    best = None
    prior = None
    for s in sample_grid:
        series = {label: series_for(label, s) for label in labels}
        for w in window_grid:
            key = f"s={s},w={w}"
            try:
                features: list[WindowFeature] = []
                for label in labels:
                    features.extend(window_features(series[label], w, label))
                accuracy = stratified_cv(features, k_neighbors=k, folds=folds, seed=cv_seed)
            except ValueError:
                grid[key] = None
                continue
            grid[key] = round(accuracy, 6)
            if best is None or accuracy > best["accuracy"]:
                counts: dict[str, int] = {}
                for f in features:
                    counts[f.device_label] = counts.get(f.device_label, 0) + 1
                prior = max(counts.values()) / len(features)
                best = {"sample_seconds": s, "window_seconds": w,
                        "accuracy": round(accuracy, 6)}
    return {"grid": grid, "best": best, "class_prior": round(prior, 6) if prior else None}


def detect_device_activities(label: str, kind: ArchetypeKind, series: RateSeries,
                             detector: EventDetectorConfig) -> list[ActivityEvent]:
    """Detection plus type-specific mapping for one device's series."""
    events = detect_events(series, detector)
    intervals = classify_camera_mode(series, detector) if kind in _CAMERA_KINDS else None
    return infer_activities(label, kind, events, intervals)


def match_activities(expected: list[tuple[int, ActivityKind]],
                     inferred: list[ActivityEvent], tolerance_us: int) -> int:
    """Count one-to-one (kind, time) matches within the tolerance."""
    used = [False] * len(inferred)
    matched = 0
    for t_us, kind in expected:
        candidates = [
            (abs(a.time_us - t_us), i) for i, a in enumerate(inferred)
            if not used[i] and a.kind is kind and abs(a.time_us - t_us) <= tolerance_us
        ]
        if candidates:
            used[min(candidates)[1]] = True
            matched += 1
    return matched


def attack(corpus: dict[str, list[PacketRecord]], spec: ExperimentSpec,
           truth: dict | None = None,
           dns_db: DnsFingerprintDb | None = None,
           series_for=None) -> tuple[dict, dict[str, list[ActivityEvent]]]:
    """Run identification then inference over a labeled corpus.

    Identification tries DNS fingerprints first and always evaluates the
    traffic-rate fallback (cross-validated over the spec's grid). Returns
    the report fragment and per-device inferred activities.
    """
    labels = list(corpus.keys())
    db = dns_db or load_default_dns_db()

    dns_section = {}
    for label in labels:
        queries: set[str] = set()
        for domains in extract_dns(corpus[label]).values():
            queries |= domains
        ranking = dns_identify(queries, db)
        unique = len(ranking) == 1 or (len(ranking) > 1 and ranking[0][1] > ranking[1][1])
        dns_section[label] = {
            "match": ranking[0][0] if ranking else None,
            "score": round(ranking[0][1], 6) if ranking else 0.0,
            "unique": bool(ranking) and unique,
        }

    if series_for is None:
        series_cache: dict[tuple[str, int], RateSeries] = {}

        def series_for(label: str, s: int) -> RateSeries:
            key = (label, s)
            if key not in series_cache:
                series_cache[key] = rate_series(corpus[label], s)
            return series_cache[key]

    fingerprint = fingerprint_grid(series_for, labels, spec.sample_grid,
                                   spec.window_grid, spec.k, spec.folds)

    kinds = _device_kinds(spec, truth, labels)
    activities: dict[str, list[ActivityEvent]] = {}
    for label in labels:
        kind = kinds.get(label)
        if kind is None:
            activities[label] = []
            continue
        activities[label] = detect_device_activities(
            label, kind, series_for(label, 1), spec.detector)

    report = {
        "dns": dns_section,
        "dns_unique_count": sum(1 for v in dns_section.values() if v["unique"]),
        "fingerprint": fingerprint,
        "activity_counts": {label: len(acts) for label, acts in activities.items()},
        "detected_event_total": sum(len(acts) for acts in activities.values()),
    }

    if truth is not None:
        tol_us = int(spec.match_tolerance_s * MICROS)
        per_device = {}
        total_expected = total_inferred = total_matched = 0
        expected_by_label = {
            d["label"]: [(a["time_us"], ActivityKind(a["kind"]))
                         for a in d["expected_activities"]]
            for d in truth["devices"]
        }
        for label in labels:
            expected = expected_by_label.get(label, [])
            inferred = activities.get(label, [])
            matched = match_activities(expected, inferred, tol_us)
            per_device[label] = {
                "expected": len(expected), "inferred": len(inferred), "matched": matched,
            }
            total_expected += len(expected)
            total_inferred += len(inferred)
            total_matched += matched
        report["event_metrics"] = {
            "per_device": per_device,
            "precision": round(total_matched / total_inferred, 6) if total_inferred else 1.0,
            "recall": round(total_matched / total_expected, 6) if total_expected else 1.0,
        }
    return report, activities


def _device_kinds(spec: ExperimentSpec, truth: dict | None,
                  labels: list[str]) -> dict[str, ArchetypeKind]:
    kinds = {d.label: d.archetype.name for d in spec.devices}
    if truth is not None:
        for entry in truth["devices"]:
            kinds.setdefault(entry["label"], ArchetypeKind(entry["archetype"]))
    return {label: kinds[label] for label in labels if label in kinds}


# ---------------------------------------------------------------------------
# tunneled and shaped conditions
# ---------------------------------------------------------------------------

def tunnel_condition(corpus: dict[str, list[PacketRecord]], spec: ExperimentSpec,
                     truth: dict) -> dict:
    """Aggregate every device into one series (VPN view) and measure what
    spike detection still recovers, against the dominating device."""
    origin = min(records[0].timestamp for records in corpus.values() if records)
    members = [
        (label, rate_series(records, 1, origin_ts=origin))
        for label, records in corpus.items()
    ]
    tunnel = aggregate_tunnel(members)
    detected = detect_events(tunnel.aggregate, spec.detector)

    by_rate = sorted(truth["devices"], key=lambda d: -d["baseline_rate"])
    dominant = by_rate[0]
    tol_us = int(spec.match_tolerance_s * MICROS)
    spans = [(lo - tol_us, hi + tol_us) for lo, hi in dominant["burst_spans_us"]]
    recovered = sum(
        1 for lo, hi in spans if any(lo <= t <= hi for t, _ in detected))
    recall = recovered / len(spans) if spans else 1.0
    return {
        "member_devices": sorted(corpus.keys()),
        "detected_events": len(detected),
        "dominant_device": dominant["label"],
        "dominant_planted": len(spans),
        "dominant_recovered": recovered,
        "dominant_recall": round(recall, 6),
    }


def shaped_condition(corpus: dict[str, list[PacketRecord]], spec: ExperimentSpec,
                     cfg: ShapingConfig) -> dict:
    """Shape each device under one config and re-run the attack on the wire
    view; also shape the whole home to measure cover-traffic sublinearity."""
    horizon = spec.horizon_s
    streams = {}
    schedules = {}
    for label, records in corpus.items():
        leg = [p for p in records if p.direction is cfg.direction]
        cells = cellify(leg, cfg.cell_size)
        streams[label] = cells
        schedules[label] = shape(cells, cfg, horizon)

    labels = list(corpus.keys())
    fingerprint = fingerprint_grid(
        lambda label, s: wire_rate_series(schedules[label], s),
        labels, spec.sample_grid, spec.window_grid, spec.k, spec.folds)

    detected_total = 0
    for label in labels:
        detected_total += len(detect_events(wire_rate_series(schedules[label], 1),
                                            spec.detector))

    overheads = {
        label: overhead_report(schedules[label], horizon).to_dict()
        for label in labels
    }
    home_schedule = shape_home(list(streams.values()), cfg, horizon)
    home = overhead_report(home_schedule, horizon)
    max_individual_cover = max(o["cover_bytes"] for o in overheads.values())

    return {
        "config": cfg.to_dict(),
        "fingerprint": fingerprint,
        "detected_event_total": detected_total,
        "per_device_overhead": overheads,
        "whole_home_overhead": home.to_dict(),
        "whole_home_cover_le_max_individual": home.cover_bytes <= max_individual_cover,
    }


# ---------------------------------------------------------------------------
# full evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvaluationReport:
    provenance: dict
    conditions: dict

    def __post_init__(self):
        for key in ("spec_sha256", "seed", "tool_version"):
            if key not in self.provenance:
                raise ValueError(f"provenance missing {key!r}")
        for name, condition in self.conditions.items():
            fp = condition.get("fingerprint")
            if fp and fp.get("best"):
                acc = fp["best"]["accuracy"]
                if not 0.0 <= acc <= 1.0:
                    raise ValueError(f"condition {name!r} accuracy out of range: {acc}")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "provenance": self.provenance,
            "conditions": self.conditions,
        }

    def to_json(self) -> str:
        return dump_json(self.to_dict())


def evaluate(spec: ExperimentSpec) -> tuple[EvaluationReport, dict[str, list[ActivityEvent]]]:
    """generate -> attack(raw) -> attack(tunnel) -> shape sweep -> attack(shaped)."""
    corpus = generate(spec)
    truth = ground_truth(spec)

    conditions = {}
    raw_report, raw_activities = attack(corpus, spec, truth)
    conditions["raw"] = raw_report
    conditions["tunneled"] = tunnel_condition(corpus, spec, truth)
    for cfg in spec.shaping:
        conditions[f"shaped:{cfg.label()}"] = shaped_condition(corpus, spec, cfg)

    report = EvaluationReport(
        provenance={
            "spec_sha256": spec.sha256(),
            "seed": spec.seed,
            "tool_version": __version__,
        },
        conditions=conditions,
    )
    return report, raw_activities
