"""Device identification: hardware-address prefixes, DNS fingerprints, and
traffic-rate fingerprinting with a k-nearest-neighbors classifier.

OuiTable and DnsFingerprintDb load from keyed one-entry-per-line documents
(``prefix,manufacturer`` and ``device_label,domain``); packaged defaults
live under ``snoopshield/data/``. Models are immutable after training, so
classification and cross-validation can run concurrently.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .trace import MICROS, RateSeries

_HW_RE = re.compile(r"^[0-9A-Fa-f]{2}(:[0-9A-Fa-f]{2}){5}$")


# ---------------------------------------------------------------------------
# hardware-address prefix lookup
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OuiTable:
    """Maps 3-byte hardware-address prefixes to manufacturer names."""

    entries: dict[str, str]

    @classmethod
    def from_text(cls, text: str) -> "OuiTable":
        entries: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            prefix, sep, manufacturer = line.partition(",")
            if not sep or not manufacturer:
                raise ValueError(f"line {lineno}: expected 'prefix,manufacturer'")
            prefix = prefix.strip().upper()
            if prefix in entries:
                raise ValueError(f"line {lineno}: duplicate prefix {prefix}")
            entries[prefix] = manufacturer.strip()
        return cls(entries)


def load_default_oui() -> OuiTable:
    text = resources.files("snoopshield.data").joinpath("oui_prefixes.csv").read_text()
    return OuiTable.from_text(text)


def oui_lookup(hw: str, table: OuiTable) -> str | None:
    """Manufacturer for a hardware address, or None if its prefix is unknown."""
    if not _HW_RE.match(hw):
        raise ValueError(f"malformed hardware address: {hw!r}")
    prefix = hw.upper()[:8]
    return table.entries.get(prefix)


# ---------------------------------------------------------------------------
# DNS fingerprint matching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DnsFingerprintDb:
    """Known per-device domain sets used to identify devices from queries."""

    entries: dict[str, frozenset[str]]

    def __post_init__(self):
        for label, domains in self.entries.items():
            if not domains:
                raise ValueError(f"device {label!r} has an empty domain set")

    @classmethod
    def from_text(cls, text: str) -> "DnsFingerprintDb":
        entries: dict[str, set[str]] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            label, sep, domain = line.partition(",")
            if not sep or not domain:
                raise ValueError(f"line {lineno}: expected 'device_label,domain'")
            entries.setdefault(label.strip(), set()).add(domain.strip())
        return cls({label: frozenset(domains) for label, domains in entries.items()})


def load_default_dns_db() -> DnsFingerprintDb:
    text = resources.files("snoopshield.data").joinpath("dns_fingerprints.csv").read_text()
    return DnsFingerprintDb.from_text(text)


def dns_identify(queries: set[str], db: DnsFingerprintDb) -> list[tuple[str, float]]:
    """Score each known device by the fraction of its domain set observed.

    Containment scoring (|queries ∩ domains| / |domains|) keeps a device
    ranked first even when only part of its domain set was seen. Results
    are sorted by score descending, then label; zero scores are dropped.
    """
    scored = []
    for label, domains in db.entries.items():
        score = len(queries & domains) / len(domains)
        if score > 0:
            scored.append((label, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


# ---------------------------------------------------------------------------
# traffic-rate fingerprinting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowFeature:
    """Mean / population-stddev of the byte-rate samples in one window."""

    mean: float
    stddev: float
    window_start: int = 0
    device_label: str | None = None


def window_features(series: RateSeries, w: int,
                    device_label: str | None = None) -> list[WindowFeature]:
    """Split a rate series into consecutive non-overlapping w-second windows.

    Each window yields (mean, population stddev) of its samples; a trailing
    partial window is discarded. `w` must be a multiple of the sample
    interval and span at least two samples.
    """
    s = series.sample_seconds
    if w <= 0 or w % s != 0:
        raise ValueError(f"window {w}s is not a positive multiple of the {s}s sample interval")
    per_window = w // s
    if per_window < 2:
        raise ValueError("windows must span at least two samples")
    count = len(series.samples) // per_window
    if count == 0:
        raise ValueError("series shorter than one window")
    data = series.samples[: count * per_window].reshape(count, per_window).astype(np.float64)
    means = data.mean(axis=1)
    stds = data.std(axis=1)
    return [
        WindowFeature(float(means[i]), float(stds[i]),
                      series.origin_ts + i * w * MICROS, device_label)
        for i in range(count)
    ]


@dataclass(frozen=True, eq=False)
class KnnModel:
    """k-NN classifier over z-scored (mean, stddev) features."""

    k: int
    points: np.ndarray          # (n, 2) standardized training features
    labels: tuple[str, ...]
    feature_mean: np.ndarray    # (2,)
    feature_scale: np.ndarray   # (2,) training stddev, 1.0 where degenerate


def knn_train(features: list[WindowFeature], k: int = 3) -> KnnModel:
    """Fit the classifier: store z-scoring parameters and standardized points."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"k must be odd and >= 1, got {k}")
    if len(features) < k:
        raise ValueError(f"need at least k={k} training features, got {len(features)}")
    labels = tuple(f.device_label for f in features)
    if any(label is None for label in labels):
        raise ValueError("training features must all carry device labels")
    if len(set(labels)) < 2:
        raise ValueError("training features must cover at least two device labels")
    raw = np.array([[f.mean, f.stddev] for f in features], np.float64)
    mean = raw.mean(axis=0)
    scale = raw.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return KnnModel(k, (raw - mean) / scale, labels, mean, scale)


def _classify_standardized(model: KnnModel, point: np.ndarray) -> str:
    d2 = ((model.points - point) ** 2).sum(axis=1)
    # stable sort: equal distances resolve to the earlier training index
    nearest = np.argsort(d2, kind="stable")[: model.k]
    votes = Counter(model.labels[i] for i in nearest)
    top = max(votes.values())
    tied = [label for label, count in votes.items() if count == top]
    if len(tied) == 1:
        return tied[0]
    dist = np.sqrt(d2[nearest])
    aggregate = {label: 0.0 for label in tied}
    for pos, i in enumerate(nearest):
        label = model.labels[i]
        if label in aggregate:
            aggregate[label] += float(dist[pos])
    return min(tied, key=lambda label: (aggregate[label], label))


def knn_classify(model: KnnModel, feature: WindowFeature) -> str:
    """Label a feature by majority vote among its k nearest training points.

    Ties are fully deterministic: equal distances favor the earlier
    training index, vote ties favor the smallest aggregate distance, then
    the lexicographically smaller label.
    """
    point = (np.array([feature.mean, feature.stddev]) - model.feature_mean) / model.feature_scale
    return _classify_standardized(model, point)


def stratified_cv(features: list[WindowFeature], k_neighbors: int = 3,
                  folds: int = 10, seed: int = 0) -> float:
    """Stratified k-fold cross-validation accuracy of the k-NN classifier.

    Within each class, points are shuffled by a generator seeded with
    `seed` and dealt round-robin to folds, so the fold assignment is
    deterministic. Every class must have at least `folds` members.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    by_label: dict[str, list[int]] = {}
    for i, f in enumerate(features):
        if f.device_label is None:
            raise ValueError("cross-validation requires labeled features")
        by_label.setdefault(f.device_label, []).append(i)
    for label, members in by_label.items():
        if len(members) < folds:
            raise ValueError(
                f"class {label!r} has {len(members)} members, fewer than {folds} folds")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(features), np.int64)
    for label in sorted(by_label):
        members = np.array(by_label[label])
        for pos, j in enumerate(rng.permutation(len(members))):
            fold_of[members[j]] = pos % folds
    correct = 0
    for fold in range(folds):
        train = [features[i] for i in range(len(features)) if fold_of[i] != fold]
        model = knn_train(train, k_neighbors)
        for i in np.flatnonzero(fold_of == fold):
            if knn_classify(model, features[i]) == features[i].device_label:
                correct += 1
    return correct / len(features)
