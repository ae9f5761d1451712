"""Synthetic Zipf feature streams with rank drift, and CSV trace I/O.

Events are counter-based: event ``i`` is a pure function of the spec and
``i``, so any slice of the stream can be regenerated without replaying the
prefix (only the drift permutations are advanced window by window).
"""
import csv
import gzip
import io
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional

import numpy as np

from ._hash import seed_key, uniform_array
from .errors import ParseError


@dataclass(frozen=True)
class Drift:
    window_events: int
    permutation_fraction: float

    def __post_init__(self):
        if self.window_events < 1:
            raise ValueError("window_events must be >= 1")
        if not 0 <= self.permutation_fraction <= 1:
            raise ValueError("permutation_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class ZipfStreamSpec:
    n: int
    z: float
    event_count: int
    seed: int = 0
    drift: Optional[Drift] = None
    weight_scale: float = 2.0
    label_noise: float = 0.5

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.z < 0:
            raise ValueError("z must be >= 0")
        if self.event_count < 0:
            raise ValueError("event_count must be >= 0")


class StreamEvent(NamedTuple):
    feature: int
    label: int
    numeric: tuple = ()


def zipf_pmf(n, z):
    """P(rank i) proportional to i**-z for ranks 1..n."""
    p = np.arange(1, n + 1, dtype=np.float64) ** -z
    return p / p.sum()


class ZipfStream:
    """Random-access view of the stream described by a :class:`ZipfStreamSpec`."""

    def __init__(self, spec: ZipfStreamSpec):
        self.spec = spec
        cdf = np.cumsum(zipf_pmf(spec.n, spec.z))
        cdf[-1] = 1.0
        self._cdf = cdf
        self._key_rank = seed_key(spec.seed, salt=11)
        self._key_noise = (seed_key(spec.seed, salt=12), seed_key(spec.seed, salt=13))
        self._key_label = seed_key(spec.seed, salt=14)
        self.weights = np.random.default_rng([spec.seed, 1]).normal(0.0, spec.weight_scale, spec.n)
        self._perm0 = np.random.default_rng([spec.seed, 0]).permutation(spec.n)
        self._window = 0
        self._perm = self._perm0.copy()

    def __len__(self):
        return self.spec.event_count

    def window_of(self, index):
        d = self.spec.drift
        return 0 if d is None else index // d.window_events

    def permutation(self, window):
        """Rank -> feature map in effect during ``window``."""
        if window < self._window:
            self._window, self._perm = 0, self._perm0.copy()
        d = self.spec.drift
        while self._window < window:
            self._window += 1
            rng = np.random.default_rng([self.spec.seed, 2, self._window])
            m = int(round(d.permutation_fraction * self.spec.n))
            sel = rng.choice(self.spec.n, size=m, replace=False)
            self._perm[sel] = self._perm[sel[rng.permutation(m)]]
        return self._perm

    def ranks(self, start, count):
        idx = np.arange(start, start + count, dtype=np.uint64)
        u = uniform_array(idx, self._key_rank)
        return np.searchsorted(self._cdf, u, side="right")

    def batch(self, start, count):
        """Events ``[start, start + count)`` as ``(features, labels)`` arrays."""
        count = max(0, min(count, self.spec.event_count - start))
        ranks = self.ranks(start, count)
        feats = np.empty(count, dtype=np.uint64)
        pos = 0
        while pos < count:
            win = self.window_of(start + pos)
            if self.spec.drift is None:
                stop = count
            else:
                stop = min(count, (win + 1) * self.spec.drift.window_events - start)
            feats[pos:stop] = self.permutation(win)[ranks[pos:stop]]
            pos = stop
        idx = np.arange(start, start + count, dtype=np.uint64)
        u1 = uniform_array(idx, self._key_noise[0])
        u2 = uniform_array(idx, self._key_noise[1])
        noise = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * math.pi * u2)
        logit = self.weights[feats.astype(np.int64)] + self.spec.label_noise * noise
        p = 1.0 / (1.0 + np.exp(-logit))
        labels = (uniform_array(idx, self._key_label) < p).astype(np.int8)
        return feats, labels

    def events(self, chunk=65536) -> Iterator[StreamEvent]:
        for start in range(0, self.spec.event_count, chunk):
            feats, labels = self.batch(start, chunk)
            for f, y in zip(feats.tolist(), labels.tolist()):
                yield StreamEvent(f, y)


def generate(spec: ZipfStreamSpec) -> Iterator[StreamEvent]:
    return ZipfStream(spec).events()


class ArrayStream:
    """Finite event arrays exposed through the same ``batch`` interface."""

    def __init__(self, features, labels):
        self.features = np.asarray(features, dtype=np.uint64)
        self.labels = np.asarray(labels, dtype=np.int8)
        if self.features.shape != self.labels.shape:
            raise ValueError("features and labels differ in length")

    @classmethod
    def from_events(cls, events):
        events = list(events)
        return cls([e.feature for e in events], [e.label for e in events])

    def __len__(self):
        return len(self.features)

    def batch(self, start, count):
        return self.features[start:start + count], self.labels[start:start + count]


def _open_text(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, mode + "b"), newline="")
    return open(path, mode, newline="")


def ingest_trace(path) -> Iterator[StreamEvent]:
    """Read a headerless ``feature_id,label`` CSV (optionally gzipped)."""
    with _open_text(path, "r") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if len(row) != 2:
                raise ParseError(lineno, f"expected 2 fields, got {len(row)}")
            try:
                feature, label = int(row[0]), int(row[1])
            except ValueError as exc:
                raise ParseError(lineno, str(exc)) from None
            if not 0 <= feature < 2**64 - 1:
                raise ParseError(lineno, f"feature id {feature} out of range")
            if label not in (0, 1):
                raise ParseError(lineno, f"label must be 0 or 1, got {label}")
            yield StreamEvent(feature, label)


def export_trace(events, path):
    with _open_text(path, "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for e in events:
            writer.writerow((e.feature, e.label))
