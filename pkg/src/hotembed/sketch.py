"""HotSketch: a bucketized SpaceSaving-style top-k importance sketch.

Each of ``w`` buckets holds ``c`` slots of (feature, score, handle). A
feature hashes to exactly one bucket. Insertion either adds to a matching
slot, fills the first empty slot, or takes over the minimum-score slot and
inherits its score.
"""
import enum
import struct
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numba
import numpy as np

from ._hash import hash64_nb, seed_key
from .errors import CorruptState, FeatureNotTracked, VersionMismatch

EMPTY = np.uint64(0xFFFFFFFFFFFFFFFF)
NO_HANDLE = -1

MATCHED, FILLED, EVICTED = 0, 1, 2

_MAGIC = b"HSK1"
_HEADER = struct.Struct("<4sQQdddQQQ")
_SLOT = np.dtype([("feature", "<u8"), ("score", "<f8"), ("handle", "<i8")])
_PAIR = np.dtype([("feature", "<u8"), ("handle", "<i8")])


class FeatureClass(enum.IntEnum):
    COLD = 0
    MEDIUM = 1
    HOT = 2


class Outcome(enum.Enum):
    MATCHED = MATCHED
    FILLED_EMPTY = FILLED
    EVICTED = EVICTED


class SlotOutcome(NamedTuple):
    kind: Outcome
    victim: Optional[int] = None


class QueryResult(NamedTuple):
    cls: FeatureClass
    score: float
    handle: Optional[int]


@dataclass(frozen=True)
class SketchConfig:
    bucket_count: int
    slots_per_bucket: int = 4
    hot_threshold: float = 500.0
    medium_threshold: float = 0.0
    decay_coefficient: float = 1.0
    decay_interval: int = 1 << 62
    seed: int = 0

    def __post_init__(self):
        if self.bucket_count < 1 or self.slots_per_bucket < 1:
            raise ValueError("bucket_count and slots_per_bucket must be >= 1")
        if not 0 <= self.medium_threshold <= self.hot_threshold:
            raise ValueError("need 0 <= medium_threshold <= hot_threshold")
        if not 0 < self.decay_coefficient <= 1:
            raise ValueError("decay_coefficient must lie in (0, 1]")
        if self.decay_interval < 1:
            raise ValueError("decay_interval must be >= 1")

    @property
    def capacity(self):
        return self.bucket_count * self.slots_per_bucket


@numba.njit(cache=True, nogil=True)
def _decay_kernel(feat, score, handle, coef, hot):
    w, c = feat.shape
    crossed = 0
    for b in range(w):
        for j in range(c):
            if feat[b, j] != EMPTY:
                old = score[b, j]
                new = old * coef
                score[b, j] = new
                if handle[b, j] >= 0 and old >= hot and new < hot:
                    crossed += 1
    return crossed


@numba.njit(cache=True, nogil=True)
def _insert_kernel(feat, score, handle, key, xs, ds, decay_interval, coef, hot,
                   counter, codes, victims, rel_feat, rel_handle):
    w, c = feat.shape
    n_rel = 0
    crossed = 0
    for i in range(xs.shape[0]):
        f = xs[i]
        d = ds[i]
        b = hash64_nb(f, key) % np.uint64(w)
        empty = -1
        mn = -1
        hit = -1
        for j in range(c):
            g = feat[b, j]
            if g == f:
                hit = j
                break
            if g == EMPTY:
                if empty < 0:
                    empty = j
            elif mn < 0 or score[b, j] < score[b, mn]:
                mn = j
        if hit >= 0:
            score[b, hit] += d
            codes[i] = 0
            victims[i] = EMPTY
        elif empty >= 0:
            feat[b, empty] = f
            score[b, empty] = d
            handle[b, empty] = -1
            codes[i] = 1
            victims[i] = EMPTY
        else:
            victims[i] = feat[b, mn]
            if handle[b, mn] >= 0:
                rel_feat[n_rel] = feat[b, mn]
                rel_handle[n_rel] = handle[b, mn]
                n_rel += 1
                handle[b, mn] = -1
            feat[b, mn] = f
            score[b, mn] = score[b, mn] + d
            codes[i] = 2
        counter += 1
        if counter >= decay_interval:
            crossed += _decay_kernel(feat, score, handle, coef, hot)
            counter = 0
    return counter, n_rel, crossed


@numba.njit(cache=True, nogil=True)
def _query_kernel(feat, score, handle, key, xs, out_score, out_handle, out_found):
    w, c = feat.shape
    for i in range(xs.shape[0]):
        f = xs[i]
        b = hash64_nb(f, key) % np.uint64(w)
        out_score[i] = 0.0
        out_handle[i] = -1
        out_found[i] = False
        for j in range(c):
            if feat[b, j] == f:
                out_score[i] = score[b, j]
                out_handle[i] = handle[b, j]
                out_found[i] = True
                break


@numba.njit(cache=True, nogil=True)
def _locate_kernel(feat, key, f):
    w, c = feat.shape
    b = hash64_nb(f, key) % np.uint64(w)
    for j in range(c):
        if feat[b, j] == f:
            return np.int64(b), np.int64(j)
    return np.int64(b), np.int64(-1)


def _check_feature(feature):
    if not 0 <= feature < int(EMPTY):
        raise ValueError(f"feature id {feature} outside [0, 2**64 - 1)")


class HotSketch:
    """Top-k importance sketch with per-slot embedding handles.

    Not thread-safe for mutation; concurrent ``query`` calls are fine.

    Rows of the unique embedding table whose owner is evicted are queued in
    ``released`` as ``(feature, handle)`` pairs until the embedding store
    drains them.
    """

    def __init__(self, config: SketchConfig):
        self.config = config
        w, c = config.bucket_count, config.slots_per_bucket
        self.features = np.full((w, c), EMPTY, dtype=np.uint64)
        self.scores = np.zeros((w, c), dtype=np.float64)
        self.handles = np.full((w, c), NO_HANDLE, dtype=np.int64)
        self.events_since_decay = 0
        self.released = []
        self.decay_demotions = 0
        self._key = np.uint64(seed_key(config.seed, salt=1))

    # -- mutation -------------------------------------------------------

    def insert(self, feature: int, score_delta: float) -> SlotOutcome:
        _check_feature(feature)
        codes, victims = self.insert_many(
            np.array([feature], dtype=np.uint64), np.array([score_delta], dtype=np.float64))
        kind = Outcome(int(codes[0]))
        return SlotOutcome(kind, int(victims[0]) if kind is Outcome.EVICTED else None)

    def insert_many(self, features, deltas):
        """Insert a sequence of (feature, delta) events in order.

        Returns ``(codes, victims)``: per-event outcome codes
        (MATCHED/FILLED/EVICTED) and victim ids (EMPTY where none).
        """
        xs = np.ascontiguousarray(features, dtype=np.uint64)
        ds = np.ascontiguousarray(deltas, dtype=np.float64)
        if xs.shape != ds.shape or xs.ndim != 1:
            raise ValueError("features and deltas must be equal-length 1-d arrays")
        if not np.all(np.isfinite(ds)) or np.any(ds < 0):
            raise ValueError("score deltas must be finite and non-negative")
        if np.any(xs == EMPTY):
            raise ValueError("feature id 2**64-1 is reserved for empty slots")
        m = xs.shape[0]
        codes = np.empty(m, dtype=np.int8)
        victims = np.empty(m, dtype=np.uint64)
        rel_f = np.empty(m, dtype=np.uint64)
        rel_h = np.empty(m, dtype=np.int64)
        cfg = self.config
        counter, n_rel, crossed = _insert_kernel(
            self.features, self.scores, self.handles, self._key, xs, ds,
            cfg.decay_interval, cfg.decay_coefficient, cfg.hot_threshold,
            self.events_since_decay, codes, victims, rel_f, rel_h)
        self.events_since_decay = int(counter)
        self.decay_demotions += int(crossed)
        self.released.extend(zip(rel_f[:n_rel].tolist(), rel_h[:n_rel].tolist()))
        return codes, victims

    def decay(self) -> int:
        """Scale every score by the decay coefficient.

        Returns how many handle-holding slots dropped below the hot
        threshold; demoting them is the embedding store's job.
        """
        cfg = self.config
        crossed = int(_decay_kernel(self.features, self.scores, self.handles,
                                    cfg.decay_coefficient, cfg.hot_threshold))
        self.decay_demotions += crossed
        return crossed

    def set_handle(self, feature: int, handle: int):
        if handle < 0:
            raise ValueError("handle must be a non-negative row index")
        b, j = self._locate(feature)
        self.handles[b, j] = handle

    def clear_handle(self, feature: int):
        b, j = self._locate(feature)
        self.handles[b, j] = NO_HANDLE

    def drain_released(self):
        out, self.released = self.released, []
        return out

    # -- queries --------------------------------------------------------

    def _locate(self, feature):
        _check_feature(feature)
        b, j = _locate_kernel(self.features, self._key, np.uint64(feature))
        if j < 0:
            raise FeatureNotTracked(feature)
        return b, j

    def bucket_of(self, feature: int) -> int:
        b, _ = _locate_kernel(self.features, self._key, np.uint64(feature))
        return int(b)

    def classify(self, score, found=True):
        cfg = self.config
        if found and score >= cfg.hot_threshold:
            return FeatureClass.HOT
        if found and score >= cfg.medium_threshold:
            return FeatureClass.MEDIUM
        return FeatureClass.COLD

    def classify_many(self, scores, found):
        cfg = self.config
        cls = np.zeros(scores.shape, dtype=np.int8)
        cls[found & (scores >= cfg.medium_threshold)] = FeatureClass.MEDIUM
        cls[found & (scores >= cfg.hot_threshold)] = FeatureClass.HOT
        return cls

    def query(self, feature: int) -> QueryResult:
        _check_feature(feature)
        scores, handles, found = self.query_many(np.array([feature], dtype=np.uint64))
        s, h, ok = float(scores[0]), int(handles[0]), bool(found[0])
        return QueryResult(self.classify(s, ok), s, h if h >= 0 else None)

    def query_many(self, features):
        xs = np.ascontiguousarray(features, dtype=np.uint64)
        m = xs.shape[0]
        scores = np.empty(m, dtype=np.float64)
        handles = np.empty(m, dtype=np.int64)
        found = np.empty(m, dtype=np.bool_)
        _query_kernel(self.features, self.scores, self.handles, self._key, xs,
                      scores, handles, found)
        return scores, handles, found

    def __contains__(self, feature):
        return self.query_many(np.array([feature], dtype=np.uint64))[2][0]

    def tracked(self):
        """Non-empty slots as flat (features, scores, handles) arrays in slot order."""
        mask = self.features != EMPTY
        return self.features[mask], self.scores[mask], self.handles[mask]

    def top(self, k: int):
        """Features of the ``k`` highest-score slots (ties by slot order)."""
        feats, scores, _ = self.tracked()
        order = np.argsort(-scores, kind="stable")[:k]
        return feats[order]

    def live_handles(self):
        return int(np.count_nonzero(self.handles >= 0))

    # -- persistence ----------------------------------------------------

    def snapshot(self) -> bytes:
        cfg = self.config
        head = _HEADER.pack(_MAGIC, cfg.bucket_count, cfg.slots_per_bucket,
                            cfg.hot_threshold, cfg.medium_threshold,
                            cfg.decay_coefficient, cfg.decay_interval, cfg.seed,
                            self.events_since_decay)
        slots = np.empty(self.features.size, dtype=_SLOT)
        slots["feature"] = self.features.ravel()
        slots["score"] = self.scores.ravel()
        slots["handle"] = self.handles.ravel()
        rel = np.array(self.released, dtype=_PAIR)
        return b"".join([head, slots.tobytes(), struct.pack("<Q", len(rel)), rel.tobytes()])

    @classmethod
    def restore(cls, data: bytes) -> "HotSketch":
        data = bytes(data)
        if len(data) < 4 or data[:4] != _MAGIC:
            raise VersionMismatch(f"expected magic {_MAGIC!r}, got {data[:4]!r}")
        if len(data) < _HEADER.size:
            raise CorruptState("truncated sketch header")
        _, w, c, hot, med, coef, interval, seed, events = _HEADER.unpack_from(data)
        try:
            config = SketchConfig(w, c, hot, med, coef, interval, seed)
        except ValueError as exc:
            raise CorruptState(f"invalid sketch config: {exc}") from exc
        off = _HEADER.size
        end = off + w * c * _SLOT.itemsize
        if len(data) < end + 8:
            raise CorruptState("truncated sketch slots")
        slots = np.frombuffer(data, dtype=_SLOT, count=w * c, offset=off)
        (n_rel,) = struct.unpack_from("<Q", data, end)
        if len(data) != end + 8 + n_rel * _PAIR.itemsize:
            raise CorruptState("sketch state length mismatch")
        rel = np.frombuffer(data, dtype=_PAIR, count=n_rel, offset=end + 8)
        sk = cls(config)
        sk.features[:] = slots["feature"].reshape(w, c)
        sk.scores[:] = slots["score"].reshape(w, c)
        sk.handles[:] = slots["handle"].reshape(w, c)
        sk.events_since_decay = events
        sk.released = list(zip(rel["feature"].tolist(), rel["handle"].tolist()))
        return sk

    def state_equal(self, other: "HotSketch") -> bool:
        return self.snapshot() == other.snapshot()

    def __repr__(self):
        used = int(np.count_nonzero(self.features != EMPTY))
        return (f"HotSketch(w={self.config.bucket_count}, c={self.config.slots_per_bucket}, "
                f"used={used}, handles={self.live_handles()})")

