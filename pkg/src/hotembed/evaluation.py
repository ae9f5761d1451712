"""Ground-truth oracles and recall / throughput measurements for the sketch."""
import heapq
import time
from typing import NamedTuple

import numpy as np

from .sketch import HotSketch, SketchConfig


class ExactTopK:
    """Exact per-feature score accumulator."""

    def __init__(self, k):
        self.k = k
        self.scores = {}

    def add(self, feature, score=1.0):
        self.scores[feature] = self.scores.get(feature, 0.0) + score

    def add_many(self, features, scores=None):
        feats = np.asarray(features, dtype=np.uint64)
        if scores is None:
            uniq, counts = np.unique(feats, return_counts=True)
            totals = counts.astype(np.float64)
        else:
            uniq, inv = np.unique(feats, return_inverse=True)
            totals = np.bincount(inv, weights=np.asarray(scores, dtype=np.float64))
        get = self.scores.get
        for f, s in zip(uniq.tolist(), totals.tolist()):
            self.scores[f] = get(f, 0.0) + s

    def top(self, k=None):
        """The ``k`` highest-score features; ties go to the smaller id."""
        k = self.k if k is None else k
        feats, scores = self.to_arrays()
        order = np.lexsort((feats, -scores))[:k]
        return feats[order]

    def to_arrays(self):
        feats = np.fromiter(self.scores.keys(), dtype=np.uint64, count=len(self.scores))
        scores = np.fromiter(self.scores.values(), dtype=np.float64, count=len(self.scores))
        return feats, scores

    @classmethod
    def from_arrays(cls, k, feats, scores):
        oracle = cls(k)
        oracle.scores = dict(zip(np.asarray(feats, np.uint64).tolist(),
                                 np.asarray(scores, np.float64).tolist()))
        return oracle


def recall_at_k(sketch: HotSketch, oracle: ExactTopK, k=None) -> float:
    """Share of the exact top-k found among the sketch's k highest-score slots."""
    k = oracle.k if k is None else k
    if k <= 0:
        return 1.0
    truth = set(oracle.top(k).tolist())
    found = set(sketch.top(k).tolist())
    return len(truth & found) / k


class SpaceSaving:
    """Textbook SpaceSaving with exact minimum replacement.

    Counters live in slots numbered by first use; among equal minima the
    lowest slot is replaced. A lazy min-heap keeps replacement O(log m).
    """

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.slot_feature = []
        self.slot_score = []
        self.index = {}
        self._heap = []

    def insert(self, feature, score=1.0):
        slot = self.index.get(feature)
        if slot is not None:
            self.slot_score[slot] += score
        elif len(self.slot_feature) < self.capacity:
            slot = len(self.slot_feature)
            self.slot_feature.append(feature)
            self.slot_score.append(score)
            self.index[feature] = slot
        else:
            while True:
                s, slot = heapq.heappop(self._heap)
                if s == self.slot_score[slot]:
                    break
            del self.index[self.slot_feature[slot]]
            self.slot_feature[slot] = feature
            self.slot_score[slot] = s + score
            self.index[feature] = slot
        heapq.heappush(self._heap, (self.slot_score[slot], slot))

    def insert_many(self, features, scores=None):
        feats = np.asarray(features).tolist()
        if scores is None:
            for f in feats:
                self.insert(f)
        else:
            for f, s in zip(feats, np.asarray(scores, dtype=np.float64).tolist()):
                self.insert(f, s)

    def tracked(self):
        return sorted(zip(self.slot_feature, self.slot_score))


def reference_spacesaving(stream, capacity, scores=None):
    ss = SpaceSaving(capacity)
    ss.insert_many(stream, scores)
    return ss.tracked()


class WindowRecall(NamedTuple):
    window: int
    recall_local: float
    recall_cumulative: float
    warmup: bool


def sliding_window_recall(sketch: HotSketch, stream, window_events, k, windows=None,
                          warmup_windows=1, scores=None):
    """Feed ``stream`` window by window and score the sketch after each.

    ``stream`` is any object with ``batch(start, count)`` returning
    ``(features, labels)``. After every window the sketch's top-k is
    compared with the exact top-k of that window alone and with the exact
    top-k of everything seen so far. ``scores`` optionally maps a feature
    array to per-event score deltas (unit scores by default).
    """
    if windows is None:
        windows = len(stream) // window_events
    cumulative = ExactTopK(k)
    out = []
    for win in range(windows):
        feats, _ = stream.batch(win * window_events, window_events)
        deltas = np.ones(len(feats)) if scores is None else scores(feats)
        sketch.insert_many(feats, deltas)
        local = ExactTopK(k)
        local.add_many(feats, deltas)
        cumulative.add_many(feats, deltas)
        out.append(WindowRecall(win, recall_at_k(sketch, local), recall_at_k(sketch, cumulative),
                                win < warmup_windows))
    return out


class Throughput(NamedTuple):
    c: int
    w: int
    ops: int
    insert_ops_per_s: float
    query_ops_per_s: float


def throughput_bench(c_values, w_values, ops=1_000_000, n=1_000_000, z=1.1, seed=0, repeats=3):
    """Serialized insert and query throughput of warmed-up sketches.

    Each (c, w) pair is timed ``repeats`` times on the same key sequence and
    the fastest run is reported. ``ops=0`` yields no measurements.
    """
    from .workload import ZipfStream, ZipfStreamSpec

    if ops <= 0:
        return []
    feats, _ = ZipfStream(ZipfStreamSpec(n, z, 2 * ops, seed=seed)).batch(0, 2 * ops)
    warm, timed = feats[:ops], feats[ops:]
    ones = np.ones(ops)
    rows = []
    for c in c_values:
        for w in w_values:
            best_ins = best_q = float("inf")
            for _ in range(repeats):
                sk = HotSketch(SketchConfig(w, c, seed=seed))
                sk.insert_many(warm, ones)
                sk.query_many(warm[:16])
                t0 = time.perf_counter()
                sk.insert_many(timed, ones)
                t1 = time.perf_counter()
                sk.query_many(timed)
                t2 = time.perf_counter()
                best_ins = min(best_ins, t1 - t0)
                best_q = min(best_q, t2 - t1)
            rows.append(Throughput(c, w, ops, ops / best_ins, ops / best_q))
    return rows
