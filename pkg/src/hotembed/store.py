"""Unique + multi-level shared embedding tables under a byte budget.

Hot features own a row of the unique table (its index is the handle kept in
the sketch). Medium features sum one row from each shared level; cold
features read a single row from level 0. The level-0 row of a feature never
depends on its class, so medium/cold moves are seamless.
"""
import enum
import math
import struct
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from ._hash import hash64_array, seed_key
from .errors import BudgetTooSmall, CorruptState, HandleMissing, NoFreeRow, VersionMismatch
from .sketch import FeatureClass, HotSketch

UNIQUE = -1
SKETCH_FIELDS = 3

MODES = ("cafe", "hash", "full")


@dataclass(frozen=True)
class BudgetPlan:
    n: int
    dim: int
    budget_bytes: int
    hot_percentage: float
    hot_rows: int
    shared_rows: tuple
    level_split: tuple
    scalar_bytes: int = 8
    slots_per_bucket: int = 4
    mode: str = "cafe"

    @property
    def level_count(self):
        return len(self.shared_rows)

    @property
    def sketch_slots(self):
        return self.hot_rows * self.slots_per_bucket

    @property
    def sketch_bytes(self):
        return self.sketch_slots * SKETCH_FIELDS * self.scalar_bytes

    @property
    def hot_bytes(self):
        return self.hot_rows * self.dim * self.scalar_bytes

    @property
    def shared_bytes(self):
        return sum(self.shared_rows) * self.dim * self.scalar_bytes

    @property
    def total_bytes(self):
        return self.sketch_bytes + self.hot_bytes + self.shared_bytes

    @property
    def uncompressed_bytes(self):
        return self.n * self.dim * self.scalar_bytes

    @property
    def compression_ratio(self):
        return self.uncompressed_bytes / self.total_bytes

    def summary(self):
        return {
            "mode": self.mode, "n": self.n, "dim": self.dim,
            "budget_bytes": self.budget_bytes, "hot_rows": self.hot_rows,
            "sketch_slots": self.sketch_slots, "shared_rows": list(self.shared_rows),
            "total_bytes": self.total_bytes, "compression_ratio": self.compression_ratio,
        }


def _split_rows(total, split):
    # largest-remainder apportionment so the levels add up to ``total``
    raw = [total * s for s in split]
    rows = [math.floor(r) for r in raw]
    order = sorted(range(len(split)), key=lambda i: (rows[i] - raw[i], i))
    for i in order[: total - sum(rows)]:
        rows[i] += 1
    return rows


def plan_budget(n, dim, budget_bytes, hot_percentage=0.7, level_count=2,
                level_split=None, scalar_bytes=8, slots_per_bucket=4,
                shared_min_rows=0) -> BudgetPlan:
    """Split a byte budget between sketch, unique table and shared levels.

    ``hot_rows`` is the largest k whose sketch (``slots_per_bucket * k``
    slots of three scalars) plus k unique rows fit in
    ``hot_percentage * budget_bytes``. The rest goes to the shared levels
    according to ``level_split`` (default: equal shares).
    """
    if not 0 < hot_percentage <= 1:
        raise ValueError("hot_percentage must lie in (0, 1]")
    if level_count < 1:
        raise ValueError("level_count must be >= 1")
    if level_split is None:
        level_split = (1.0 / level_count,) * level_count
    level_split = tuple(float(s) for s in level_split)
    if len(level_split) != level_count or abs(sum(level_split) - 1) > 1e-9 or min(level_split) < 0:
        raise ValueError("level_split must hold level_count non-negative fractions summing to 1")

    row_bytes = dim * scalar_bytes
    hot_unit = (slots_per_bucket * SKETCH_FIELDS + dim) * scalar_bytes
    k = min(int(hot_percentage * budget_bytes // hot_unit), n)
    while True:
        if k < 1:
            raise BudgetTooSmall(f"budget of {budget_bytes} bytes cannot hold one hot feature")
        rest = budget_bytes - k * hot_unit
        rows = _split_rows(rest // row_bytes, level_split)
        rows = [max(r, shared_min_rows) for r in rows]
        if min(rows) < 1:
            raise BudgetTooSmall(
                f"shared levels got {rows} rows; raise the budget, lower hot_percentage "
                "or set shared_min_rows=1")
        if k * hot_unit + sum(rows) * row_bytes <= budget_bytes:
            break
        k -= 1
    return BudgetPlan(n, dim, int(budget_bytes), hot_percentage, k, tuple(rows),
                      level_split, scalar_bytes, slots_per_bucket, "cafe")


def plan_hash_only(n, dim, budget_bytes, scalar_bytes=8) -> BudgetPlan:
    rows = int(budget_bytes // (dim * scalar_bytes))
    if rows < 1:
        raise BudgetTooSmall(f"budget of {budget_bytes} bytes cannot hold one row")
    return BudgetPlan(n, dim, int(budget_bytes), 0.0, 0, (rows,), (1.0,),
                      scalar_bytes, 0, "hash")


def plan_uncompressed(n, dim, scalar_bytes=8) -> BudgetPlan:
    return BudgetPlan(n, dim, n * dim * scalar_bytes, 0.0, 0, (n,), (1.0,),
                      scalar_bytes, 0, "full")


class Direction(enum.Enum):
    PROMOTE = "promote"
    DEMOTE = "demote"


class MigrationEvent(NamedTuple):
    feature: int
    direction: Direction
    unique_row: int
    source_rows: tuple = ()


class EmbeddingRef(NamedTuple):
    """Rows to sum for one feature: ``(table, index)`` with table -1 = unique."""
    rows: tuple
    pooling: str = "sum"


def lookup_class(cls, handle):
    """Class actually used for lookup.

    A feature over the hot threshold that has no unique row yet reads its
    shared rows as a medium feature; one that still holds a row keeps using
    it until the next maintenance pass demotes it.
    """
    if handle is not None and handle >= 0:
        return FeatureClass.HOT
    if cls == FeatureClass.HOT:
        return FeatureClass.MEDIUM
    return FeatureClass(cls)


def lookup_classes(cls, handles):
    out = np.where(cls == FeatureClass.HOT, FeatureClass.MEDIUM, cls).astype(np.int8)
    out[handles >= 0] = FeatureClass.HOT
    return out


class EmbeddingStore:
    """Embedding tables for one model, laid out by a :class:`BudgetPlan`."""

    def __init__(self, plan: BudgetPlan, seed: int = 0):
        self.plan = plan
        self.seed = seed
        d = plan.dim
        self.unique = np.zeros((plan.hot_rows, d), dtype=np.float64)
        bound = 1.0 / math.sqrt(d)
        self.shared = [
            np.random.default_rng([seed, level]).uniform(-bound, bound, size=(rows, d))
            for level, rows in enumerate(plan.shared_rows)
        ]
        self.free_list = list(range(plan.hot_rows - 1, -1, -1))
        self.handle_of = {}
        self._keys = [np.uint64(seed_key(seed, salt=100 + lv)) for lv in range(plan.level_count)]

    @property
    def dim(self):
        return self.plan.dim

    @property
    def level_count(self):
        return self.plan.level_count

    def allocated_bytes(self):
        b = self.plan.scalar_bytes
        sketch = self.plan.sketch_bytes
        return sketch + b * (self.unique.size + sum(t.size for t in self.shared))

    # -- addressing -----------------------------------------------------

    def level_index(self, features, level):
        """Row of each feature in shared level ``level``.

        A level with at least ``n`` rows addresses features directly, so it
        is collision-free over the feature universe.
        """
        feats = np.asarray(features, dtype=np.uint64)
        rows = self.plan.shared_rows[level]
        if rows >= self.plan.n:
            return feats.astype(np.int64)
        return (hash64_array(feats, self._keys[level]) % np.uint64(rows)).astype(np.int64)

    def levels_for(self, cls):
        if cls == FeatureClass.COLD:
            return 1
        return self.level_count

    def resolve(self, feature, cls, handle=None) -> EmbeddingRef:
        cls = FeatureClass(cls)
        if cls == FeatureClass.HOT:
            if handle is None or handle < 0:
                raise HandleMissing(f"hot feature {feature} has no unique row")
            if not 0 <= handle < self.plan.hot_rows:
                raise IndexError(f"handle {handle} outside unique table")
            return EmbeddingRef(((UNIQUE, int(handle)),))
        rows = tuple((lv, int(self.level_index([feature], lv)[0]))
                     for lv in range(self.levels_for(cls)))
        return EmbeddingRef(rows)

    def table(self, t):
        return self.unique if t == UNIQUE else self.shared[t]

    def vector(self, ref: EmbeddingRef):
        out = np.zeros(self.dim)
        for t, i in ref.rows:
            out += self.table(t)[i]
        return out

    def gather(self, features, lcls, handles):
        """Row indices for a batch: ``(unique_idx, level_idx)``.

        ``unique_idx`` has -1 for non-hot events; ``level_idx`` is
        ``(L, B)`` with -1 where a level is unused.
        """
        feats = np.asarray(features, dtype=np.uint64)
        hot = lcls == FeatureClass.HOT
        unique_idx = np.where(hot, handles, -1).astype(np.int64)
        level_idx = np.full((self.level_count, feats.shape[0]), -1, dtype=np.int64)
        for lv in range(self.level_count):
            use = ~hot if lv == 0 else (lcls == FeatureClass.MEDIUM)
            if np.any(use):
                level_idx[lv, use] = self.level_index(feats[use], lv)
        return unique_idx, level_idx

    def pooled(self, unique_idx, level_idx):
        out = np.zeros((unique_idx.shape[0], self.dim))
        hot = unique_idx >= 0
        out[hot] = self.unique[unique_idx[hot]]
        for lv in range(self.level_count):
            use = level_idx[lv] >= 0
            out[use] += self.shared[lv][level_idx[lv, use]]
        return out

    def apply_gradient(self, unique_idx, level_idx, grads, lr):
        """SGD step on every row touched by the batch (duplicates accumulate)."""
        hot = unique_idx >= 0
        if np.any(hot):
            np.add.at(self.unique, unique_idx[hot], -lr * grads[hot])
        for lv in range(self.level_count):
            use = level_idx[lv] >= 0
            if np.any(use):
                np.add.at(self.shared[lv], level_idx[lv, use], -lr * grads[use])

    # -- migration ------------------------------------------------------

    def _pre_promotion_ref(self, sketch, feature):
        res = sketch.query(feature)
        if res.handle is not None:
            raise ValueError(f"feature {feature} already holds unique row {res.handle}")
        if res.cls != FeatureClass.HOT:
            raise ValueError(f"feature {feature} is {res.cls.name}, not HOT")
        return self.resolve(feature, lookup_class(res.cls, None))

    def promote(self, sketch: HotSketch, feature: int) -> MigrationEvent:
        """Give a hot feature a unique row seeded with its current shared embedding."""
        ref = self._pre_promotion_ref(sketch, feature)
        if not self.free_list:
            raise NoFreeRow(f"no free unique row for feature {feature}")
        row = self.free_list.pop()
        self.unique[row] = self.vector(ref)
        sketch.set_handle(feature, row)
        self.handle_of[int(feature)] = row
        return MigrationEvent(int(feature), Direction.PROMOTE, row, tuple(ref.rows))

    def demote(self, sketch: HotSketch, feature: int) -> MigrationEvent:
        """Drop a feature's unique row; its shared rows take over unchanged."""
        res = sketch.query(feature)
        if res.handle is None:
            raise HandleMissing(f"feature {feature} holds no unique row")
        row = res.handle
        sketch.clear_handle(feature)
        self._free(int(feature), row)
        return MigrationEvent(int(feature), Direction.DEMOTE, row)

    def _free(self, feature, row):
        self.handle_of.pop(feature, None)
        self.free_list.append(int(row))

    def reclaim(self, sketch: HotSketch):
        """Free rows whose owners were evicted from the sketch."""
        events = []
        for feature, row in sketch.drain_released():
            self._free(feature, row)
            events.append(MigrationEvent(feature, Direction.DEMOTE, row))
        return events

    def maintain(self, sketch: HotSketch):
        """One migration pass: reclaim, demote below-threshold, then promote.

        Promotions go in decreasing score order and stop (deferring the
        rest) once no free unique row is left.
        """
        events = self.reclaim(sketch)
        hot = sketch.config.hot_threshold
        feats, scores, handles = sketch.tracked()
        for f in feats[(handles >= 0) & (scores < hot)].tolist():
            events.append(self.demote(sketch, f))
        feats, scores, handles = sketch.tracked()
        cand = (handles < 0) & (scores >= hot)
        order = np.argsort(-scores[cand], kind="stable")
        for f in feats[cand][order].tolist():
            if not self.free_list:
                break
            events.append(self.promote(sketch, f))
        return events

    def check_invariants(self, sketch: Optional[HotSketch] = None):
        k = self.plan.hot_rows
        assert len(self.handle_of) + len(self.free_list) == k, "row conservation broken"
        assert len(set(self.free_list)) == len(self.free_list), "duplicate free row"
        assert self.allocated_bytes() <= self.plan.budget_bytes, "budget exceeded"
        if sketch is not None:
            feats, _, handles = sketch.tracked()
            live = {int(f): int(h) for f, h in zip(feats.tolist(), handles.tolist()) if h >= 0}
            pending = {int(f): int(h) for f, h in sketch.released}
            assert {**live, **pending} == self.handle_of, "sketch handles out of sync"

    # -- persistence ----------------------------------------------------

    _MAGIC = b"ETB1"
    _HEAD = struct.Struct("<4sQQQdQQQQQ")

    def to_bytes(self) -> bytes:
        p = self.plan
        parts = [self._HEAD.pack(self._MAGIC, p.n, p.dim, p.budget_bytes, p.hot_percentage,
                                 p.scalar_bytes, p.slots_per_bucket, p.hot_rows,
                                 p.level_count, MODES.index(p.mode)),
                 struct.pack("<Q", self.seed)]
        for rows, split in zip(p.shared_rows, p.level_split):
            parts.append(struct.pack("<Qd", rows, split))
        parts.append(self.unique.astype("<f8").tobytes())
        parts.extend(t.astype("<f8").tobytes() for t in self.shared)
        parts.append(struct.pack("<Q", len(self.free_list)))
        parts.append(np.asarray(self.free_list, dtype="<i8").tobytes())
        pairs = np.array(list(self.handle_of.items()), dtype=[("f", "<u8"), ("r", "<i8")])
        parts.append(struct.pack("<Q", len(pairs)))
        parts.append(pairs.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "EmbeddingStore":
        data = bytes(data)
        if data[:4] != cls._MAGIC:
            raise VersionMismatch(f"expected magic {cls._MAGIC!r}, got {data[:4]!r}")
        try:
            (_, n, dim, budget, hp, sb, spb, k, levels, mode) = cls._HEAD.unpack_from(data)
            off = cls._HEAD.size
            (seed,) = struct.unpack_from("<Q", data, off)
            off += 8
            rows, split = [], []
            for _ in range(levels):
                r, s = struct.unpack_from("<Qd", data, off)
                rows.append(r)
                split.append(s)
                off += 16
            plan = BudgetPlan(n, dim, budget, hp, k, tuple(rows), tuple(split), sb, spb, MODES[mode])
            store = cls.__new__(cls)
            store.plan, store.seed = plan, seed
            store._keys = [np.uint64(seed_key(seed, salt=100 + lv)) for lv in range(levels)]

            def take(count):
                nonlocal off
                arr = np.frombuffer(data, dtype="<f8", count=count, offset=off)
                off += 8 * count
                return arr

            store.unique = take(k * dim).reshape(k, dim).astype(np.float64)
            store.shared = [take(r * dim).reshape(r, dim).astype(np.float64) for r in rows]
            (nf,) = struct.unpack_from("<Q", data, off)
            off += 8
            store.free_list = np.frombuffer(data, dtype="<i8", count=nf, offset=off).tolist()
            off += 8 * nf
            (nh,) = struct.unpack_from("<Q", data, off)
            off += 8
            pairs = np.frombuffer(data, dtype=[("f", "<u8"), ("r", "<i8")], count=nh, offset=off)
            off += 16 * nh
        except (struct.error, ValueError, IndexError) as exc:
            raise CorruptState(f"cannot decode embedding tables: {exc}") from exc
        if off != len(data):
            raise CorruptState("trailing bytes after embedding tables")
        store.handle_of = dict(zip(pairs["f"].tolist(), pairs["r"].tolist()))
        return store
