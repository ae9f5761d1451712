"""SGD training of a logistic predictor over compressed embeddings.

The model is deliberately small: ``p = sigmoid(u . e_f + b)`` where ``e_f``
is the (pooled) embedding of the event's feature. That is enough to exercise
lookup, scatter-update, importance accounting, migration and the gradient
deviation against an uncompressed shadow run.
"""
import csv
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigMismatch
from .importance import scores_from_gradients
from .sketch import FeatureClass, HotSketch, SketchConfig
from .store import EmbeddingStore, lookup_classes, plan_budget, plan_hash_only, plan_uncompressed

MODES = {"cafe": "CAFE", "hash": "HashOnly", "full": "Uncompressed"}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 64
    steps: int = 1000
    maintenance_interval: int = 100
    mode: str = "cafe"
    importance: str = "gradient"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")
        if self.maintenance_interval < 1:
            raise ValueError("maintenance_interval must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {sorted(MODES)}")
        if self.importance not in ("gradient", "frequency"):
            raise ValueError("importance must be 'gradient' or 'frequency'")


class StepMetrics(NamedTuple):
    step: int
    loss: float
    hot_hits: int
    medium_hits: int
    cold_hits: int
    migrations: int


class StepRecord(NamedTuple):
    metrics: StepMetrics
    features: np.ndarray
    classes: np.ndarray
    embeddings: np.ndarray
    grads: np.ndarray


@dataclass
class DeviationTrace:
    epsilon: list = field(default_factory=list)
    epsilon_hot: list = field(default_factory=list)

    def append(self, eps, eps_hot):
        self.epsilon.append(float(eps))
        self.epsilon_hot.append(float(eps_hot))

    @property
    def mean_sq(self):
        e = np.asarray(self.epsilon)
        return float(np.mean(e * e)) if e.size else 0.0

    @property
    def running_mean_sq(self):
        e = np.asarray(self.epsilon)
        return np.cumsum(e * e) / np.arange(1, e.size + 1)


def forward_backward(emb, u, b, y):
    """Mean logistic loss and its gradients.

    Returns ``(loss, d_emb, d_u, d_b)`` with ``d_emb`` the per-event
    gradient w.r.t. the pooled embedding rows of ``emb``.
    """
    z = emb @ u + b
    y = y.astype(np.float64)
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    dz = (1.0 / (1.0 + np.exp(-z)) - y) / emb.shape[0]
    return loss, np.outer(dz, u), emb.T @ dz, float(dz.sum())


def make_store(mode, n, dim, budget_bytes, seed=0, **plan_kw):
    if mode == "cafe":
        plan = plan_budget(n, dim, budget_bytes, **plan_kw)
    elif mode == "hash":
        plan = plan_hash_only(n, dim, budget_bytes)
    else:
        plan = plan_uncompressed(n, dim)
    return EmbeddingStore(plan, seed=seed)


def make_sketch(store, hot_threshold, medium_threshold=0.0, decay_coefficient=0.98,
                decay_interval=None, batch_size=64, seed=0):
    """Sketch sized to the plan: one bucket per unique row."""
    plan = store.plan
    return HotSketch(SketchConfig(
        bucket_count=plan.hot_rows, slots_per_bucket=plan.slots_per_bucket,
        hot_threshold=hot_threshold, medium_threshold=medium_threshold,
        decay_coefficient=decay_coefficient,
        decay_interval=decay_interval or batch_size, seed=seed))


class Trainer:
    """Stateful training loop; one :meth:`step` consumes one batch."""

    def __init__(self, source, config: TrainConfig, store: EmbeddingStore,
                 sketch: Optional[HotSketch] = None):
        if config.mode == "cafe" and sketch is None:
            raise ValueError("CAFE mode needs a sketch")
        if config.mode != store.plan.mode:
            raise ConfigMismatch(f"train mode {config.mode!r} vs store mode {store.plan.mode!r}")
        self.source = source
        self.config = config
        self.store = store
        self.sketch = sketch if config.mode == "cafe" else None
        d = store.dim
        rng = np.random.default_rng([config.seed, 7])
        self.u = rng.normal(0.0, 1.0 / np.sqrt(d), d)
        self.b = 0.0
        self.step_count = 0
        self.cursor = 0
        self.history = []
        # shadow runs initialize each row lazily from the main run's first lookup
        self.initialized = np.zeros(store.plan.n, dtype=bool) if config.mode == "full" else None

    def _classes(self, feats):
        if self.sketch is None:
            return np.zeros(len(feats), np.int8), np.full(len(feats), -1, np.int64)
        scores, handles, found = self.sketch.query_many(feats)
        return lookup_classes(self.sketch.classify_many(scores, found), handles), handles

    def step(self, init_from=None) -> StepRecord:
        cfg = self.config
        feats, y = self.source.batch(self.cursor, cfg.batch_size)
        if len(feats) == 0:
            raise StopIteration("stream exhausted")
        lcls, handles = self._classes(feats)
        uidx, lidx = self.store.gather(feats, lcls, handles)
        if init_from is not None:
            self._lazy_init(feats, init_from)
        emb = self.store.pooled(uidx, lidx)
        loss, d_emb, d_u, d_b = forward_backward(emb, self.u, self.b, y)

        self.store.apply_gradient(uidx, lidx, d_emb, cfg.learning_rate)
        self.u -= cfg.learning_rate * d_u
        self.b -= cfg.learning_rate * d_b

        migrations = 0
        if self.sketch is not None:
            if cfg.importance == "gradient":
                # per-event loss gradient, independent of the batch size
                deltas = scores_from_gradients(d_emb * len(feats))
            else:
                deltas = np.ones(len(feats))
            self.sketch.insert_many(feats, deltas)
            migrations += len(self.store.reclaim(self.sketch))
        self.step_count += 1
        self.cursor += len(feats)
        if self.sketch is not None and self.step_count % cfg.maintenance_interval == 0:
            migrations += len(self.store.maintain(self.sketch))
            self.store.check_invariants(self.sketch)

        counts = np.bincount(lcls, minlength=3)
        m = StepMetrics(self.step_count, loss, int(counts[FeatureClass.HOT]),
                        int(counts[FeatureClass.MEDIUM]), int(counts[FeatureClass.COLD]), migrations)
        self.history.append(m)
        return StepRecord(m, feats, lcls, emb, d_emb)

    def _lazy_init(self, feats, init_from):
        src_feats, src_emb = init_from
        if not np.array_equal(src_feats, feats):
            raise ConfigMismatch("shadow run received a different batch")
        idx = feats.astype(np.int64)
        new = ~self.initialized[idx]
        if np.any(new):
            first = np.unique(idx[new], return_index=True)[1]
            rows = idx[new][first]
            self.store.shared[0][rows] = src_emb[new][first]
            self.initialized[rows] = True

    def run(self, steps=None):
        steps = self.config.steps - self.step_count if steps is None else steps
        for _ in range(steps):
            self.step()
        return self.history

    # -- checkpointing --------------------------------------------------

    def state(self):
        st = {"step": self.step_count, "cursor": self.cursor, "u": self.u.copy(),
              "b": np.float64(self.b), "store": np.frombuffer(self.store.to_bytes(), np.uint8),
              "history": np.array(self.history, dtype=np.float64).reshape(-1, 6)}
        if self.sketch is not None:
            st["sketch"] = np.frombuffer(self.sketch.snapshot(), np.uint8)
        if self.initialized is not None:
            st["initialized"] = self.initialized.copy()
        return st

    def load_state(self, st):
        self.step_count = int(st["step"])
        self.cursor = int(st["cursor"])
        self.u = np.array(st["u"], dtype=np.float64)
        self.b = float(st["b"])
        self.store = EmbeddingStore.from_bytes(bytes(st["store"]))
        if "sketch" in st:
            self.sketch = HotSketch.restore(bytes(st["sketch"]))
        if "initialized" in st:
            self.initialized = np.array(st["initialized"], dtype=bool)
        self.history = [StepMetrics(int(r[0]), float(r[1]), int(r[2]), int(r[3]), int(r[4]), int(r[5]))
                        for r in np.asarray(st["history"])]


def step_deviation(rec: StepRecord, shadow_rec: StepRecord):
    """Deviation of per-feature embedding gradients between two runs.

    Gradients of repeated features are summed per feature first, as both
    runs would apply them. Returns ``(eps, eps_hot)`` where ``eps_hot``
    restricts the sum to features the main run served from unique rows.
    """
    if not np.array_equal(rec.features, shadow_rec.features):
        raise ConfigMismatch("runs consumed different batches")
    uniq, inv = np.unique(rec.features, return_inverse=True)
    diff = np.zeros((len(uniq), rec.grads.shape[1]))
    np.add.at(diff, inv, rec.grads - shadow_rec.grads)
    sq = np.einsum("ij,ij->i", diff, diff)
    hot = np.zeros(len(uniq), dtype=bool)
    hot[inv[rec.classes == FeatureClass.HOT]] = True
    return float(np.sqrt(sq.sum())), float(np.sqrt(sq[hot].sum()))


class ShadowPair:
    """A compressed run and its uncompressed shadow, stepped in lockstep."""

    def __init__(self, main: Trainer, shadow: Trainer):
        if shadow.config.mode != "full":
            raise ConfigMismatch("shadow run must be uncompressed")
        if main.config.batch_size != shadow.config.batch_size:
            raise ConfigMismatch("batch sizes differ")
        if main.cursor != shadow.cursor or main.step_count != shadow.step_count:
            raise ConfigMismatch("runs are not aligned")
        if main.step_count == 0 and (not np.array_equal(main.u, shadow.u) or main.b != shadow.b):
            raise ConfigMismatch("predictor initializations differ")
        self.main = main
        self.shadow = shadow
        self.trace = DeviationTrace()

    def step(self):
        rec = self.main.step()
        srec = self.shadow.step(init_from=(rec.features, rec.embeddings))
        self.trace.append(*step_deviation(rec, srec))
        return rec, srec

    def run(self, steps):
        for _ in range(steps):
            self.step()
        return self.trace


def shadow_deviation(main: Trainer, shadow: Trainer, steps: int) -> DeviationTrace:
    """Run ``main`` and an uncompressed ``shadow`` together, tracing eps_t."""
    return ShadowPair(main, shadow).run(steps)


def train(source, store, sketch, config: TrainConfig, shadow=False):
    """Train for ``config.steps`` steps.

    Returns ``(metrics, trace)``; ``trace`` is None unless ``shadow`` is set,
    in which case an uncompressed shadow run is stepped alongside.
    """
    trainer = Trainer(source, config, store, sketch)
    if not shadow:
        return trainer.run(), None
    shadow_trainer = Trainer(source, replace(config, mode="full"),
                             EmbeddingStore(plan_uncompressed(store.plan.n, store.dim), seed=store.seed))
    trace = shadow_deviation(trainer, shadow_trainer, config.steps)
    return trainer.history, trace


def write_metrics_csv(path, metrics, trace=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "hot_hits", "medium_hits", "cold_hits", "migrations", "epsilon"])
        for i, m in enumerate(metrics):
            eps = repr(trace.epsilon[i]) if trace is not None else ""
            w.writerow([m.step, repr(m.loss), m.hot_hits, m.medium_hits, m.cold_hits, m.migrations, eps])
