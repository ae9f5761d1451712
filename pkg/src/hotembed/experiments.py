"""Config-driven experiment runner with resumable checkpoints.

An experiment is a fixed sequence of units (one recall measurement, one
window of a drifting stream, a chunk of training steps, ...). Progress is
the index of the next unit plus the runner's state, so a run can stop after
any unit and resume to exactly the same outputs.
"""
import configparser
import csv
import hashlib
import io
import json
import os
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bounds import monte_carlo_retention, theorem3_bound
from .errors import ConfigError, CorruptState, VersionMismatch
from .evaluation import ExactTopK, recall_at_k, throughput_bench
from .sketch import HotSketch, SketchConfig
from .store import EmbeddingStore, plan_uncompressed
from .trainer import DeviationTrace, ShadowPair, TrainConfig, Trainer, make_sketch, make_store
from .workload import Drift, ZipfStream, ZipfStreamSpec

CHECKPOINT_VERSION = 1
KINDS = ("recall_sweep", "drift_recall", "train_compare", "theory_grid", "throughput")

REQUIRED = object()

# section -> key -> (parser, default)
_int = int
_float = float


def _ints(s):
    return [int(x) for x in s.replace(",", " ").split()]


def _floats(s):
    return [float(x) for x in s.replace(",", " ").split()]


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


SCHEMA = {
    "experiment": {
        "kind": (str, REQUIRED),
        "name": (str, ""),
        "seeds": (_ints, "0"),
        "output_dir": (str, "results"),
        "checkpoint_every": (_int, "1"),
    },
    "workload": {
        "n": (_int, "100000"),
        "z": (_float, "1.1"),
        "events": (_int, "1000000"),
        "window_events": (_int, "0"),
        "permutation_fraction": (_float, "0.0"),
        "windows": (_int, "0"),
    },
    "sketch": {
        "slots_per_bucket": (_int, "4"),
        "hot_threshold": (_float, "500"),
        "medium_threshold": (_float, "0"),
        "decay_coefficient": (_float, "1.0"),
        "decay_interval": (_int, "0"),
    },
    "store": {
        "dim": (_int, "16"),
        "compression_ratio": (_float, "1000"),
        "hot_percentage": (_float, "0.7"),
        "level_count": (_int, "2"),
    },
    "trainer": {
        "learning_rate": (_float, "0.05"),
        "batch_size": (_int, "64"),
        "steps": (_int, "10000"),
        "maintenance_interval": (_int, "100"),
        "importance": (str, "gradient"),
        "chunk_steps": (_int, "1000"),
        "shadow": (_bool, "true"),
    },
    "recall": {
        "k": (_int, "1000"),
        "memory_slots": (_ints, "1500 2000 4000 8000 16000"),
        "c_values": (_ints, "4 8 16 32"),
    },
    "theory": {
        "gamma": (_floats, "0.1 0.3 0.5"),
        "z": (_floats, "1.05 1.1 1.2"),
        "w": (_ints, "10000"),
        "c": (_ints, "4"),
        "mc_trials": (_int, "0"),
        "mc_gamma": (_floats, "0.1 0.3 0.5"),
        "mc_c": (_ints, "2 4 8"),
        "mc_w": (_ints, "10 100"),
    },
    "throughput": {
        "c_values": (_ints, "4 8 16 32"),
        "w_values": (_ints, "1000"),
        "ops": (_int, "1000000"),
        "repeats": (_int, "3"),
    },
}


PRESETS = {
    "fig12a_recall_vs_c": """
[experiment]
kind = recall_sweep
name = fig12a_recall_vs_c
seeds = 0 1 2 3 4
output_dir = results/fig12a_recall_vs_c
[workload]
n = 100000
z = 1.05
events = 1000000
[recall]
k = 1000
memory_slots = 1500 2000 4000 8000 16000
c_values = 4 8 16 32
""",
    "fig17cd_drift_recall": """
[experiment]
kind = drift_recall
name = fig17cd_drift_recall
seeds = 0
output_dir = results/fig17cd_drift_recall
[workload]
n = 100000
z = 1.1
window_events = 200000
permutation_fraction = 0.1
windows = 20
[sketch]
slots_per_bucket = 4
decay_coefficient = 0.98
decay_interval = 10000
[recall]
k = 1000
""",
    "theory_fig8_grid": """
[experiment]
kind = theory_grid
name = theory_fig8_grid
output_dir = results/theory_fig8_grid
[theory]
gamma = 0.0001 0.0003 0.001 0.003 0.01 0.03 0.1 0.3
z = 1.05 1.1 1.2 1.4 1.6 1.8 2.0
w = 10000
c = 4
mc_trials = 1000
mc_gamma = 0.1 0.3 0.5
mc_c = 2 4 8
mc_w = 10 100
""",
    "train_compare_1000x": """
[experiment]
kind = train_compare
name = train_compare_1000x
seeds = 0 1 2 3 4
output_dir = results/train_compare_1000x
[workload]
n = 100000
z = 1.1
[sketch]
hot_threshold = 5
medium_threshold = 1
decay_coefficient = 0.98
[store]
dim = 16
compression_ratio = 1000
hot_percentage = 0.7
level_count = 2
[trainer]
learning_rate = 0.05
batch_size = 64
steps = 10000
maintenance_interval = 100
chunk_steps = 1000
""",
    "throughput": """
[experiment]
kind = throughput
name = throughput
output_dir = results/throughput
[throughput]
c_values = 4 8 16 32
w_values = 1000
ops = 1000000
""",
}


class RunConfig:
    """Parsed, typed experiment configuration.

    ``values[section][key]`` holds parsed values; ``text`` is the canonical
    INI text used for hashing and embedded in checkpoints.
    """

    def __init__(self, values):
        self.values = values
        kind = values["experiment"]["kind"]
        if kind not in KINDS:
            raise ConfigError("experiment.kind", f"unknown kind {kind!r}; expected one of {KINDS}")
        self._validate()

    def __getitem__(self, section):
        return self.values[section]

    @property
    def kind(self):
        return self.values["experiment"]["kind"]

    @property
    def seeds(self):
        return self.values["experiment"]["seeds"]

    @property
    def output_dir(self):
        return Path(os.environ.get("HOTEMBED_OUTPUT_DIR") or self.values["experiment"]["output_dir"])

    @property
    def text(self):
        cp = configparser.ConfigParser(interpolation=None)
        for section, keys in self._raw.items():
            cp[section] = dict(sorted(keys.items()))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @property
    def digest(self):
        return hashlib.sha256(self.text.encode()).hexdigest()

    def _validate(self):
        v = self.values
        if not v["experiment"]["seeds"]:
            raise ConfigError("experiment.seeds", "at least one seed is required")
        if v["experiment"]["checkpoint_every"] < 1:
            raise ConfigError("experiment.checkpoint_every", "must be >= 1")
        if self.kind in ("recall_sweep", "drift_recall", "train_compare"):
            if v["workload"]["n"] < 1:
                raise ConfigError("workload.n", "must be >= 1")
        if self.kind == "drift_recall":
            for key in ("window_events", "windows"):
                if v["workload"][key] < 1:
                    raise ConfigError(f"workload.{key}", "required for drift_recall")
        if self.kind == "train_compare":
            if v["trainer"]["chunk_steps"] < 1:
                raise ConfigError("trainer.chunk_steps", "must be >= 1")
            if v["trainer"]["importance"] not in ("gradient", "frequency"):
                raise ConfigError("trainer.importance", "must be gradient or frequency")


def parse_config(text, overrides=()):
    """Parse INI ``text``; ``overrides`` are ``section.key=value`` strings."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc)) from None
    for item in overrides:
        path, sep, value = item.partition("=")
        section, dot, key = path.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(item, "override must look like section.key=value")
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][key] = value.strip()
    raw = {}
    values = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(section, "unknown section")
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"{section}.{key}", "unknown field")
    for section, fields in SCHEMA.items():
        values[section] = {}
        raw[section] = {}
        for key, (conv, default) in fields.items():
            if cp.has_option(section, key):
                text_value = cp[section][key]
            elif default is REQUIRED:
                raise ConfigError(f"{section}.{key}", "missing required field")
            else:
                text_value = default
            try:
                values[section][key] = conv(text_value)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}", str(exc)) from None
            raw[section][key] = text_value.strip()
    cfg = RunConfig(values)
    cfg._raw = raw
    return cfg


def load_config(source, overrides=()):
    """Load a preset name or an INI file path."""
    if source in PRESETS:
        return parse_config(PRESETS[source], overrides)
    path = Path(source)
    if not path.exists():
        raise ConfigError("<file>", f"no preset or file named {source!r}")
    return parse_config(path.read_text(), overrides)


# -- experiment kinds -------------------------------------------------------
#
# Every runner exposes ``units`` (total count), ``run_unit(i)``,
# ``state() -> (json_dict, arrays)``, ``load(json_dict, arrays)`` and
# ``rows`` (list of dicts written to metrics.csv) and ``summary()``.


class RecallSweep:
    """Recall@k across memory sizes and slots per bucket at matched memory."""

    columns = ["seed", "memory_slots", "c", "w", "recall"]

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        r = cfg["recall"]
        self.grid = [(s, m, c) for s in cfg.seeds for m in r["memory_slots"] for c in r["c_values"]]
        self.units = len(self.grid)
        self.rows = []
        self._cache = None

    def _stream(self, seed):
        if self._cache is None or self._cache[0] != seed:
            wl = self.cfg["workload"]
            feats, _ = ZipfStream(ZipfStreamSpec(wl["n"], wl["z"], wl["events"], seed=seed)).batch(0, wl["events"])
            oracle = ExactTopK(self.cfg["recall"]["k"])
            oracle.add_many(feats)
            self._cache = (seed, feats, oracle)
        return self._cache[1], self._cache[2]

    def run_unit(self, i):
        seed, mem, c = self.grid[i]
        feats, oracle = self._stream(seed)
        w = max(1, mem // c)
        sk = HotSketch(SketchConfig(w, c, seed=seed))
        sk.insert_many(feats, np.ones(len(feats)))
        self.rows.append({"seed": seed, "memory_slots": mem, "c": c, "w": w,
                          "recall": recall_at_k(sk, oracle)})

    def state(self):
        return {"rows": self.rows}, {}

    def load(self, meta, arrays):
        self.rows = [dict(r) for r in meta["rows"]]

    def summary(self):
        cs = self.cfg["recall"]["c_values"]
        out = {"mean_recall": {}}
        for mem in self.cfg["recall"]["memory_slots"]:
            out["mean_recall"][str(mem)] = {
                str(c): float(np.mean([r["recall"] for r in self.rows if r["memory_slots"] == mem and r["c"] == c]))
                for c in cs if any(r["memory_slots"] == mem and r["c"] == c for r in self.rows)}
        out["ordering"] = middle_beats_extremes(self.rows)
        return out


def middle_beats_extremes(rows, middle=(8, 16), extremes=(4, 32), min_slots=1500):
    """Per (seed, memory) point: is min recall over ``middle`` c values at
    least the max over ``extremes``? Returns counts and the holding share."""
    points = sorted({(r["seed"], r["memory_slots"]) for r in rows if r["memory_slots"] >= min_slots})
    held = 0
    for seed, mem in points:
        rec = {r["c"]: r["recall"] for r in rows if r["seed"] == seed and r["memory_slots"] == mem}
        if all(c in rec for c in middle + extremes):
            held += min(rec[c] for c in middle) >= max(rec[c] for c in extremes)
    return {"points": len(points), "held": int(held), "share": held / len(points) if points else 0.0}


class DriftRecall:
    """Window-by-window recall on a drifting stream.

    Units are (seed, window) pairs. The sketch holds ``4k`` slots with
    ``k / (c/4)`` buckets so memory stays at four slots per reported feature.
    """

    columns = ["seed", "window", "recall_local", "recall_cumulative", "warmup"]

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        wl = cfg["workload"]
        self.windows = wl["windows"]
        self.units = len(cfg.seeds) * self.windows
        self.rows = []
        self._fresh(cfg.seeds[0])

    def _spec(self, seed):
        wl = self.cfg["workload"]
        return ZipfStreamSpec(wl["n"], wl["z"], wl["window_events"] * self.windows, seed=seed,
                              drift=Drift(wl["window_events"], wl["permutation_fraction"]))

    def _fresh(self, seed):
        sc, k = self.cfg["sketch"], self.cfg["recall"]["k"]
        c = sc["slots_per_bucket"]
        w = max(1, 4 * k // c)
        self.sketch = HotSketch(SketchConfig(
            w, c, hot_threshold=sc["hot_threshold"], medium_threshold=sc["medium_threshold"],
            decay_coefficient=sc["decay_coefficient"],
            decay_interval=sc["decay_interval"] or (1 << 62), seed=seed))
        self.cumulative = ExactTopK(k)

    def run_unit(self, i):
        seed = self.cfg.seeds[i // self.windows]
        win = i % self.windows
        if win == 0 and i > 0:
            self._fresh(seed)
        we = self.cfg["workload"]["window_events"]
        feats, _ = ZipfStream(self._spec(seed)).batch(win * we, we)
        self.sketch.insert_many(feats, np.ones(len(feats)))
        local = ExactTopK(self.cumulative.k)
        local.add_many(feats)
        self.cumulative.add_many(feats)
        self.rows.append({"seed": seed, "window": win,
                          "recall_local": recall_at_k(self.sketch, local),
                          "recall_cumulative": recall_at_k(self.sketch, self.cumulative),
                          "warmup": int(win == 0)})

    def state(self):
        feats, scores = self.cumulative.to_arrays()
        return {"rows": self.rows}, {"sketch": np.frombuffer(self.sketch.snapshot(), np.uint8),
                                     "cum_feats": feats, "cum_scores": scores}

    def load(self, meta, arrays):
        self.rows = [dict(r) for r in meta["rows"]]
        self.sketch = HotSketch.restore(bytes(arrays["sketch"]))
        self.cumulative = ExactTopK.from_arrays(self.cfg["recall"]["k"], arrays["cum_feats"], arrays["cum_scores"])

    def summary(self):
        post = [r for r in self.rows if not r["warmup"]]
        return {"min_recall_local": min((r["recall_local"] for r in post), default=None),
                "min_recall_cumulative": min((r["recall_cumulative"] for r in post), default=None),
                "post_warmup_windows": len(post)}


class TrainCompare:
    """Paired CAFE and HashOnly training at one byte budget, with shadows.

    Units are chunks of ``chunk_steps`` steps of one (seed, mode) run.
    """

    modes = ("cafe", "hash")
    columns = ["seed", "mode", "step", "loss", "hot_hits", "medium_hits", "cold_hits",
               "migrations", "epsilon"]

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        tr = cfg["trainer"]
        self.chunks = -(-tr["steps"] // tr["chunk_steps"])
        self.runs = [(s, m) for s in cfg.seeds for m in self.modes]
        self.units = len(self.runs) * self.chunks
        self.rows = []
        self.results = []
        self.pair = None

    def budget(self):
        wl, st = self.cfg["workload"], self.cfg["store"]
        return int(wl["n"] * st["dim"] * 8 / st["compression_ratio"])

    def _build(self, seed, mode):
        wl, st, sc, tr = (self.cfg[s] for s in ("workload", "store", "sketch", "trainer"))
        src = ZipfStream(ZipfStreamSpec(wl["n"], wl["z"], tr["steps"] * tr["batch_size"], seed=seed))
        kw = {"hot_percentage": st["hot_percentage"], "level_count": st["level_count"]} if mode == "cafe" else {}
        store = make_store(mode, wl["n"], st["dim"], self.budget(), seed=seed, **kw)
        sketch = None
        if mode == "cafe":
            sketch = make_sketch(store, sc["hot_threshold"], sc["medium_threshold"], sc["decay_coefficient"],
                                 sc["decay_interval"] or None, tr["batch_size"], seed=seed)
        config = TrainConfig(tr["learning_rate"], tr["batch_size"], tr["steps"], tr["maintenance_interval"],
                             mode, tr["importance"], seed)
        main = Trainer(src, config, store, sketch)
        shadow = None
        if tr["shadow"]:
            shadow = Trainer(src, replace(config, mode="full"),
                             EmbeddingStore(plan_uncompressed(wl["n"], st["dim"]), seed=seed))
        return main, shadow

    def _pair(self, i):
        seed, mode = self.runs[i // self.chunks]
        if self.pair is None or self.pair[0] != (seed, mode):
            main, shadow = self._build(seed, mode)
            sp = ShadowPair(main, shadow) if shadow is not None else None
            self.pair = ((seed, mode), main, sp)
        return self.pair

    def run_unit(self, i):
        (seed, mode), main, sp = self._pair(i)
        tr = self.cfg["trainer"]
        todo = min(tr["chunk_steps"], tr["steps"] - main.step_count)
        start = main.step_count
        for _ in range(todo):
            sp.step() if sp is not None else main.step()
        eps = sp.trace.epsilon if sp is not None else None
        for m in main.history[start:]:
            self.rows.append({"seed": seed, "mode": mode, **m._asdict(),
                              "epsilon": eps[m.step - 1] if eps is not None else ""})
        if main.step_count >= tr["steps"]:
            losses = np.array([m.loss for m in main.history])
            q = max(1, len(losses) // 4)
            eps_sq = sp.trace.mean_sq if sp is not None else None
            self.results.append({"seed": seed, "mode": mode, "last_quartile_loss": float(losses[-q:].mean()),
                                 "mean_eps_sq": eps_sq, "hot_rows": main.store.plan.hot_rows,
                                 "total_bytes": main.store.plan.total_bytes})
            self.pair = None

    def state(self):
        meta = {"rows": self.rows, "results": self.results, "active": None}
        arrays = {}
        if self.pair is not None:
            key, main, sp = self.pair
            meta["active"] = list(key)
            for name, val in main.state().items():
                arrays["main/" + name] = val
            if sp is not None:
                for name, val in sp.shadow.state().items():
                    arrays["shadow/" + name] = val
                meta["epsilon"] = sp.trace.epsilon
                meta["epsilon_hot"] = sp.trace.epsilon_hot
        return meta, arrays

    def load(self, meta, arrays):
        self.rows = [dict(r) for r in meta["rows"]]
        self.results = [dict(r) for r in meta["results"]]
        self.pair = None
        if meta["active"] is not None:
            seed, mode = meta["active"]
            main, shadow = self._build(seed, mode)
            main.load_state({k[5:]: v for k, v in arrays.items() if k.startswith("main/")})
            sp = None
            if shadow is not None:
                shadow.load_state({k[7:]: v for k, v in arrays.items() if k.startswith("shadow/")})
                sp = ShadowPair.__new__(ShadowPair)
                sp.main, sp.shadow = main, shadow
                sp.trace = DeviationTrace(list(meta["epsilon"]), list(meta["epsilon_hot"]))
            self.pair = ((seed, mode), main, sp)

    def summary(self):
        out = {"budget_bytes": self.budget(), "per_seed": [], "loss_wins": 0, "eps_wins": 0}
        by = {(r["seed"], r["mode"]): r for r in self.results}
        for seed in self.cfg.seeds:
            c, h = by.get((seed, "cafe")), by.get((seed, "hash"))
            if c is None or h is None:
                continue
            row = {"seed": seed, "CAFE_loss": c["last_quartile_loss"], "Hash_loss": h["last_quartile_loss"],
                   "CAFE_eps_sq": c["mean_eps_sq"], "Hash_eps_sq": h["mean_eps_sq"]}
            out["per_seed"].append(row)
            out["loss_wins"] += row["CAFE_loss"] < row["Hash_loss"]
            if c["mean_eps_sq"] is not None:
                out["eps_wins"] += row["CAFE_eps_sq"] < row["Hash_eps_sq"]
        if out["per_seed"]:
            out["CAFE_loss"] = float(np.mean([r["CAFE_loss"] for r in out["per_seed"]]))
            out["Hash_loss"] = float(np.mean([r["Hash_loss"] for r in out["per_seed"]]))
        return out


class TheoryGrid:
    """Zipf-aware bound over a (gamma, z, w, c) grid, plus optional
    Monte-Carlo retention against the distribution-free bound."""

    columns = ["table", "gamma", "z", "w", "c", "bound", "empirical", "stderr", "trials"]

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        t = cfg["theory"]
        self.grid = [("theorem3", g, z, w, c) for g in t["gamma"] for z in t["z"] for w in t["w"] for c in t["c"]]
        if t["mc_trials"] > 0:
            self.grid += [("theorem1_mc", g, "", w, c) for g in t["mc_gamma"] for c in t["mc_c"] for w in t["mc_w"]]
        self.units = len(self.grid)
        self.rows = []

    def run_unit(self, i):
        table, g, z, w, c = self.grid[i]
        if table == "theorem3":
            self.rows.append({"table": table, "gamma": g, "z": z, "w": w, "c": c,
                              "bound": theorem3_bound(g, z, w, c), "empirical": "", "stderr": "", "trials": ""})
        else:
            est = monte_carlo_retention(g, w, c, trials=self.cfg["theory"]["mc_trials"], seed=self.cfg.seeds[0])
            self.rows.append({"table": table, "gamma": g, "z": "", "w": w, "c": c, "bound": est.bound,
                              "empirical": est.frequency, "stderr": est.stderr, "trials": est.trials})

    def state(self):
        return {"rows": self.rows}, {}

    def load(self, meta, arrays):
        self.rows = [dict(r) for r in meta["rows"]]

    def summary(self):
        mc = [r for r in self.rows if r["table"] == "theorem1_mc"]
        ok = [r["empirical"] >= r["bound"] - 3 * r["stderr"] for r in mc]
        return {"theorem3_points": sum(r["table"] == "theorem3" for r in self.rows),
                "mc_points": len(mc), "mc_within_bound": int(sum(ok))}


class ThroughputRun:
    """Insert/query ops per second for each c. Timings are not reproducible."""

    columns = ["c", "w", "ops", "insert_ops_per_s", "query_ops_per_s"]

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        t = cfg["throughput"]
        self.grid = [(c, w) for c in t["c_values"] for w in t["w_values"]]
        self.units = len(self.grid)
        self.rows = []

    def run_unit(self, i):
        t = self.cfg["throughput"]
        c, w = self.grid[i]
        for r in throughput_bench([c], [w], ops=t["ops"], seed=self.cfg.seeds[0], repeats=t["repeats"]):
            self.rows.append(r._asdict())

    def state(self):
        return {"rows": self.rows}, {}

    def load(self, meta, arrays):
        self.rows = [dict(r) for r in meta["rows"]]

    def summary(self):
        by_c = {}
        for r in self.rows:
            by_c.setdefault(r["c"], []).append(r)
        return {"insert_ops_per_s": {str(c): float(np.mean([r["insert_ops_per_s"] for r in rs]))
                                     for c, rs in by_c.items()},
                "query_ops_per_s": {str(c): float(np.mean([r["query_ops_per_s"] for r in rs]))
                                    for c, rs in by_c.items()}}


RUNNERS = {"recall_sweep": RecallSweep, "drift_recall": DriftRecall, "train_compare": TrainCompare,
           "theory_grid": TheoryGrid, "throughput": ThroughputRun}


# -- driver -----------------------------------------------------------------


class Experiment:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.runner = RUNNERS[cfg.kind](cfg)
        self.next_unit = 0

    @property
    def done(self):
        return self.next_unit >= self.runner.units

    def step(self):
        self.runner.run_unit(self.next_unit)
        self.next_unit += 1

    def save_checkpoint(self, path):
        meta, arrays = self.runner.state()
        header = {"version": CHECKPOINT_VERSION, "kind": self.cfg.kind, "config": self.cfg.text,
                  "config_hash": self.cfg.digest, "next_unit": self.next_unit, "state": meta}
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(json.dumps(header).encode(), np.uint8), **arrays)
        os.replace(tmp, path)

    @classmethod
    def from_checkpoint(cls, path, expect_config=None):
        try:
            with np.load(path, allow_pickle=False) as z:
                header = json.loads(bytes(z["__meta__"]).decode())
                arrays = {k: z[k] for k in z.files if k != "__meta__"}
        except (OSError, ValueError, KeyError) as exc:
            raise CorruptState(f"unreadable checkpoint {path}: {exc}") from None
        if header.get("version") != CHECKPOINT_VERSION:
            raise VersionMismatch(f"checkpoint version {header.get('version')}")
        cfg = parse_config(header["config"])
        if cfg.digest != header["config_hash"]:
            raise ConfigError("config_hash", "checkpoint config does not match its recorded hash")
        if expect_config is not None and expect_config.digest != header["config_hash"]:
            raise ConfigError("config_hash", "checkpoint was written by a different configuration")
        exp = cls(cfg)
        exp.runner.load(header["state"], arrays)
        exp.next_unit = int(header["next_unit"])
        return exp

    def write_outputs(self, out_dir=None):
        out = Path(out_dir) if out_dir else self.cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.runner.columns, lineterminator="\n")
            w.writeheader()
            for r in self.runner.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        summary = {"experiment": self.cfg.kind, "name": self.cfg["experiment"]["name"],
                   "config_hash": self.cfg.digest, "units": self.runner.units,
                   "completed_units": self.next_unit, **self.runner.summary()}
        with open(out / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return summary

    def run(self, stop_after=None, checkpoint=None, progress=None):
        """Run remaining units. Returns True when finished, False when
        stopped early by ``stop_after`` (a checkpoint is then always saved)."""
        every = self.cfg["experiment"]["checkpoint_every"]
        ran = 0
        while not self.done:
            if stop_after is not None and ran >= stop_after:
                self.save_checkpoint(checkpoint or self.default_checkpoint())
                return False
            self.step()
            ran += 1
            if progress:
                progress(self.next_unit, self.runner.units)
            if checkpoint and self.next_unit % every == 0:
                self.save_checkpoint(checkpoint)
        return True

    def default_checkpoint(self):
        return self.cfg.output_dir / "checkpoint.npz"


def run_experiment(source, overrides=(), stop_after=None, checkpoint=None, out_dir=None, progress=None):
    """Load a config (file or preset), run it and write outputs.

    Returns ``(finished, summary_or_None, experiment)``.
    """
    cfg = source if isinstance(source, RunConfig) else load_config(source, overrides)
    exp = Experiment(cfg)
    finished = exp.run(stop_after, checkpoint, progress)
    return finished, (exp.write_outputs(out_dir) if finished else None), exp


def resume_experiment(path, config=None, stop_after=None, checkpoint=None, out_dir=None, progress=None):
    exp = Experiment.from_checkpoint(path, config)
    finished = exp.run(stop_after, checkpoint or path, progress)
    return finished, (exp.write_outputs(out_dir) if finished else None), exp
