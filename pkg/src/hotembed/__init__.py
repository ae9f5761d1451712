"""Embedding compression driven by a bucketized top-k importance sketch.

Hot features get exclusive embedding rows, medium features pool rows from
several shared hash tables and cold features share one hashed row.
"""
from .bounds import monte_carlo_retention, optimal_c, theorem1_bound, theorem3_bound
from .errors import (BudgetTooSmall, ConfigError, ConfigMismatch, CorruptState, DomainError,
                     FeatureNotTracked, HandleMissing, HotEmbedError, NoFreeRow, NonFinite,
                     ParseError, StateError, VersionMismatch)
from .evaluation import (ExactTopK, SpaceSaving, recall_at_k, reference_spacesaving,
                         sliding_window_recall, throughput_bench)
from .experiments import PRESETS, RunConfig, load_config, parse_config, resume_experiment, run_experiment
from .importance import score_from_frequency, score_from_gradient, scores_from_gradients
from .sketch import FeatureClass, HotSketch, Outcome, QueryResult, SketchConfig, SlotOutcome
from .store import BudgetPlan, EmbeddingStore, plan_budget, plan_hash_only, plan_uncompressed
from .trainer import TrainConfig, Trainer, shadow_deviation, train
from .workload import Drift, ZipfStream, ZipfStreamSpec, export_trace, generate, ingest_trace

__version__ = "0.1.0"
