import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hotembed.bounds import monte_carlo_retention, optimal_c, theorem1_bound, theorem3_bound
from hotembed.errors import DomainError
from hotembed.evaluation import (ExactTopK, SpaceSaving, recall_at_k, reference_spacesaving,
                                 sliding_window_recall, throughput_bench)
from hotembed.sketch import HotSketch, SketchConfig
from hotembed.workload import ArrayStream, Drift, ZipfStream, ZipfStreamSpec


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=400), st.integers(1, 10))
def test_exact_topk_matches_brute_force(stream, k):
    oracle = ExactTopK(k)
    oracle.add_many(np.array(stream, dtype=np.uint64))
    counts = Counter(stream)
    brute = sorted(counts, key=lambda f: (-counts[f], f))[:k]
    assert oracle.top().tolist() == brute


def test_exact_topk_weighted_and_round_trip():
    o = ExactTopK(2)
    o.add_many([1, 2, 1, 3], [0.5, 2.0, 0.5, 1.5])
    o.add(3, 1.0)
    assert o.top().tolist() == [3, 2]
    back = ExactTopK.from_arrays(2, *o.to_arrays())
    assert back.scores == o.scores


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=1, max_size=500), st.integers(1, 12))
def test_single_bucket_sketch_is_spacesaving(stream, m):
    sk = HotSketch(SketchConfig(1, m))
    sk.insert_many(np.array(stream, dtype=np.uint64), np.ones(len(stream)))
    feats, scores, _ = sk.tracked()
    assert sorted(zip(feats.tolist(), scores.tolist())) == reference_spacesaving(stream, m)


def test_spacesaving_weighted_equivalence():
    rng = np.random.default_rng(0)
    stream = rng.integers(0, 100, 5000)
    deltas = rng.random(5000)
    sk = HotSketch(SketchConfig(1, 16))
    sk.insert_many(stream.astype(np.uint64), deltas)
    feats, scores, _ = sk.tracked()
    assert sorted(zip(feats.tolist(), scores.tolist())) == reference_spacesaving(stream, 16, deltas)


def test_spacesaving_basics():
    assert reference_spacesaving([1, 2, 1, 3], 10) == [(1, 2.0), (2, 1.0), (3, 1.0)]
    assert reference_spacesaving(list(range(50)), 1) == [(49, 50.0)]
    with pytest.raises(ValueError):
        SpaceSaving(0)


def test_recall_full_capacity():
    feats, _ = ZipfStream(ZipfStreamSpec(500, 1.1, 20_000, seed=1)).batch(0, 20_000)
    sk = HotSketch(SketchConfig(500, 4))
    sk.insert_many(feats, np.ones(len(feats)))
    oracle = ExactTopK(50)
    oracle.add_many(feats)
    assert recall_at_k(sk, oracle) == 1.0


def test_recall_counts_only_k_highest_slots():
    sk = HotSketch(SketchConfig(1, 4))
    sk.insert_many(np.array([1, 1, 1, 2, 2, 3], dtype=np.uint64), np.ones(6))
    oracle = ExactTopK(1)
    oracle.add_many([3, 3, 3])
    assert recall_at_k(sk, oracle) == 0.0
    assert recall_at_k(sk, oracle, k=0) == 1.0


def test_sliding_window_stationary_ample_memory():
    # steep enough that the window-local top-10 is not decided by sampling noise
    spec = ZipfStreamSpec(2000, 1.5, 8 * 200_000, seed=2)
    sk = HotSketch(SketchConfig(2000, 4))
    out = sliding_window_recall(sk, ZipfStream(spec), 200_000, 10)
    assert out[0].warmup and not any(r.warmup for r in out[1:])
    assert all(r.recall_local >= 0.99 and r.recall_cumulative >= 0.99 for r in out[1:])


def test_sliding_window_with_drift_runs_every_window():
    spec = ZipfStreamSpec(2000, 1.1, 5 * 5000, seed=2, drift=Drift(5000, 0.2))
    out = sliding_window_recall(HotSketch(SketchConfig(100, 4)), ZipfStream(spec), 5000, 25)
    assert [r.window for r in out] == list(range(5))
    assert all(0 <= r.recall_local <= 1 for r in out)


def test_sliding_window_custom_scores():
    s = ArrayStream(np.array([1, 2, 2, 1], dtype=np.uint64), np.zeros(4))
    out = sliding_window_recall(HotSketch(SketchConfig(4, 2)), s, 2, 1, scores=lambda f: f.astype(float))
    assert out[1].recall_cumulative == 1.0


def test_theorem1_examples():
    assert theorem1_bound(0.5, 100, 4) == pytest.approx(1 - 0.5 / (3 * 0.5 * 100))
    assert theorem1_bound(0.5, 100, 4) == pytest.approx(0.99667, abs=1e-5)
    assert theorem1_bound(1.0, 10, 2) == 1.0
    assert theorem1_bound(0.999999, 10, 2) == pytest.approx(1.0, abs=1e-5)
    assert theorem1_bound(0.1, 1, 2) == 0.0
    with pytest.raises(DomainError):
        theorem1_bound(0.5, 10, 1)


def test_theorem3_domain_and_range():
    with pytest.raises(DomainError):
        theorem3_bound(0.1, 1.0, 100, 4)
    with pytest.raises(DomainError):
        theorem3_bound(0.1, 1.1, 100, 1)
    v = theorem3_bound(0.1, 1.1, 10000, 4)
    assert 0.0 <= v <= 1.0


def test_theorem3_grid_refinement_converges():
    for g, z, w, c in [(0.001, 1.1, 10000, 4), (0.3, 1.5, 100, 8), (0.01, 1.05, 1000, 16)]:
        assert abs(theorem3_bound(g, z, w, c) - theorem3_bound(g, z, w, c, grid_points=4000)) < 1e-6


def test_theorem3_monotone_in_each_argument():
    G = [1e-4, 1e-3, 0.01, 0.1, 0.5]
    Z = [1.01, 1.05, 1.1, 1.5, 2.0]
    W = [1, 10, 100, 10000]
    C = [2, 4, 8, 32]
    axes = [G, Z, W, C]
    vals = {p: theorem3_bound(*p) for p in itertools.product(*axes)}
    for p, v in vals.items():
        for ax in range(4):
            i = axes[ax].index(p[ax])
            if i + 1 < len(axes[ax]):
                q = list(p)
                q[ax] = axes[ax][i + 1]
                assert vals[tuple(q)] >= v - 1e-12, (p, ax)


def test_optimal_c():
    assert optimal_c(1.05).c_star == 21
    assert optimal_c(1.1).c_star == 11
    assert optimal_c(2).c_star == 2
    o = optimal_c(1.3)
    assert o.floor == 4 and o.ceil == 5
    with pytest.raises(DomainError):
        optimal_c(1.0)


def test_monte_carlo_respects_bound():
    est = monte_carlo_retention(0.5, 100, 4, trials=300)
    assert est.frequency >= est.bound - 3 * est.stderr
    assert est.retained <= est.trials


def test_throughput_zero_ops_and_shape():
    assert throughput_bench([4], [100], ops=0) == []
    rows = throughput_bench([4, 8], [64], ops=20_000, repeats=1)
    assert [(r.c, r.w) for r in rows] == [(4, 64), (8, 64)]
    assert all(r.insert_ops_per_s > 0 and r.query_ops_per_s > 0 for r in rows)
