import numpy as np

from hotembed import HotSketch, SketchConfig
from hotembed.evaluation import ExactTopK, recall_at_k
from hotembed.workload import ZipfStream, ZipfStreamSpec

print("A sketch with 250 buckets of 4 slots tracks at most 1000 features.")
sk = HotSketch(SketchConfig(250, 4, hot_threshold=50.0, medium_threshold=5.0))

print("Feed it one million events from a Zipf(1.1) stream over 100k features...")
feats, _ = ZipfStream(ZipfStreamSpec(100_000, 1.1, 10**6, seed=0)).batch(0, 10**6)
sk.insert_many(feats, np.ones(len(feats)))

oracle = ExactTopK(100)
oracle.add_many(feats)
print("recall of the true top-100 among the 100 best slots:", recall_at_k(sk, oracle))

top = sk.top(5)
print("five highest tracked features:", top.tolist())
for f in top.tolist():
    r = sk.query(f)
    print(f"  feature {f}: score {r.score:.0f}, class {r.cls.name}, true count {oracle.scores[f]:.0f}")

print("An untracked feature reads as cold with score 0:", sk.query(99_999))
