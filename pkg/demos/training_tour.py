import numpy as np

from hotembed.trainer import TrainConfig, make_sketch, make_store, train
from hotembed.workload import ZipfStream, ZipfStreamSpec

n, dim, B, steps = 100_000, 16, 64, 2000
budget = n * dim * 8 // 1000
print(f"Embedding table for {n} features at dimension {dim}, compressed 1000x into {budget} bytes.")

spec = ZipfStreamSpec(n, 1.1, steps * B, seed=0)

cafe_store = make_store("cafe", n, dim, budget, hot_percentage=0.7, level_count=2)
print("CAFE layout:", cafe_store.plan.summary())
sketch = make_sketch(cafe_store, 5.0, 1.0, 0.98, batch_size=B)
cafe, _ = train(ZipfStream(spec), cafe_store, sketch, TrainConfig(0.05, B, steps, 100, "cafe"))

hash_store = make_store("hash", n, dim, budget)
hashed, _ = train(ZipfStream(spec), hash_store, None, TrainConfig(0.05, B, steps, 100, "hash"))

q = steps // 4
last = lambda hist: np.mean([m.loss for m in hist[-q:]])
print(f"last-quarter loss: CAFE {last(cafe):.4f}, hashing {last(hashed):.4f}")
print("share of lookups served from unique rows at the end:",
      np.mean([m.hot_hits / B for m in cafe[-q:]]).round(3))
print("total migrations:", sum(m.migrations for m in cafe))
