from hotembed.bounds import monte_carlo_retention, optimal_c, theorem1_bound, theorem3_bound

print("Chance that a feature holding 30% of the stream stays tracked (w=10, c=4):")
print("  distribution-free bound:", round(theorem1_bound(0.3, 10, 4), 4))
est = monte_carlo_retention(0.3, 10, 4, trials=500)
print(f"  simulated: {est.frequency:.3f} +- {est.stderr:.3f}")

print("\nZipf-aware bound for a rare feature (gamma=1e-4) as c grows at w=10000:")
for c in (2, 4, 8, 16, 32):
    print(f"  c={c:2d}: {theorem3_bound(1e-4, 1.1, 10_000, c):.4f}")

print("\nSlots per bucket that make the best use of a fixed number of slots:")
for z in (1.05, 1.1, 1.3, 2.0):
    print(f"  z={z}: c* = {optimal_c(z).c_star:g}")
