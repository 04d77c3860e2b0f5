"""A gridded per-iteration cost profile: interpolation, throughput ratios and accuracy."""

import numpy as np

from kvsim.costmodel import DECODE, PREFILL, accuracy, predict_throughput, predict_time
from kvsim.fixtures import analytic_profile, gen_profile

profile = gen_profile()

print("policy   decode T/S (b=1)   ratio   prefill T/S (b=2)   ratio")
fp16_dec = predict_throughput(profile, "fp16", DECODE, 1, 1024)
fp16_pre = predict_throughput(profile, "fp16", PREFILL, 2, 1024)
for policy in ("fp16", "kivi", "gear", "h2o", "stream"):
    dec = predict_throughput(profile, policy, DECODE, 1, 1024)
    pre = predict_throughput(profile, policy, PREFILL, 2, 1024)
    print(f"{policy:7s} {dec:12.2f} {dec / fp16_dec:10.2f} {pre:16.2f} {pre / fp16_pre:9.2f}")

# off-grid lookups blend the four surrounding cells in log2 space
t = predict_time(profile, "fp16", DECODE, 12, 3000)
print(f"\ndecode step at batch 12, 3000 tokens: {t.total * 1e3:.2f} ms (clamped={t.clamped})")
t = predict_time(profile, "fp16", DECODE, 500, 3000)
print(f"batch 500 is beyond the grid: {t.total * 1e3:.2f} ms (clamped={t.clamped})")

# how well does interpolation recover a known cost function from noisy samples?
rng = np.random.default_rng(0)
truth = lambda b, kv: 7e-3 + 5e-7 * b * kv  # noqa: E731
noisy = analytic_profile(7e-3, 5e-7, [2**i for i in range(8)], [2**i for i in range(7, 15)], 0.05, rng)
acc = []
for _ in range(200):
    b, kv = 2 ** rng.uniform(0, 7), 2 ** rng.uniform(7, 14)
    acc.append(accuracy(predict_time(noisy, "fp16", DECODE, b, kv).total, truth(b, kv)))
print(f"\nmean accuracy on 200 random queries: {np.mean(acc):.1f}%")
