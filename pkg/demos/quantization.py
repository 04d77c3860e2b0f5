"""Group-wise KV quantization, outlier plus low-rank repair, and what it saves in memory."""

import numpy as np

from kvsim.policies import FP16, GEAR, H2O, KIVI, FootprintModel
from kvsim.quantkv import PER_CHANNEL, PER_TOKEN, GearSpec, QuantSpec, dequantize, gear_correct, kv_bytes, quantize

rng = np.random.default_rng(0)

# a fake key cache: 256 tokens x 128 channels, a few channels with large magnitude
keys = rng.normal(size=(256, 128))
keys[:, [3, 77]] *= 12.0

# outlier channels inflate every per-token range; per-channel groups isolate them (lower mean error)
for axis in (PER_TOKEN, PER_CHANNEL):
    spec = QuantSpec(bits=2, axis=axis, group_size=32)
    err = np.abs(keys - dequantize(quantize(keys, spec)))
    print(f"2-bit {axis:12s} mean |err| {err.mean():.4f}  max {err.max():.3f}")

# the trailing residual window stays exact
spec = QuantSpec(bits=4, axis=PER_CHANNEL, group_size=32, residual_window=128)
q = quantize(keys, spec)
print("quantized tokens:", q.codes.shape[0], "full-precision tokens:", q.residual.shape[0])
print("last 128 rows exact:", np.array_equal(dequantize(q)[-128:], keys[-128:]))

# keep the 2% largest residual entries and approximate the rest at rank 2
base = QuantSpec(bits=2, axis=PER_TOKEN, group_size=32)
plain = np.abs(keys - dequantize(quantize(keys, base)))
_, stats = gear_correct(keys, GearSpec(base, sparsity_frac=0.02, rank=2))
print(f"plain 2-bit: max {plain.max():.3f} mean {plain.mean():.4f}")
print(f"corrected  : max {stats.max_abs:.3f} mean {stats.mean_abs:.4f}")

# per-sequence cache bytes for a 7B-sized model
fm = FootprintModel()
print("\ntokens      fp16      kivi      gear       h2o")
for tokens in (128, 512, 2048, 8192):
    row = [kv_bytes(p, tokens, fm) / 2**20 for p in (FP16, KIVI, GEAR, H2O)]
    print(f"{tokens:6d}" + "".join(f"{mb:9.1f}M" for mb in row))
