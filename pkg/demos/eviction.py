"""Token eviction during a toy decode loop: attention sinks versus heavy hitters."""

import numpy as np

from kvsim.evict import H2O, STREAMING, CacheState, EvictionPolicy, ModelDims, ToyLayer, decode_with_eviction, evict_h2o

dims = ModelDims(batch=1, seq_len=32, hidden=16, heads=2, head_dim=8)
layer = ToyLayer.init(dims, seed=0)
prompt = np.random.default_rng(1).normal(size=(dims.seq_len, dims.hidden))

full = decode_with_eviction(layer, prompt, steps=40, seed=2)
for kind in (STREAMING, H2O):
    policy = EvictionPolicy(kind, first=4, recent=12)
    run = decode_with_eviction(layer, prompt, steps=40, policy=policy, seed=2)
    drift = np.abs(run.outputs - full.outputs).mean()
    print(f"{kind:9s} budget {policy.budget}: cache sizes {run.retained_sizes[:3]}...{run.retained_sizes[-1]}"
          f"  mean output drift {drift:.4f}")
    print("          kept:", run.state.retained)

# heavy hitters by hand: scores favour tokens 0 and 2, the last two are always kept
state = CacheState(tuple(range(6)), np.array([0.5, 0.1, 0.9, 0.3, 0.0, 0.0]))
print("\nheavy=2 recent=2 ->", evict_h2o(state, heavy=2, recent=2))
