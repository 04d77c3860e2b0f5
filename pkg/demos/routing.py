"""Compare the four routers across compression policies on the same workload."""

from kvsim.cli import build_workload, parse_config, route_experiment
from kvsim.policies import COMPRESSED

cfg = parse_config({"seed": 0, "rps": 10, "num_requests": 1000, "routing_policy": ["baseline", "throughput", "length", "both"]})
work = build_workload(cfg, {"fp16", *COMPRESSED})
table = route_experiment(cfg, work)

cols = ("fp16", *COMPRESSED)
print("mean end-to-end latency (s)")
print(f"{'router':11s}" + "".join(f"{c:>9s}" for c in cols))
for r in cfg.routing_policy:
    cells = [table[(r, c)] for c in cols]
    print(f"{r:11s}" + "".join(f"{'-':>9s}" if v is None else f"{v:9.3f}" for v in cells))

print("\nspeedup of latency-aware routing over memory-balanced routing")
for c in COMPRESSED:
    print(f"  {c:6s} x{table[('baseline', c)] / table[('both', c)]:.2f}")
