"""One FP16 replica and three KIVI replicas serving a Poisson workload."""

from kvsim.fixtures import gen_profile, gen_trace
from kvsim.lengthmodel import OracleLengthPredictor
from kvsim.policies import FP16, KIVI
from kvsim.router import RoutingPolicy
from kvsim.sim import Replica, metrics, simulate

requests = gen_trace(1000, seed=0, rps=10)
predictor = OracleLengthPredictor({r.id: r.output_len for r in requests})
replicas = [Replica(i, p, 30 * 10**9) for i, p in enumerate([FP16, KIVI, KIVI, KIVI])]

result = simulate(replicas, requests, RoutingPolicy.BOTH, gen_profile(), predictor)
s = metrics(result)
print(f"finished {s.count}, rejected {s.rejected}")
print(f"E2E mean {s.mean_e2e:.3f} s  p50 {s.p50_e2e:.3f} s  p99 {s.p99_e2e:.3f} s  TTFT mean {s.mean_ttft:.3f} s")

for st in result.replicas:
    served = sum(o.replica == st.replica for o in result.finished)
    print(f"replica {st.replica} ({st.policy:4s}): {served:4d} requests, busy {st.utilization:5.1%}, "
          f"peak {st.peak_pages_held}/{st.total_pages} pages, {st.decode_throughput():6.1f} tokens/s")

# a few points of the latency CDF
for x, frac in s.cdf[:: max(1, len(s.cdf) // 8)]:
    print(f"  P(E2E <= {x:6.3f} s) = {frac:.3f}")
