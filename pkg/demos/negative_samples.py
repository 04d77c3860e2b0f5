"""Find samples that every compression method in a set gets badly wrong."""

from kvsim.evaluator import benchmark_scores, sweep_and_breakdown
from kvsim.fixtures import gen_scores

records = gen_scores(1000, seed=0)
sets = [("kivi",), ("gear",), ("kivi", "gear"), ("h2o",), ("stream",), ("h2o", "stream")]
report = sweep_and_breakdown(records, algo_sets=sets)
print(f"{report.n_benign} of {len(records)} samples score at or above their task's mean")

labels = ["+".join(s) for s in sets]
thetas = sorted({t for t, _ in report.counts})
print("\ntheta " + "".join(f"{lab:>12s}" for lab in labels))
for t in thetas:
    print(f"{t:5.2f} " + "".join(f"{report.counts[(t, lab)]:12d}" for lab in labels))

print("\nnegatives at 10% by task type (kivi+gear)")
for (task, label), n in sorted(report.breakdown.items()):
    if label == "kivi+gear":
        print(f"  {task:14s} {n}")

# the collected ids form a small stress benchmark; score every method on it
print("\nmean scores on the kivi+gear negatives:", {k: round(v, 3) for k, v in benchmark_scores(records, report.negatives["kivi+gear"]).items()})
