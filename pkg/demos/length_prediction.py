"""Response-length shift under compression and two ways to predict it."""

from kvsim.evaluator import bucketize, length_diff, length_pairs
from kvsim.fixtures import gen_trace
from kvsim.lengthmodel import OracleLengthPredictor, evaluate_predictor, train_bucket_heuristic

trace = gen_trace(2000, seed=0, rps=None)
train, test = trace[:1500], trace[1500:]

print("share of requests whose output shrank / grew by half or more")
for policy in ("kivi", "gear", "h2o", "stream"):
    shorter, longer = bucketize(length_diff(p) for p in length_pairs(trace, policy))
    print(f"  {policy:6s} D >= 50%: {shorter:5.1%}   D <= -50%: {longer:5.1%}")

# output/prompt ratios per (task, policy) are weak predictors on this heavy-tailed trace
heuristic = train_bucket_heuristic(train)
print("\nbucket heuristic accuracy on held-out requests")
for policy, acc in evaluate_predictor(heuristic, test).items():
    print(f"  {policy:6s} {acc:5.1f}%")

oracle = OracleLengthPredictor.from_trace(test)
print("oracle:", evaluate_predictor(oracle, test))
