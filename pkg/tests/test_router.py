import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvsim.costmodel import DECODE, PREFILL, CostProfile, ProfilePoint
from kvsim.fixtures import constant_profile
from kvsim.lengthmodel import OracleLengthPredictor
from kvsim.router import LatencyEstimate, ReplicaSnapshot, RoutingPolicy, estimate_e2e, per_token_time, route
from kvsim.sim import Request


class FixedLength:
    def __init__(self, by_policy):
        self.by_policy = by_policy

    def predict(self, prompt_len, task_type, policy, request_id=None):
        return self.by_policy[policy]


def profile(times):
    """``times`` maps policy -> (prefill_s, decode_s) constants."""
    pts = []
    for policy, (pre, dec) in times.items():
        for b in (1, 1024):
            for kv in (1, 1 << 20):
                pts.append(ProfilePoint(policy, PREFILL, b, kv, 0.0, pre))
                pts.append(ProfilePoint(policy, DECODE, b, kv, 0.0, dec))
    return CostProfile(pts)


REQ = Request("q", 0.0, 64, "qa", {})


def test_estimate_arithmetic():
    est = estimate_e2e(REQ, ReplicaSnapshot(0, "fp16", 3, 0), constant_profile(["fp16"], 0.2, 0.01), FixedLength({"fp16": 100}))
    assert est == LatencyEstimate(pytest.approx(0.2), pytest.approx(1.0))
    assert est.total_s == pytest.approx(1.2)


def test_estimate_length_one_is_one_iteration():
    est = estimate_e2e(REQ, ReplicaSnapshot(0, "fp16", 0, 0), constant_profile(["fp16"], 0.2, 0.01), FixedLength({"fp16": 1}))
    assert est.total_s == pytest.approx(0.21)


def test_decode_component_scales_with_per_token_time():
    prof = profile({"a": (0.1, 0.01), "b": (0.1, 0.02)})
    pred = FixedLength({"a": 50, "b": 50})
    ea = estimate_e2e(REQ, ReplicaSnapshot(0, "a", 0, 0), prof, pred)
    eb = estimate_e2e(REQ, ReplicaSnapshot(1, "b", 0, 0), prof, pred)
    assert eb.decode_s / ea.decode_s == pytest.approx(2.0)


def test_estimate_uses_load_plus_one_and_mid_length_context():
    pts = []
    for b in (1, 2, 4):
        for kv in (64, 128, 256):
            pts.append(ProfilePoint("p", PREFILL, b, kv, 0.0, b * 1.0 + kv * 1e-3))
            pts.append(ProfilePoint("p", DECODE, b, kv, 0.0, b * 0.01 + kv * 1e-5))
    prof = CostProfile(pts)
    est = estimate_e2e(REQ, ReplicaSnapshot(0, "p", 1, 0), prof, FixedLength({"p": 128}))
    assert est.prefill_s == pytest.approx(2 + 64e-3)
    assert est.decode_s == pytest.approx(128 * (0.02 + 128e-5))


@pytest.mark.parametrize("policy", list(RoutingPolicy))
def test_single_replica_always_chosen(policy):
    snap = [ReplicaSnapshot(0, "fp16", 5, 123)]
    assert route(REQ, snap, policy, constant_profile(["fp16"], 0.1, 0.1), FixedLength({"fp16": 3})) == 0


def test_baseline_picks_least_memory():
    snaps = [ReplicaSnapshot(0, "fp16", 0, 10_000_000), ReplicaSnapshot(1, "fp16", 9, 5_000_000)]
    assert route(REQ, snaps, RoutingPolicy.BASELINE, constant_profile(["fp16"], 1, 1), None) == 1


def test_ties_go_to_lowest_id():
    prof = constant_profile(["fp16"], 0.1, 0.1)
    snaps = [ReplicaSnapshot(i, "fp16", 0, 0) for i in (0, 1, 2)]
    for policy in RoutingPolicy:
        assert route(REQ, snaps, policy, prof, FixedLength({"fp16": 5})) == 0


def test_both_picks_faster_decoder_for_any_length():
    prof = profile({"slow": (0.1, 0.02), "fast": (0.1, 0.01)})
    snaps = [ReplicaSnapshot(0, "slow", 0, 0), ReplicaSnapshot(1, "fast", 0, 0)]
    for n in (1, 2, 50, 4000):
        assert route(REQ, snaps, RoutingPolicy.BOTH, prof, FixedLength({"slow": n, "fast": n})) == 1


def test_throughput_and_length_variants():
    prof = profile({"a": (0.1, 0.02), "b": (0.1, 0.01)})
    snaps = [ReplicaSnapshot(0, "a", 0, 0), ReplicaSnapshot(1, "b", 0, 0)]
    pred = FixedLength({"a": 10, "b": 90})
    assert route(REQ, snaps, RoutingPolicy.THROUGHPUT, prof, pred) == 1
    assert route(REQ, snaps, RoutingPolicy.LENGTH, prof, pred) == 0
    assert route(REQ, snaps, RoutingPolicy.BOTH, prof, pred) == 0  # 0.3 s vs 1.0 s


def test_throughput_looks_at_longest_context_in_batch():
    pts = []
    for policy, slope in (("a", 1e-5), ("b", 2e-5)):
        for kv in (1, 1000, 10_000):
            for b in (1, 8):
                base = 0.01 if policy == "a" else 0.001
                pts.append(ProfilePoint(policy, DECODE, b, kv, 0.0, base + slope * kv))
                pts.append(ProfilePoint(policy, PREFILL, b, kv, 0.0, 0.1))
    prof = CostProfile(pts)
    short = [ReplicaSnapshot(0, "a", 0, 0, 0), ReplicaSnapshot(1, "b", 0, 0, 0)]
    assert route(REQ, short, RoutingPolicy.THROUGHPUT, prof, None) == 1
    crowded = [ReplicaSnapshot(0, "a", 0, 0, 0), ReplicaSnapshot(1, "b", 1, 0, 10_000)]
    assert route(REQ, crowded, RoutingPolicy.THROUGHPUT, prof, None) == 0


def test_parse_and_empty():
    assert RoutingPolicy.parse("Both") is RoutingPolicy.BOTH
    with pytest.raises(ValueError, match="unknown routing policy"):
        RoutingPolicy.parse("fastest")
    with pytest.raises(ValueError):
        route(REQ, [], RoutingPolicy.BASELINE, None, None)


def test_oracle_predictor_in_routing():
    pred = OracleLengthPredictor({"q": {"a": 5, "b": 3}})
    snaps = [ReplicaSnapshot(0, "a", 0, 0), ReplicaSnapshot(1, "b", 0, 0)]
    assert route(REQ, snaps, RoutingPolicy.LENGTH, profile({"a": (1, 1), "b": (1, 1)}), pred) == 1


times = st.floats(1e-4, 1.0)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.tuples(times, times, st.integers(1, 500), st.integers(0, 20)), min_size=1, max_size=5),
    st.floats(0.1, 10.0),
    st.sampled_from([RoutingPolicy.THROUGHPUT, RoutingPolicy.BOTH]),
)
def test_common_scaling_never_changes_route(specs, factor, policy):
    names = [f"p{i}" for i in range(len(specs))]
    base = profile({n: (pre, dec) for n, (pre, dec, _, _) in zip(names, specs)})
    scaled = profile({n: (pre * factor, dec * factor) for n, (pre, dec, _, _) in zip(names, specs)})
    pred = FixedLength({n: length for n, (_, _, length, _) in zip(names, specs)})
    snaps = [ReplicaSnapshot(i, n, load, 0) for i, (n, (_, _, _, load)) in enumerate(zip(names, specs))]
    a = route(REQ, snaps, policy, base, pred)
    b = route(REQ, snaps, policy, scaled, pred)
    if a != b:
        # only a floating-point near-tie may flip
        if policy is RoutingPolicy.THROUGHPUT:
            cost = lambda s: per_token_time(base, s.policy, s.load + 1, REQ.prompt_len)
        else:
            cost = lambda s: estimate_e2e(REQ, s, base, pred).total_s
        ea, eb = cost(snaps[a]), cost(snaps[b])
        assert ea == pytest.approx(eb, rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(times, times, st.integers(1, 500), times, times, st.integers(0, 500))
def test_weak_dominance_selects_dominant(pre, dec, length, dpre, ddec, dlen):
    prof = profile({"good": (pre, dec), "bad": (pre + dpre, dec + ddec)})
    pred = FixedLength({"good": length, "bad": length + dlen})
    for order in ((("good", 0), ("bad", 1)), (("bad", 0), ("good", 1))):
        snaps = [ReplicaSnapshot(i, name, 0, 0) for name, i in order]
        chosen = route(REQ, snaps, RoutingPolicy.BOTH, prof, pred)
        assert snaps[chosen].policy == "good"


def test_per_token_time_is_decode_total():
    assert per_token_time(constant_profile(["x"], 0.5, 0.03), "x", 7, 100) == 0.03
