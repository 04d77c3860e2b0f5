import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvsim.costmodel import (
    DECODE,
    PREFILL,
    CostProfile,
    ProfileError,
    ProfilePoint,
    accuracy,
    accuracy_report,
    load_profile,
    predict_throughput,
    predict_time,
    write_profile,
)
from kvsim.fixtures import analytic_profile, constant_profile, gen_profile

HEADER = "policy,phase,batch,kv_len,attn_time_us,other_time_us\n"


def grid_csv(rows):
    return HEADER + "".join(",".join(str(c) for c in r) + "\n" for r in rows)


def two_by_two():
    return grid_csv(
        [
            ("fp16", "decode", 2, 128, 10, 0),
            ("fp16", "decode", 2, 256, 10, 0),
            ("fp16", "decode", 8, 128, 40, 0),
            ("fp16", "decode", 8, 256, 40, 0),
        ]
    )


def test_load_two_by_two():
    p = load_profile(two_by_two())
    assert len(p.points) == 4
    assert p.policies == ["fp16"]


def test_load_from_path_and_file(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text(two_by_two())
    assert len(load_profile(path).points) == 4
    assert len(load_profile(str(path)).points) == 4
    assert len(load_profile(io.StringIO(two_by_two())).points) == 4


def test_duplicate_row_named():
    text = two_by_two() + "fp16,decode,8,256,1,1\n"
    with pytest.raises(ProfileError, match="row 6"):
        load_profile(text)


def test_empty_profile(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(ProfileError, match="empty profile"):
        load_profile(path)
    with pytest.raises(ProfileError, match="empty profile"):
        load_profile(io.StringIO(HEADER))


def test_negative_time_rejected():
    with pytest.raises(ProfileError, match="row 2"):
        load_profile(grid_csv([("fp16", "decode", 1, 1, -1, 0)]))


def test_missing_cell_rejected():
    text = grid_csv(
        [("a", "decode", 1, 1, 1, 1), ("a", "decode", 1, 2, 1, 1), ("a", "decode", 2, 1, 1, 1)]
    )
    with pytest.raises(ProfileError, match="missing 1 cell"):
        load_profile(text)


def test_bad_header_and_field_count():
    with pytest.raises(ProfileError, match="row 1"):
        load_profile("policy,phase\nfp16,decode\n")
    with pytest.raises(ProfileError, match="row 2"):
        load_profile(HEADER + "fp16,decode,1\n")
    with pytest.raises(ProfileError, match="row 2"):
        load_profile(HEADER + "fp16,warmup,1,1,1,1\n")


def test_grid_point_exact():
    p = load_profile(two_by_two())
    t = predict_time(p, "fp16", DECODE, 8, 256)
    assert t.attn_time == 40 * 1e-6
    assert not t.clamped


def test_log_midpoint_blends_linearly():
    # batch 4 sits halfway between 2 and 8 in log2 space
    t = predict_time(load_profile(two_by_two()), "fp16", DECODE, 4, 128)
    assert t.attn_time == pytest.approx(25e-6, rel=1e-12)
    assert not t.clamped


def test_beyond_grid_clamps_and_flags():
    p = load_profile(two_by_two())
    t = predict_time(p, "fp16", DECODE, 64, 128)
    assert t.attn_time == 40 * 1e-6 and t.clamped is True
    t = predict_time(p, "fp16", DECODE, 1, 100)
    assert t.attn_time == 10 * 1e-6 and t.clamped is True


def test_unknown_policy_or_phase():
    p = load_profile(two_by_two())
    with pytest.raises(KeyError):
        predict_time(p, "kivi", DECODE, 2, 128)
    with pytest.raises(KeyError):
        predict_time(p, "fp16", PREFILL, 2, 128)
    with pytest.raises(ValueError):
        predict_time(p, "fp16", "warmup", 2, 128)


def test_decode_throughput_calibration():
    p = constant_profile(["fp16"], 0.1, 7.71e-3)
    assert predict_throughput(p, "fp16", DECODE, 1, 512) == pytest.approx(129.7, abs=0.05)


def test_prefill_throughput_arithmetic():
    p = constant_profile(["fp16"], 0.31, 0.01)
    assert predict_throughput(p, "fp16", PREFILL, 2, 1024) == pytest.approx(2048 / 0.31)
    assert round(predict_throughput(p, "fp16", PREFILL, 2, 1024)) == 6606


def test_doubling_time_halves_throughput():
    a = constant_profile(["fp16"], 0.2, 0.01)
    b = constant_profile(["fp16"], 0.4, 0.02)
    for phase in (PREFILL, DECODE):
        assert predict_throughput(b, "fp16", phase, 3, 900) == pytest.approx(
            predict_throughput(a, "fp16", phase, 3, 900) / 2
        )


def test_zero_time_throughput_rejected():
    p = constant_profile(["fp16"], 0.0, 0.0)
    with pytest.raises(ValueError):
        predict_throughput(p, "fp16", DECODE, 1, 1)


@pytest.mark.parametrize("pred,gt,expected", [(90, 100, 90.0), (100, 100, 100.0), (250, 100, 0.0), (110, 100, 90.0)])
def test_accuracy_values(pred, gt, expected):
    assert accuracy(pred, gt) == pytest.approx(expected)


def test_accuracy_needs_positive_truth():
    with pytest.raises(ValueError):
        accuracy(1.0, 0.0)


def test_accuracy_report_per_policy():
    p = constant_profile(["a", "b"], 1.0, 1.0)
    rep = accuracy_report(p, [("a", DECODE, 1, 10, 1.0), ("b", DECODE, 1, 10, 2.0), ("b", PREFILL, 4, 10, 1.0)])
    assert rep == {"a": 100.0, "b": 75.0}


def test_csv_roundtrip_bit_exact(tmp_path):
    p = gen_profile(seed=3, noise=0.05)
    path = tmp_path / "p.csv"
    p.to_csv(path)
    q = load_profile(path)
    for a, b in zip(p.points, q.points):
        assert a.policy == b.policy and a.batch == b.batch
        assert a.attn_time == pytest.approx(b.attn_time, rel=1e-15)


def test_write_profile_header():
    buf = io.StringIO()
    write_profile(constant_profile(["x"], 1.0, 1.0), buf)
    assert buf.getvalue().startswith(HEADER)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_grid_points_reproduced_bit_exactly(seed):
    rng = np.random.default_rng(seed)
    batches = sorted(set(rng.integers(1, 200, size=4).tolist()))
    kvs = sorted(set(rng.integers(1, 5000, size=4).tolist()))
    p = CostProfile(
        ProfilePoint("p", DECODE, b, k, float(rng.uniform()), float(rng.uniform())) for b in batches for k in kvs
    )
    for pt in p.points:
        t = predict_time(p, "p", DECODE, pt.batch, pt.kv_len)
        assert (t.attn_time, t.other_time) == (pt.attn_time, pt.other_time)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1, 200), st.floats(1, 200), st.floats(1, 10000), st.floats(1, 10000))
def test_monotone_profile_interpolates_monotonically(seed, b1, b2, k1, k2):
    rng = np.random.default_rng(seed)
    batches, kvs = [1, 4, 16, 64, 256], [1, 16, 256, 4096, 65536]
    inc = np.cumsum(np.cumsum(rng.uniform(0, 1, size=(5, 5)), axis=0), axis=1)
    p = CostProfile(ProfilePoint("p", DECODE, b, k, 0.0, inc[i, j]) for i, b in enumerate(batches) for j, k in enumerate(kvs))
    lo_b, hi_b = sorted((b1, b2))
    lo_k, hi_k = sorted((k1, k2))
    assert predict_time(p, "p", DECODE, lo_b, lo_k).total <= predict_time(p, "p", DECODE, hi_b, hi_k).total + 1e-12


def test_analytic_profile_is_noise_free_at_zero_noise():
    rng = np.random.default_rng(0)
    p = analytic_profile(0.01, 1e-7, [1, 2, 4], [128, 256], 0.0, rng)
    assert predict_time(p, "fp16", DECODE, 4, 256).total == pytest.approx(0.01 + 1e-7 * 1024)
