import csv
import json
import subprocess
import sys

import pytest
import yaml

from kvsim.cli import main
from kvsim.costmodel import DECODE, load_profile, predict_throughput
from kvsim.fixtures import gen_trace
from kvsim.sim import write_request_trace


def write_config(path, **fields):
    path.write_text(yaml.safe_dump(fields))
    return str(path)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_gen_profile_fixture_ratio(tmp_path):
    assert main(["gen-fixtures", "profile", "--seed", "0", "--out", str(tmp_path)]) == 0
    p = load_profile(tmp_path / "profile.csv")
    ratio = predict_throughput(p, "h2o", DECODE, 1, 1024) / predict_throughput(p, "fp16", DECODE, 1, 1024)
    assert ratio == pytest.approx(1.34, rel=1e-12)


def test_gen_trace_fixture_repeatable(tmp_path):
    for d in ("a", "b"):
        assert main(["gen-fixtures", "trace", "--seed", "5", "--num", "30", "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "trace.jsonl").read_bytes() == (tmp_path / "b" / "trace.jsonl").read_bytes()


def test_gen_scores_fixture_matches_evaluate(tmp_path):
    assert main(["gen-fixtures", "scores", "--seed", "1", "--num", "400", "--out", str(tmp_path)]) == 0
    out = tmp_path / "eval"
    assert main(["evaluate", "--scores", str(tmp_path / "scores.jsonl"), "--out", str(out)]) == 0
    expected = json.loads((tmp_path / "scores_expected.json").read_text())
    got = {(r[0], r[1]): int(r[2]) for r in read_csv(out / "sweep.csv")[1:]}
    for label, n in expected["0.1"].items():
        assert got[("0.1", label)] == n


def test_unknown_fixture_kind_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen-fixtures", "weights", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_simulate_zero_requests(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", seed=0, num_requests=0)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert read_csv(tmp_path / "o" / "requests.csv") == [["request_id", "replica", "ttft_s", "e2e_s"]]
    doc = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert doc["count"] == 0 and doc["mean_e2e_s"] is None
    for f in doc["files"]:
        assert (tmp_path / "o" / f).exists()


def test_simulate_byte_identical(tmp_path, capsys):
    cfg = write_config(
        tmp_path / "c.yaml",
        seed=3,
        num_requests=150,
        routing_policy="both",
        replicas=[{"policy": "fp16"}, {"policy": "kivi"}, {"policy": "h2o"}],
    )
    for d in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    for f in ("requests.csv", "cdf.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert "mean_e2e=" in capsys.readouterr().out


def test_seed_flag_changes_workload(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", seed=0, num_requests=40)
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["simulate", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "requests.csv").read_bytes() != (tmp_path / "b" / "requests.csv").read_bytes()


def test_missing_profile(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    cfg = write_config(tmp_path / "c.yaml", seed=0, profile_path=str(missing))
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert f"profile not found: {missing}" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", seed=0, replica_count=4)
    assert main(["simulate", "--config", cfg]) == 2
    assert "replica_count" in capsys.readouterr().err


@pytest.mark.parametrize(
    "fields,name",
    [
        ({"rps": -1}, "rps"),
        ({"replicas": [{"policy": "int3"}]}, "replicas[0].policy"),
        ({"replicas": [{"policy": "fp16", "slots": 2}]}, "replicas[0].slots"),
        ({"length_predictor": "bert"}, "length_predictor"),
        ({"routing_policy": "random"}, "routing_policy"),
    ],
)
def test_invalid_field_named(tmp_path, capsys, fields, name):
    cfg = write_config(tmp_path / "c.yaml", seed=0, **fields)
    assert main(["simulate", "--config", cfg]) == 2
    assert name in capsys.readouterr().err


def test_seed_required(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", num_requests=1)
    assert main(["simulate", "--config", cfg]) == 2
    assert "seed" in capsys.readouterr().err


def test_trace_file_and_rejections(tmp_path, capsys):
    reqs = gen_trace(20, seed=0, rps=None, policies=())
    write_request_trace(reqs, tmp_path / "t.jsonl")
    cfg = write_config(
        tmp_path / "c.yaml",
        seed=0,
        trace_path=str(tmp_path / "t.jsonl"),
        replicas=[{"policy": "fp16", "capacity": 16 * 524288 * 20}],
    )
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert doc["count"] + doc["rejected"] == 20
    if doc["rejected"]:
        assert "rejected" in capsys.readouterr().err


def test_bucket_predictor_config(tmp_path):
    cfg = write_config(
        tmp_path / "c.yaml",
        seed=0,
        num_requests=60,
        routing_policy="length",
        length_predictor="bucket",
        replicas=[{"policy": "fp16"}, {"policy": "stream"}],
    )
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0


def test_route_experiment_needs_two_policies(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", seed=0, routing_policy=["both"])
    assert main(["route-experiment", "--config", cfg]) == 2
    assert "need ≥ 2 policies" in capsys.readouterr().err


def test_route_experiment_table_shape(tmp_path):
    cfg = write_config(
        tmp_path / "c.yaml",
        seed=0,
        num_requests=100,
        routing_policy=["baseline", "throughput", "length", "both"],
    )
    assert main(["route-experiment", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "route_table.csv")
    assert rows[0] == ["router", "fp16", "kivi", "gear", "h2o", "stream"]
    assert [r[0] for r in rows[1:]] == ["baseline", "throughput", "length", "both"]
    assert all(r[1] == "-" for r in rows[2:])
    assert rows[1][1] != "-"


def test_evaluate_malformed_line(tmp_path, capsys):
    good = {"sample_id": "s1", "task_type": "qa", "base_score": 0.8, "algo_scores": {"kivi": 0.7}}
    path = tmp_path / "s.jsonl"
    path.write_text(json.dumps(good) + "\nnot json\n")
    assert main(["evaluate", "--scores", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_evaluate_theta_and_sets(tmp_path):
    main(["gen-fixtures", "scores", "--num", "100", "--out", str(tmp_path)])
    out = tmp_path / "o"
    args = ["evaluate", "--scores", str(tmp_path / "scores.jsonl"), "--out", str(out)]
    assert main(args + ["--theta", "0.3,0.1", "--algo-set", "kivi+gear", "--no-benign-filter"]) == 0
    rows = read_csv(out / "sweep.csv")[1:]
    assert [(r[0], r[1]) for r in rows] == [("0.1", "kivi+gear"), ("0.3", "kivi+gear")]
    assert main(args + ["--algo-set", "kivi+int2"]) == 2


def test_evaluate_default_thetas(tmp_path):
    main(["gen-fixtures", "scores", "--num", "50", "--out", str(tmp_path)])
    assert main(["evaluate", "--scores", str(tmp_path / "scores.jsonl"), "--out", str(tmp_path / "o")]) == 0
    thetas = sorted({float(r[0]) for r in read_csv(tmp_path / "o" / "sweep.csv")[1:]})
    assert thetas == pytest.approx([0.05 * k for k in range(1, 11)])


def test_evaluate_lengths_buckets(tmp_path):
    rows = [
        {"id": "a", "task_type": "qa", "prompt_len": 5, "output_len": {"fp16": 100, "kivi": 40}},
        {"id": "b", "task_type": "qa", "prompt_len": 5, "output_len": {"fp16": 100, "kivi": 150}},
        {"id": "c", "task_type": "qa", "prompt_len": 5, "output_len": {"fp16": 100, "kivi": 100}},
        {"id": "d", "task_type": "qa", "prompt_len": 5, "output_len": {"fp16": 100, "kivi": 90}},
    ]
    path = tmp_path / "l.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    assert main(["evaluate", "--lengths", str(path), "--out", str(tmp_path / "o")]) == 0
    assert read_csv(tmp_path / "o" / "buckets.csv")[1] == ["kivi", "0.25", "0.25", "4"]


def test_evaluate_needs_input(capsys):
    assert main(["evaluate"]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "kvsim", "gen-fixtures", "profile", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert (tmp_path / "profile.csv").exists()
