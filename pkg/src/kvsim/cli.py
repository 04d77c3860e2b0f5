"""Command-line entry point: ``simulate``, ``route-experiment``, ``evaluate``, ``gen-fixtures``.

Run configs are YAML (JSON also parses) whose keys are the :class:`RunConfig`
field names.  Exit status is 0 on success, 1 on a runtime failure and 2 on a
usage or validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from kvsim import fixtures
from kvsim.costmodel import CostProfile, ProfileError, load_profile
from kvsim.evaluator import (
    DEFAULT_THETAS,
    PER_TASK,
    bucketize,
    length_diff,
    length_pairs,
    load_scores,
    sweep_and_breakdown,
    write_reports,
)
from kvsim.lengthmodel import OracleLengthPredictor, load_length_trace, train_bucket_heuristic
from kvsim.policies import COMPRESSED, FP16, PRESETS, FootprintModel, get_policy
from kvsim.router import RoutingPolicy
from kvsim.sim import Replica, load_request_trace, metrics, simulate, with_arrivals, write_request_trace, write_results

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
DEFAULT_CAPACITY = 30_000_000_000  # KV-available bytes per replica


class UsageError(Exception):
    """Bad input: unreadable file, malformed record or invalid config field."""


@dataclass(frozen=True)
class ReplicaConfig:
    policy: str = "fp16"
    capacity: int = DEFAULT_CAPACITY
    page_size: int = 16
    max_batch: int = 64


@dataclass(frozen=True)
class RunConfig:
    seed: int
    rps: float = 10.0
    num_requests: int = 1000
    replicas: tuple[ReplicaConfig, ...] = (ReplicaConfig(),) * 4
    routing_policy: tuple[str, ...] = ("baseline",)
    profile_path: str | None = None
    trace_path: str | None = None
    length_trace_path: str | None = None
    length_predictor: str = "oracle"
    compression_policies: tuple[str, ...] = COMPRESSED
    output_dir: str = "out"
    footprint: FootprintModel = field(default_factory=FootprintModel)


def _check(cond: bool, name: str, msg: str) -> None:
    if not cond:
        raise UsageError(f"config field {name!r}: {msg}")


def _replica_config(i: int, obj) -> ReplicaConfig:
    name = f"replicas[{i}]"
    _check(isinstance(obj, dict), name, "expected a mapping")
    known = {f.name for f in fields(ReplicaConfig)}
    unknown = sorted(set(obj) - known)
    _check(not unknown, f"{name}.{unknown[0] if unknown else ''}", "unknown key")
    try:
        rc = ReplicaConfig(
            policy=str(obj.get("policy", "fp16")),
            capacity=int(float(obj.get("capacity", DEFAULT_CAPACITY))),
            page_size=int(obj.get("page_size", 16)),
            max_batch=int(obj.get("max_batch", 64)),
        )
    except (TypeError, ValueError) as e:
        raise UsageError(f"config field {name!r}: {e}") from None
    _check(rc.policy in PRESETS, f"{name}.policy", f"unknown policy {rc.policy!r}")
    _check(rc.capacity > 0, f"{name}.capacity", "must be positive")
    _check(rc.page_size >= 1 and rc.max_batch >= 1, name, "page_size and max_batch must be >= 1")
    return rc


def parse_config(raw: dict, seed: int | None = None, out: str | None = None) -> RunConfig:
    """Validate a config mapping; ``seed`` and ``out`` override the file's values."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise UsageError("config must be a mapping of field names to values")
    known = {f.name for f in fields(RunConfig)}
    for key in raw:
        _check(key in known, key, "unknown key")
    d = dict(raw)
    if seed is not None:
        d["seed"] = seed
    if out is not None:
        d["output_dir"] = out
    _check("seed" in d, "seed", "required (set it in the config or pass --seed)")
    try:
        seed_value = int(d["seed"])
        rps = float(d.get("rps", 10.0))
        num_requests = int(d.get("num_requests", 1000))
    except (TypeError, ValueError) as e:
        raise UsageError(f"config field: {e}") from None
    _check(0 <= seed_value < 2**64, "seed", "must be an unsigned 64-bit integer")
    _check(rps > 0, "rps", "must be positive")
    _check(num_requests >= 0, "num_requests", "must be >= 0")

    reps = d.get("replicas")
    if reps is None:
        replicas = RunConfig.replicas
    else:
        _check(isinstance(reps, list) and len(reps) > 0, "replicas", "expected a non-empty list")
        replicas = tuple(_replica_config(i, r) for i, r in enumerate(reps))

    routing = d.get("routing_policy", "baseline")
    routing = (routing,) if isinstance(routing, str) else tuple(routing)
    for r in routing:
        try:
            RoutingPolicy.parse(str(r))
        except ValueError as e:
            raise UsageError(f"config field 'routing_policy': {e}") from None
    routing = tuple(str(r).lower() for r in routing)

    predictor = str(d.get("length_predictor", "oracle"))
    _check(predictor in ("oracle", "bucket"), "length_predictor", "expected 'oracle' or 'bucket'")

    comp = d.get("compression_policies", list(COMPRESSED))
    comp = (comp,) if isinstance(comp, str) else tuple(str(c) for c in comp)
    for c in comp:
        _check(c in PRESETS and c != "fp16", "compression_policies", f"unknown compressed policy {c!r}")

    fp = d.get("footprint") or {}
    _check(isinstance(fp, dict), "footprint", "expected a mapping")
    try:
        footprint = FootprintModel(**{k: int(v) for k, v in fp.items()})
    except (TypeError, ValueError) as e:
        raise UsageError(f"config field 'footprint': {e}") from None

    def path(key: str) -> str | None:
        v = d.get(key)
        return None if v is None else str(v)

    return RunConfig(
        seed=seed_value,
        rps=rps,
        num_requests=num_requests,
        replicas=replicas,
        routing_policy=routing,
        profile_path=path("profile_path"),
        trace_path=path("trace_path"),
        length_trace_path=path("length_trace_path"),
        length_predictor=predictor,
        compression_policies=comp,
        output_dir=str(d.get("output_dir", "out")),
        footprint=footprint,
    )


def load_config(path, seed: int | None = None, out: str | None = None) -> RunConfig:
    if path is None:
        return parse_config({}, seed, out)
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config not found: {path}")
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise UsageError(f"{path}: {e}") from None
    return parse_config(raw, seed, out)


@dataclass
class Workload:
    requests: list
    profile: CostProfile
    predictor: object


def _require_file(path: str, what: str) -> None:
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")


def build_workload(cfg: RunConfig, policies) -> Workload:
    """Load or synthesize the profile, request trace and length predictor for ``policies``."""
    for path, what in ((cfg.profile_path, "profile"), (cfg.trace_path, "trace"), (cfg.length_trace_path, "length trace")):
        if path is not None:
            _require_file(path, what)
    try:
        profile = fixtures.gen_profile() if cfg.profile_path is None else load_profile(Path(cfg.profile_path))
        if cfg.trace_path is None:
            compressed = tuple(p for p in fixtures.LENGTH_BUCKETS if p in policies)
            requests = fixtures.gen_trace(cfg.num_requests, cfg.seed, cfg.rps, policies=compressed)
        else:
            requests = load_request_trace(cfg.trace_path)[: cfg.num_requests]
            requests = with_arrivals(requests, cfg.rps, fixtures.component_rng(cfg.seed, "arrivals"))
        samples = requests if cfg.length_trace_path is None else load_length_trace(cfg.length_trace_path)
    except (ProfileError, ValueError) as e:
        raise UsageError(str(e)) from None

    for p in policies:
        if not profile.covers(p):
            raise UsageError(f"profile does not cover policy {p!r}")
        missing = [r.id for r in requests if p not in r.output_len]
        if missing:
            raise UsageError(f"request {missing[0]} has no output length for policy {p!r}")
    if cfg.length_predictor == "oracle":
        predictor = OracleLengthPredictor({s.id: dict(s.output_len) for s in samples})
    elif samples:
        predictor = train_bucket_heuristic(samples)
    else:
        predictor = None  # nothing to route, nothing to predict
    return Workload(requests, profile, predictor)


def _replicas(cfg: RunConfig, policy_names) -> list[Replica]:
    return [
        Replica(i, get_policy(name), rc.capacity, rc.page_size, rc.max_batch)
        for i, (rc, name) in enumerate(zip(cfg.replicas, policy_names))
    ]


def cmd_simulate(cfg: RunConfig) -> dict:
    if len(cfg.routing_policy) != 1:
        raise UsageError("config field 'routing_policy': simulate takes exactly one policy")
    names = [rc.policy for rc in cfg.replicas]
    work = build_workload(cfg, set(names))
    routing = RoutingPolicy.parse(cfg.routing_policy[0])
    result = simulate(_replicas(cfg, names), work.requests, routing, work.profile, work.predictor, cfg.footprint)
    extra = {"seed": cfg.seed, "routing_policy": routing.value, "replica_policies": names}
    doc = write_results(result, cfg.output_dir, extra)
    s = metrics(result)
    if s.count:
        print(f"requests={s.count} mean_e2e={s.mean_e2e:.4f}s p50={s.p50_e2e:.4f}s p99={s.p99_e2e:.4f}s")
    else:
        print("requests=0")
    if s.rejected:
        print(f"warning: {s.rejected} request(s) rejected (peak KV demand exceeds replica memory)", file=sys.stderr)
    return doc


def experiment_layout(routing: RoutingPolicy, policy: str, n: int) -> list[str]:
    """Baseline runs every replica on ``policy``; routed runs keep replica 0 on FP16."""
    if routing is RoutingPolicy.BASELINE or policy == FP16.name:
        return [policy] * n
    return [FP16.name] + [policy] * (n - 1)


def route_experiment(cfg: RunConfig, work: Workload) -> dict[tuple[str, str], float | None]:
    """Mean E2E per ``(routing policy, compression policy)``; FP16 is measured under Baseline only."""
    n = len(cfg.replicas)
    table = {}
    for r in cfg.routing_policy:
        routing = RoutingPolicy.parse(r)
        for col in (FP16.name, *cfg.compression_policies):
            if col == FP16.name and routing is not RoutingPolicy.BASELINE:
                table[(routing.value, col)] = None
                continue
            reps = _replicas(cfg, experiment_layout(routing, col, n))
            res = simulate(reps, work.requests, routing, work.profile, work.predictor, cfg.footprint)
            table[(routing.value, col)] = metrics(res).mean_e2e
    return table


def cmd_route_experiment(cfg: RunConfig) -> dict:
    if len(cfg.routing_policy) < 2:
        raise UsageError("config field 'routing_policy': need ≥ 2 policies")
    if len(cfg.replicas) < 2:
        raise UsageError("config field 'replicas': need ≥ 2 replicas")
    work = build_workload(cfg, {FP16.name, *cfg.compression_policies})
    table = route_experiment(cfg, work)

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = (FP16.name, *cfg.compression_policies)
    with open(out / "route_table.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["router", *cols])
        for r in cfg.routing_policy:
            row = [table[(r, c)] for c in cols]
            w.writerow([r, *("-" if v is None else f"{v:.6f}" for v in row)])
    doc = {
        "seed": cfg.seed,
        "num_requests": len(work.requests),
        "replicas": len(cfg.replicas),
        "mean_e2e_s": {r: {c: table[(r, c)] for c in cols} for r in cfg.routing_policy},
        "files": ["route_table.csv", "summary.json"],
    }
    with open(out / "summary.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    print((out / "route_table.csv").read_text(encoding="utf-8"), end="")
    return doc


def cmd_evaluate(
    scores_path,
    lengths_path=None,
    thetas=None,
    algo_sets=None,
    benign: bool = True,
    scope: str = PER_TASK,
    out_dir="out",
) -> dict:
    if scores_path is None and lengths_path is None:
        raise UsageError("evaluate needs --scores and/or --lengths")
    thetas = sorted(thetas) if thetas else list(DEFAULT_THETAS)
    if any(not 0.0 <= t <= 1.0 for t in thetas):
        raise UsageError("theta values must lie in [0, 1]")
    try:
        records = [] if scores_path is None else load_scores(scores_path)
        samples = None if lengths_path is None else load_length_trace(lengths_path)
    except FileNotFoundError as e:
        raise UsageError(f"file not found: {e.filename}") from None
    except ValueError as e:
        raise UsageError(str(e)) from None

    bucket_rows = None
    if samples is not None:
        if not samples:
            raise UsageError(f"{lengths_path}: no length samples")
        policies = sorted({p for s in samples for p in s.output_len} - {"fp16"})
        bucket_rows = []
        for p in policies:
            have = [s for s in samples if p in s.output_len and "fp16" in s.output_len]
            ge, le = bucketize(length_diff(pair) for pair in length_pairs(have, p))
            bucket_rows.append([p, repr(ge), repr(le), len(have)])

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    n_benign = 0
    if records:
        sets = None if not algo_sets else [tuple(s) for s in algo_sets]
        known = set(records[0].algo_scores)
        for s in sets or []:
            bad = [a for a in s if a not in known]
            if bad:
                raise UsageError(f"unknown algorithm {bad[0]!r} in --algo-set")
        report = sweep_and_breakdown(records, thetas, sets, benign=benign, scope=scope)
        n_benign = report.n_benign
        files += write_reports(report, records, out, bucket_rows)
    elif bucket_rows is not None:
        with open(out / "buckets.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["algorithm", "frac_d_ge_50", "frac_d_le_neg50", "samples"])
            w.writerows(bucket_rows)
        files.append("buckets.csv")
    files.append("summary.json")
    doc = {
        "records": len(records),
        "benign": n_benign if benign else len(records),
        "thetas": thetas,
        "files": files,
    }
    with open(out / "summary.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {', '.join(files)} to {out}")
    return doc


FIXTURE_KINDS = ("profile", "trace", "scores")


def cmd_gen_fixtures(kind: str, seed: int, out_dir, n: int = 1000) -> list[str]:
    if kind not in FIXTURE_KINDS:
        raise UsageError(f"unknown fixture kind {kind!r}; expected one of {list(FIXTURE_KINDS)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if kind == "profile":
        fixtures.gen_profile(seed).to_csv(out / "profile.csv")
        files = ["profile.csv"]
    elif kind == "trace":
        write_request_trace(fixtures.gen_trace(n, seed), out / "trace.jsonl")
        files = ["trace.jsonl"]
    else:
        records = fixtures.gen_scores(n, seed)
        fixtures.write_scores(records, out / "scores.jsonl")
        expected = fixtures.brute_force_negative_counts(records)
        with open(out / "scores_expected.json", "w", encoding="utf-8") as f:
            json.dump(expected, f, indent=2, sort_keys=True)
            f.write("\n")
        files = ["scores.jsonl", "scores_expected.json"]
    print(f"wrote {', '.join(files)} to {out}")
    return files


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _thetas(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad theta list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kvsim", description="KV-cache compression serving simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in (
        ("simulate", "serve one workload under one routing policy"),
        ("route-experiment", "compare routing policies across compression policies"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--seed", type=_seed)
        p.add_argument("--out", help="output directory (overrides output_dir)")

    p = sub.add_parser("evaluate", help="negative-sample sweeps and length-shift buckets")
    p.add_argument("--scores", help="score records (JSON Lines)")
    p.add_argument("--lengths", help="per-policy output lengths (JSON Lines)")
    p.add_argument("--theta", type=_thetas, action="extend", default=[], help="comma-separated thresholds")
    p.add_argument("--algo-set", action="append", default=[], help="'+'-joined algorithms, repeatable")
    p.add_argument("--no-benign-filter", action="store_true")
    p.add_argument("--benign-scope", choices=("per_task", "global"), default=PER_TASK)
    p.add_argument("--seed", type=_seed, default=0, help="accepted for uniformity; evaluation is not random")
    p.add_argument("--out", default="out")

    p = sub.add_parser("gen-fixtures", help="write deterministic synthetic inputs")
    p.add_argument("kind", choices=FIXTURE_KINDS)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--num", type=int, default=1000, help="records for trace and scores kinds")
    p.add_argument("--out", default="fixtures")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            cmd_simulate(load_config(args.config, args.seed, args.out))
        elif args.command == "route-experiment":
            cmd_route_experiment(load_config(args.config, args.seed, args.out))
        elif args.command == "evaluate":
            sets = [s.split("+") for s in args.algo_set]
            cmd_evaluate(
                args.scores,
                args.lengths,
                args.theta,
                sets,
                not args.no_benign_filter,
                args.benign_scope,
                args.out,
            )
        else:
            if args.num < 0:
                raise UsageError("--num must be >= 0")
            cmd_gen_fixtures(args.kind, args.seed, args.out, args.num)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - any other failure is a runtime error
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
