"""Negative-sample collection and response-length shift analysis.

Score files are JSON Lines::

    {"sample_id": "s1", "task_type": "qa", "base_score": 0.8, "algo_scores": {"kivi": 0.7}}
"""

from __future__ import annotations

import csv
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PER_TASK = "per_task"
GLOBAL = "global"
DEFAULT_THETAS = tuple(round(0.05 * k, 2) for k in range(1, 11))
BREAKDOWN_THETA = 0.1


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: str
    task_type: str
    base_score: float
    algo_scores: dict[str, float] = field(hash=False)

    def __post_init__(self):
        scores = [self.base_score, *self.algo_scores.values()]
        if not all(np.isfinite(scores)) or min(scores) < 0:
            raise ValueError(f"{self.sample_id}: scores must be finite and non-negative")


@dataclass(frozen=True)
class LengthPair:
    sample_id: str
    l_un: int
    l_cs: int


def benign_filter(records, scope: str = PER_TASK) -> list[ScoreRecord]:
    """Keep records whose baseline score is at or above the mean of their scope."""
    records = list(records)
    if not records:
        raise ValueError("no records to filter")
    if scope not in (PER_TASK, GLOBAL):
        raise ValueError(f"benign scope must be {PER_TASK!r} or {GLOBAL!r}")
    groups: dict[str, list[float]] = defaultdict(list)
    for r in records:
        groups[r.task_type if scope == PER_TASK else ""].append(r.base_score)
    means = {k: float(np.mean(v)) for k, v in groups.items()}
    return [r for r in records if r.base_score >= means[r.task_type if scope == PER_TASK else ""]]


def collect_negatives(records, theta: float, algo_set) -> list[str]:
    """Ids of samples where every algorithm scores below ``(1 - theta) * base``."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must be in [0, 1]")
    algos = list(algo_set)
    if not algos:
        raise ValueError("algorithm set is empty")
    negatives = []
    for r in records:
        unknown = [a for a in algos if a not in r.algo_scores]
        if unknown:
            raise ValueError(f"unknown algorithm {unknown[0]!r} for sample {r.sample_id}")
        bar = (1.0 - theta) * r.base_score
        if not any(r.algo_scores[a] >= bar for a in algos):
            negatives.append(r.sample_id)
    return sorted(negatives)


def length_diff(pair: LengthPair) -> float:
    if pair.l_un < 1:
        raise ValueError(f"{pair.sample_id}: uncompressed length must be >= 1")
    return (pair.l_un - pair.l_cs) / pair.l_un


def bucketize(ds) -> tuple[float, float]:
    """Fractions of samples with ``D >= 0.5`` and with ``D <= -0.5``."""
    ds = np.asarray(list(ds), dtype=np.float64)
    if ds.size == 0:
        raise ValueError("no length differences to bucketize")
    return float(np.mean(ds >= 0.5)), float(np.mean(ds <= -0.5))


def set_label(algo_set) -> str:
    return "+".join(algo_set)


@dataclass
class SweepReport:
    counts: dict[tuple[float, str], int]  # (theta, set label) -> count
    breakdown: dict[tuple[str, str], int]  # (task_type, set label) -> count at theta=0.1
    negatives: dict[str, list[str]]  # set label -> ids at theta=0.1
    n_benign: int


def sweep_and_breakdown(records, thetas=DEFAULT_THETAS, algo_sets=None, benign: bool = True, scope: str = PER_TASK):
    records = list(records)
    if algo_sets is None:
        algos = sorted(records[0].algo_scores) if records else []
        algo_sets = [(a,) for a in algos] + ([tuple(algos)] if len(algos) > 1 else [])
    thetas = list(thetas)
    if thetas != sorted(thetas):
        raise ValueError("thetas must be sorted ascending")
    pool = benign_filter(records, scope) if benign and records else records
    by_id = {r.sample_id: r for r in pool}

    counts, breakdown, negatives = {}, {}, {}
    for s in algo_sets:
        label = set_label(s)
        for theta in thetas:
            counts[(theta, label)] = len(collect_negatives(pool, theta, s))
        ids = collect_negatives(pool, BREAKDOWN_THETA, s)
        negatives[label] = ids
        for task, n in sorted(Counter(by_id[i].task_type for i in ids).items()):
            breakdown[(task, label)] = n
    return SweepReport(counts, breakdown, negatives, len(pool))


def benchmark_scores(records, sample_ids) -> dict[str, float]:
    """Mean score per algorithm (and ``base``) over a negative-sample subset."""
    wanted = set(sample_ids)
    subset = [r for r in records if r.sample_id in wanted]
    if not subset:
        return {}
    out = {"base": float(np.mean([r.base_score for r in subset]))}
    for a in sorted(subset[0].algo_scores):
        out[a] = float(np.mean([r.algo_scores[a] for r in subset]))
    return out


def record_from_json(obj: dict) -> ScoreRecord:
    return ScoreRecord(
        sample_id=str(obj["sample_id"]),
        task_type=str(obj["task_type"]),
        base_score=float(obj["base_score"]),
        algo_scores={str(k): float(v) for k, v in obj["algo_scores"].items()},
    )


def load_scores(path) -> list[ScoreRecord]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                out.append(record_from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}: line {line_no}: {e}") from None
    return out


def length_pairs(samples, policy: str, baseline: str = "fp16") -> list[LengthPair]:
    return [LengthPair(s.id, s.output_len[baseline], s.output_len[policy]) for s in samples]


def write_reports(report: SweepReport, records, out_dir, bucket_rows=None) -> list[str]:
    """Write sweep, breakdown, negative-export and (optionally) bucket tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = ["sweep.csv", "breakdown.csv", "negatives.jsonl"]
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["theta", "algo_set", "negatives"])
        for (theta, label), n in report.counts.items():
            w.writerow([theta, label, n])
    with open(out / "breakdown.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["task_type", "algo_set", "negatives"])
        for (task, label), n in sorted(report.breakdown.items()):
            w.writerow([task, label, n])
    by_id = {r.sample_id: r for r in records}
    with open(out / "negatives.jsonl", "w", encoding="utf-8") as f:
        for label, ids in report.negatives.items():
            for i in ids:
                r = by_id[i]
                row = {
                    "algo_set": label,
                    "sample_id": r.sample_id,
                    "task_type": r.task_type,
                    "base_score": r.base_score,
                    "algo_scores": r.algo_scores,
                }
                f.write(json.dumps(row, sort_keys=True) + "\n")
    if bucket_rows is not None:
        files.append("buckets.csv")
        with open(out / "buckets.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["algorithm", "frac_d_ge_50", "frac_d_le_neg50", "samples"])
            for row in bucket_rows:
                w.writerow(row)
    return files
