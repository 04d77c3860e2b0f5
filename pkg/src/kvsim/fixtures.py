"""Deterministic synthetic profiles, request traces and score files.

The profile embeds an analytic LLaMA-7B-on-one-GPU-like cost function for
FP16, calibrated so FP16 decode at ``(batch=1, kv_len=1024)`` runs at 129.72
tokens/s and prefill at ``(batch=2, kv_len=1024)`` at 6610.24 tokens/s.
Compressed policies divide both time components by their measured
throughput ratio, so the ratio to FP16 is the same at every grid point.
"""

from __future__ import annotations

import json
import zlib

import numpy as np

from kvsim.costmodel import DECODE, PREFILL, CostProfile, ProfilePoint
from kvsim.evaluator import DEFAULT_THETAS, ScoreRecord
from kvsim.sim import Request

GRID_BATCHES = tuple(2**i for i in range(8))  # 1..128
GRID_KV_LENS = tuple(2**i for i in range(7, 15))  # 128..16384

FP16_DECODE_TPS = 129.72
FP16_PREFILL_TPS = 6610.24

# throughput relative to FP16 at TP=1
DECODE_RATIO = {"fp16": 1.0, "kivi": 0.98, "gear": 1.02, "h2o": 1.34, "stream": 1.34}
PREFILL_RATIO = {"fp16": 1.0, "kivi": 1.06, "gear": 0.86, "h2o": 0.58, "stream": 0.95}

# fraction of samples with D >= 0.5 and with D <= -0.5
LENGTH_BUCKETS = {
    "kivi": (0.109, 0.245),
    "gear": (0.068, 0.271),
    "h2o": (0.095, 0.213),
    "stream": (0.165, 0.264),
}

TASK_TYPES = ("chat", "code", "math", "qa", "summarization")
TASK_WEIGHTS = (0.4, 0.15, 0.1, 0.2, 0.15)

_DECODE_OTHER = (7.0e-3, 2.0e-5)  # seconds: fixed + per batch row
_DECODE_ATTN = (1.0 / FP16_DECODE_TPS - _DECODE_OTHER[0] - _DECODE_OTHER[1]) / 1024
_PREFILL_FIXED = 5.0e-3
_PREFILL_ATTN = 0.15 * (2048 / FP16_PREFILL_TPS) / (2 * 1024**2)
_PREFILL_LINEAR = (2048 / FP16_PREFILL_TPS - _PREFILL_FIXED - _PREFILL_ATTN * 2 * 1024**2) / 2048


def component_rng(seed: int, label: str) -> np.random.Generator:
    """Independent stream per ``label`` so components never perturb each other."""
    return np.random.default_rng([seed, zlib.crc32(label.encode())])


def ground_truth(policy: str, phase: str, batch: float, kv_len: float) -> tuple[float, float]:
    """Analytic ``(attn_s, other_s)`` per iteration."""
    if phase == DECODE:
        attn = _DECODE_ATTN * batch * kv_len
        other = _DECODE_OTHER[0] + _DECODE_OTHER[1] * batch
        ratio = DECODE_RATIO[policy]
    elif phase == PREFILL:
        attn = _PREFILL_ATTN * batch * kv_len**2
        other = _PREFILL_FIXED + _PREFILL_LINEAR * batch * kv_len
        ratio = PREFILL_RATIO[policy]
    else:
        raise ValueError(f"unknown phase {phase!r}")
    return attn / ratio, other / ratio


def gen_profile(seed: int = 0, noise: float = 0.0, policies=tuple(DECODE_RATIO)) -> CostProfile:
    """Grid profile sampled from :func:`ground_truth` with optional multiplicative noise."""
    rng = component_rng(seed, "profile")
    points = []
    for policy in policies:
        for phase in (PREFILL, DECODE):
            for b in GRID_BATCHES:
                for kv in GRID_KV_LENS:
                    attn, other = ground_truth(policy, phase, b, kv)
                    if noise:
                        attn *= 1 + rng.uniform(-noise, noise)
                        other *= 1 + rng.uniform(-noise, noise)
                    points.append(ProfilePoint(policy, phase, b, kv, attn, other))
    return CostProfile(points)


def analytic_profile(fixed: float, slope: float, batches, kv_lens, noise: float, rng, policy="fp16", phase=DECODE):
    """Profile of ``t = fixed + slope * batch * kv_len`` with multiplicative noise on each cell."""
    points = []
    for b in batches:
        for kv in kv_lens:
            t = (fixed + slope * b * kv) * (1 + rng.uniform(-noise, noise))
            points.append(ProfilePoint(policy, phase, int(b), int(kv), 0.0, t))
    return CostProfile(points)


def constant_profile(policies, prefill_s: float, decode_s: float) -> CostProfile:
    points = []
    for policy in policies:
        for b in (1, 1024):
            for kv in (1, 1 << 20):
                points.append(ProfilePoint(policy, PREFILL, b, kv, 0.0, prefill_s))
                points.append(ProfilePoint(policy, DECODE, b, kv, 0.0, decode_s))
    return CostProfile(points)


def _compressed_len(rng: np.random.Generator, l_un: int, short: float, long: float, cap: int, long_max: float) -> int:
    u = rng.uniform()
    if u < short:
        n = int(np.floor(l_un * rng.uniform(0.1, 0.5)))
    elif u < short + long:
        n = int(np.ceil(l_un * rng.uniform(1.5, long_max)))
    else:
        n = int(np.rint(l_un * rng.uniform(0.6, 1.4)))
    return int(min(max(n, 1), cap))


def gen_trace(
    n: int = 1000,
    seed: int = 0,
    rps: float | None = 10.0,
    policies=tuple(LENGTH_BUCKETS),
    prompt_median: float = 256,
    output_median: float = 90,
    long_max: float = 3.0,
) -> list[Request]:
    """ShareGPT-like lognormal prompt/output lengths with per-policy length shifts.

    Each compressed policy's output length is drawn so the shares of samples
    with ``D >= 0.5`` and ``D <= -0.5`` follow :data:`LENGTH_BUCKETS`.
    """
    rng = component_rng(seed, "trace")
    arrivals = None
    if rps is not None:
        gaps = component_rng(seed, "arrivals").exponential(1.0 / rps, size=n)
        arrivals = np.cumsum(gaps)
    out = []
    for i in range(n):
        prompt = int(np.clip(np.rint(prompt_median * np.exp(0.9 * rng.standard_normal())), 16, 3072))
        base = int(np.clip(np.rint(output_median * np.exp(0.8 * rng.standard_normal())), 8, 1536))
        task = str(rng.choice(TASK_TYPES, p=TASK_WEIGHTS))
        lens = {"fp16": base}
        for policy in policies:
            short, long = LENGTH_BUCKETS[policy]
            lens[policy] = _compressed_len(rng, base, short, long, cap=4096, long_max=long_max)
        arrival = None if arrivals is None else float(arrivals[i])
        out.append(Request(f"r{i:05d}", arrival, prompt, task, lens))
    return out


def gen_scores(n: int = 1000, seed: int = 0, algos=("kivi", "gear", "h2o", "stream")) -> list[ScoreRecord]:
    """Per-sample accuracy scores in [0, 1]; compressed scores mostly near baseline with a lossy tail."""
    rng = component_rng(seed, "scores")
    out = []
    for i in range(n):
        task = str(rng.choice(TASK_TYPES, p=TASK_WEIGHTS))
        base = round(float(rng.beta(2.0, 1.5)), 3)
        scores = {}
        for a in algos:
            if rng.uniform() < 0.6:
                drop = rng.normal(0.0, 0.05)
            else:
                drop = rng.uniform(0.0, 0.6)
            scores[a] = round(float(np.clip(base * (1 - drop), 0.0, 1.0)), 3)
        out.append(ScoreRecord(f"s{i:05d}", task, base, scores))
    return out


def brute_force_negative_counts(records, thetas=DEFAULT_THETAS, algo_sets=None) -> dict[str, dict[str, int]]:
    """Plain-loop reference counts keyed ``theta -> set label -> count``.

    Applies the per-task benign filter first.  Kept deliberately naive; it is
    the stored answer the evaluator is checked against.
    """
    records = list(records)
    totals: dict[str, float] = {}
    sizes: dict[str, int] = {}
    for r in records:
        totals[r.task_type] = totals.get(r.task_type, 0.0) + r.base_score
        sizes[r.task_type] = sizes.get(r.task_type, 0) + 1
    benign = [r for r in records if r.base_score >= totals[r.task_type] / sizes[r.task_type]]
    if algo_sets is None:
        algos = sorted(records[0].algo_scores)
        algo_sets = [[a] for a in algos] + [algos]
    result: dict[str, dict[str, int]] = {}
    for theta in thetas:
        row = {}
        for s in algo_sets:
            count = 0
            for r in benign:
                negative = True
                for a in s:
                    if r.algo_scores[a] >= (1 - theta) * r.base_score:
                        negative = False
                if negative:
                    count += 1
            row["+".join(s)] = count
        result[repr(theta)] = row
    return result


def write_scores(records, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            row = {
                "sample_id": r.sample_id,
                "task_type": r.task_type,
                "base_score": r.base_score,
                "algo_scores": r.algo_scores,
            }
            f.write(json.dumps(row, sort_keys=True) + "\n")
