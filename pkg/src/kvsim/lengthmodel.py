"""Response-length predictors: a trace-backed oracle and a bucket-mean ratio heuristic.

Length traces are JSON Lines, one object per request::

    {"id": "r0", "task_type": "qa", "prompt_len": 120, "output_len": {"fp16": 80, "kivi": 131}}
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np


class LengthPredictionError(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True)
class LengthSample:
    id: str
    task_type: str
    prompt_len: int
    output_len: dict[str, int] = field(hash=False)

    def __post_init__(self):
        if self.prompt_len < 1:
            raise ValueError(f"{self.id}: prompt_len must be >= 1")
        for policy, n in self.output_len.items():
            if n < 1:
                raise ValueError(f"{self.id}: output_len[{policy}] must be >= 1")


class OracleLengthPredictor:
    """Returns the recorded output length for a known request."""

    def __init__(self, lengths: dict[str, dict[str, int]]):
        self.lengths = lengths

    @classmethod
    def from_trace(cls, samples) -> OracleLengthPredictor:
        return cls({s.id: dict(s.output_len) for s in samples})

    def predict(self, prompt_len: int, task_type: str, policy: str, request_id: str | None = None) -> int:
        try:
            return self.lengths[request_id][policy]
        except KeyError:
            raise LengthPredictionError(f"no recorded length for request {request_id!r} under {policy!r}") from None


class BucketLengthPredictor:
    """Predicts ``round(ratio * prompt_len)`` with the mean output/prompt ratio of a bucket.

    Buckets are ``(task_type, policy)``.  Unseen task types fall back to the
    policy's mean ratio over the whole trace, unseen policies to the overall
    mean ratio.
    """

    def __init__(self, ratios: dict[tuple[str, str], float], policy_ratios: dict[str, float], global_ratio: float):
        if global_ratio <= 0 or any(r <= 0 for r in ratios.values()):
            raise ValueError("ratios must be positive")
        self.ratios = ratios
        self.policy_ratios = policy_ratios
        self.global_ratio = global_ratio

    def ratio(self, task_type: str, policy: str) -> float:
        r = self.ratios.get((task_type, policy))
        if r is None:
            r = self.policy_ratios.get(policy, self.global_ratio)
        return r

    def predict(self, prompt_len: int, task_type: str, policy: str, request_id: str | None = None) -> int:
        if prompt_len < 1:
            raise ValueError("prompt_len must be >= 1")
        return max(1, round(self.ratio(task_type, policy) * prompt_len))


def train_bucket_heuristic(trace) -> BucketLengthPredictor:
    trace = list(trace)
    if not trace:
        raise ValueError("cannot train on an empty trace")
    buckets: dict[tuple[str, str], list[float]] = defaultdict(list)
    per_policy: dict[str, list[float]] = defaultdict(list)
    for s in trace:
        for policy, n in s.output_len.items():
            r = n / s.prompt_len
            buckets[(s.task_type, policy)].append(r)
            per_policy[policy].append(r)
    every = [r for v in per_policy.values() for r in v]
    return BucketLengthPredictor(
        {k: float(np.mean(v)) for k, v in buckets.items()},
        {k: float(np.mean(v)) for k, v in per_policy.items()},
        float(np.mean(every)),
    )


def predict_len(predictor, prompt_len: int, task_type: str, policy: str, request_id: str | None = None) -> int:
    return predictor.predict(prompt_len, task_type, policy, request_id)


def length_accuracy(pred: float, gt: float) -> float:
    if gt < 1:
        raise ValueError("ground-truth length must be >= 1")
    return max(0.0, (1.0 - abs(pred - gt) / gt) * 100.0)


def evaluate_predictor(predictor, trace, policies=None) -> dict[str, float]:
    """Mean length accuracy per policy over ``trace``."""
    acc: dict[str, list[float]] = defaultdict(list)
    for s in trace:
        for policy, gt in s.output_len.items():
            if policies is not None and policy not in policies:
                continue
            pred = predictor.predict(s.prompt_len, s.task_type, policy, s.id)
            acc[policy].append(length_accuracy(pred, gt))
    return {k: float(np.mean(v)) for k, v in sorted(acc.items())}


def sample_from_json(obj: dict) -> LengthSample:
    return LengthSample(
        id=str(obj["id"]),
        task_type=str(obj.get("task_type", "unknown")),
        prompt_len=int(obj["prompt_len"]),
        output_len={str(k): int(v) for k, v in obj["output_len"].items()},
    )


def load_length_trace(path) -> list[LengthSample]:
    samples = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                samples.append(sample_from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}: line {line_no}: {e}") from None
    return samples
