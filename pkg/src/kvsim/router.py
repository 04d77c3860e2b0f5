"""Request routing across replicas running different compression policies."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

from kvsim.costmodel import DECODE, PREFILL, CostProfile, predict_time


class RoutingPolicy(str, enum.Enum):
    BASELINE = "baseline"
    THROUGHPUT = "throughput"
    LENGTH = "length"
    BOTH = "both"

    @classmethod
    def parse(cls, name: str) -> RoutingPolicy:
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown routing policy {name!r}; expected one of {[p.value for p in cls]}") from None


@dataclass(frozen=True)
class ReplicaSnapshot:
    """What the router may see of a replica at decision time."""

    id: int
    policy: str
    load: int  # requests queued, prefilling or decoding
    kv_bytes_used: int
    max_context: int = 0  # longest context among the replica's requests


class LatencyEstimate(NamedTuple):
    prefill_s: float
    decode_s: float

    @property
    def total_s(self) -> float:
        return self.prefill_s + self.decode_s


def per_token_time(profile: CostProfile, policy: str, batch: float, kv_len: float) -> float:
    """Seconds between output tokens for one request in a decode batch of ``batch``."""
    return predict_time(profile, policy, DECODE, batch, kv_len).total


def estimate_e2e(request, replica: ReplicaSnapshot, profile: CostProfile, predictor) -> LatencyEstimate:
    """Prefill time plus predicted length times per-token decode time, both at ``load + 1``."""
    batch = replica.load + 1
    prefill = predict_time(profile, replica.policy, PREFILL, batch, request.prompt_len).total
    length = predictor.predict(request.prompt_len, request.task_type, replica.policy, request.id)
    kv = request.prompt_len + length / 2
    return LatencyEstimate(prefill, length * per_token_time(profile, replica.policy, batch, kv))


def _argmin(replicas, key) -> int:
    best = min(replicas, key=lambda r: (key(r), r.id))
    return best.id


def route(request, replicas, policy: RoutingPolicy, profile: CostProfile, predictor) -> int:
    """Pick a replica id for ``request``; ties go to the lowest id."""
    replicas = list(replicas)
    if not replicas:
        raise ValueError("no replicas to route to")
    policy = RoutingPolicy(policy)
    if policy is RoutingPolicy.BASELINE:
        return _argmin(replicas, lambda r: r.kv_bytes_used)
    if policy is RoutingPolicy.THROUGHPUT:
        # highest per-request decode throughput == lowest per-token time; a decode
        # batch is billed at its longest context, so that is the one to look up
        return _argmin(
            replicas,
            lambda r: per_token_time(profile, r.policy, r.load + 1, max(r.max_context, request.prompt_len)),
        )
    if policy is RoutingPolicy.LENGTH:
        return _argmin(
            replicas, lambda r: predictor.predict(request.prompt_len, request.task_type, r.policy, request.id)
        )
    return _argmin(replicas, lambda r: estimate_e2e(request, r, profile, predictor).total_s)
