"""Iteration-level discrete-event simulation of multi-replica LLM serving.

Each replica runs FCFS continuous batching.  A step is either a prefill of
every request admitted at that moment (billed at the longest prompt) or one
decode iteration of the running batch (billed at the longest context).
Memory is tracked in pages of ``page_size`` full-precision tokens; compressed
caches occupy ``ceil(kv_bytes / page_bytes)`` pages.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from kvsim.costmodel import DECODE, PREFILL, CostProfile, predict_time
from kvsim.policies import CompressionPolicy, FootprintModel
from kvsim.quantkv import kv_bytes
from kvsim.router import ReplicaSnapshot, RoutingPolicy, route

QUEUED, PREFILLING, DECODING, DONE, REJECTED = "queued", "prefilling", "decoding", "done", "rejected"

_DONE_EVENT, _ARRIVAL_EVENT = 0, 1


@dataclass(frozen=True)
class Request:
    id: str
    arrival_time: float | None
    prompt_len: int
    task_type: str
    output_len: dict[str, int] = field(hash=False)

    def __post_init__(self):
        if self.prompt_len < 1:
            raise ValueError(f"request {self.id}: prompt_len must be >= 1")
        if any(n < 1 for n in self.output_len.values()):
            raise ValueError(f"request {self.id}: output lengths must be >= 1")


@dataclass(frozen=True)
class Replica:
    id: int
    policy: CompressionPolicy
    mem_capacity: int
    page_size: int = 16
    max_batch: int = 64

    def __post_init__(self):
        if self.mem_capacity <= 0:
            raise ValueError(f"replica {self.id}: capacity must be positive")
        if self.page_size < 1 or self.max_batch < 1:
            raise ValueError(f"replica {self.id}: page_size and max_batch must be >= 1")


@dataclass
class RequestState:
    phase: str = QUEUED
    replica: int | None = None
    tokens_generated: int = 0
    pages_held: int = 0
    pages_reserved: int = 0
    peak_pages: int = 0
    ttft: float | None = None
    finish_time: float | None = None


@dataclass(frozen=True)
class RequestOutcome:
    request_id: str
    replica: int | None
    status: str
    ttft: float | None
    e2e: float | None
    output_len: int
    peak_pages: int


@dataclass
class ReplicaStats:
    replica: int
    policy: str
    total_pages: int
    busy_time: float = 0.0
    prefill_time: float = 0.0
    decode_time: float = 0.0
    decode_tokens: int = 0
    decode_iterations: int = 0
    peak_pages_held: int = 0
    utilization: float = 0.0
    decode_by_batch: dict[int, list[float]] = field(default_factory=dict)  # batch -> [tokens, seconds]

    def decode_throughput(self, batch: int | None = None) -> float:
        if batch is None:
            tokens, seconds = self.decode_tokens, self.decode_time
        else:
            tokens, seconds = self.decode_by_batch[batch]
        return tokens / seconds


@dataclass
class SimResult:
    outcomes: list[RequestOutcome]
    replicas: list[ReplicaStats]
    makespan: float = 0.0

    @property
    def finished(self) -> list[RequestOutcome]:
        return [o for o in self.outcomes if o.status == DONE]

    @property
    def rejected(self) -> list[RequestOutcome]:
        return [o for o in self.outcomes if o.status == REJECTED]


def gen_poisson_arrivals(rate: float, n: int, seed=0) -> list[float]:
    """Arrival times with i.i.d. exponential gaps of mean ``1 / rate``."""
    if rate <= 0:
        raise ValueError("arrival rate must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return np.cumsum(rng.exponential(1.0 / rate, size=n)).tolist()


class _ReplicaRun:
    def __init__(self, spec: Replica, fm: FootprintModel, profile: CostProfile):
        self.spec = spec
        self.fm = fm
        self.profile = profile
        self.page_bytes = spec.page_size * fm.fp16_bytes_per_token
        self.total_pages = spec.mem_capacity // self.page_bytes
        self.queue: deque[int] = deque()
        self.prefilling: list[int] = []
        self.running: list[int] = []
        self.busy = False
        self.reserved = 0
        self.held = 0
        self._page_cache: dict[int, int] = {}
        self.stats = ReplicaStats(spec.id, spec.policy.name, self.total_pages)

    def pages(self, tokens: int) -> int:
        policy = self.spec.policy
        ps = self.spec.page_size
        if policy.kind == "fp16":
            return -(-tokens // ps)
        if policy.kind == "evict":
            return -(-min(tokens, policy.eviction.budget) // ps)
        n = self._page_cache.get(tokens)
        if n is None:
            n = math.ceil(kv_bytes(policy, tokens, self.fm) / self.page_bytes)
            self._page_cache[tokens] = n
        return n

    @property
    def load(self) -> int:
        return len(self.queue) + len(self.prefilling) + len(self.running)


def simulate(
    replicas,
    requests,
    routing: RoutingPolicy | str,
    profile: CostProfile,
    predictor,
    footprint: FootprintModel | None = None,
) -> SimResult:
    """Route and serve ``requests`` (sorted by arrival) on ``replicas``.

    Admission reserves a request's peak page demand, so running requests never
    stall for memory.  A request whose peak demand exceeds its replica's total
    pages is rejected and reported, never dropped.
    """
    fm = footprint or FootprintModel()
    routing = RoutingPolicy(routing)
    requests = list(requests)
    replicas = list(replicas)
    if [r.id for r in replicas] != list(range(len(replicas))):
        raise ValueError("replica ids must be 0..n-1 in order")
    for r in replicas:
        if not profile.covers(r.policy.name):
            raise KeyError(f"profile does not cover policy {r.policy.name!r} of replica {r.id}")
    times = [r.arrival_time for r in requests]
    if any(t is None for t in times):
        raise ValueError("every request needs an arrival_time")
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("requests must be sorted by arrival_time")

    runs = [_ReplicaRun(r, fm, profile) for r in replicas]
    states = [RequestState() for _ in requests]
    heap: list = []
    seq = 0
    for i, req in enumerate(requests):
        heapq.heappush(heap, (req.arrival_time, _ARRIVAL_EVENT, seq, i, None))
        seq += 1

    def target(i: int, run: _ReplicaRun) -> int:
        return requests[i].output_len[run.spec.policy.name]

    def context(i: int) -> int:
        return requests[i].prompt_len + states[i].tokens_generated

    def max_context(run: _ReplicaRun) -> int:
        members = list(run.queue) + run.prefilling + run.running
        return max((context(i) for i in members), default=0)

    def start_step(run: _ReplicaRun, now: float) -> None:
        nonlocal seq
        spec = run.spec
        admitted = []
        free = run.total_pages - run.reserved
        while run.queue and len(run.running) + len(admitted) < spec.max_batch:
            i = run.queue[0]
            need = run.pages(requests[i].prompt_len + target(i, run))
            if need > free:
                break
            run.queue.popleft()
            free -= need
            run.reserved += need
            st = states[i]
            st.pages_reserved = need
            st.pages_held = run.pages(requests[i].prompt_len)
            st.peak_pages = st.pages_held
            run.held += st.pages_held
            st.phase = PREFILLING
            admitted.append(i)

        if admitted:
            longest = max(requests[i].prompt_len for i in admitted)
            dur = predict_time(profile, spec.policy.name, PREFILL, len(admitted), longest).total
            run.prefilling = admitted
            run.stats.prefill_time += dur
            kind, members = PREFILL, admitted
        elif run.running:
            longest = max(context(i) for i in run.running)
            batch = len(run.running)
            dur = predict_time(profile, spec.policy.name, DECODE, batch, longest).total
            run.stats.decode_time += dur
            run.stats.decode_tokens += batch
            run.stats.decode_iterations += 1
            cell = run.stats.decode_by_batch.setdefault(batch, [0, 0.0])
            cell[0] += batch
            cell[1] += dur
            kind, members = DECODE, list(run.running)
        else:
            run.busy = False
            return
        run.busy = True
        run.stats.busy_time += dur
        heapq.heappush(heap, (now + dur, _DONE_EVENT, seq, spec.id, (kind, members)))
        seq += 1
        run.stats.peak_pages_held = max(run.stats.peak_pages_held, run.held)
        if run.held > run.total_pages:
            raise AssertionError(f"replica {spec.id} holds {run.held} pages of {run.total_pages}")

    def finish_step(run: _ReplicaRun, now: float, kind: str, members: list[int]) -> None:
        if kind == PREFILL:
            for i in members:
                states[i].phase = DECODING
            run.running.extend(members)
            run.prefilling = []
            return
        still = []
        for i in members:
            st = states[i]
            st.tokens_generated += 1
            if st.tokens_generated == 1:
                st.ttft = now - requests[i].arrival_time
            pages = run.pages(context(i))
            run.held += pages - st.pages_held
            st.pages_held = pages
            st.peak_pages = max(st.peak_pages, pages)
            if st.tokens_generated == target(i, run):
                st.phase = DONE
                st.finish_time = now
                run.held -= st.pages_held
                run.reserved -= st.pages_reserved
                st.pages_held = st.pages_reserved = 0
            else:
                still.append(i)
        run.running = still
        run.stats.peak_pages_held = max(run.stats.peak_pages_held, run.held)
        if run.held > run.total_pages:
            raise AssertionError(f"replica {run.spec.id} holds {run.held} pages of {run.total_pages}")

    makespan = 0.0
    while heap:
        now, event, _, a, b = heapq.heappop(heap)
        makespan = max(makespan, now)
        if event == _DONE_EVENT:
            run = runs[a]
            finish_step(run, now, *b)
            start_step(run, now)
            continue

        req = requests[a]
        # memory in use is what the running caches hold right now, not reservations
        snaps = [
            ReplicaSnapshot(r.spec.id, r.spec.policy.name, r.load, r.held * r.page_bytes, max_context(r)) for r in runs
        ]
        rid = route(req, snaps, routing, profile, predictor)
        run = runs[rid]
        st = states[a]
        st.replica = rid
        if run.pages(req.prompt_len + target(a, run)) > run.total_pages:
            st.phase = REJECTED
            continue
        run.queue.append(a)
        if not run.busy:
            start_step(run, now)

    outcomes = []
    for req, st in zip(requests, states):
        if st.phase == DONE:
            e2e = st.finish_time - req.arrival_time
            out_len = st.tokens_generated
        else:
            e2e = None
            out_len = 0
        outcomes.append(RequestOutcome(req.id, st.replica, st.phase, st.ttft, e2e, out_len, st.peak_pages))
        if st.phase not in (DONE, REJECTED):
            raise AssertionError(f"request {req.id} left in phase {st.phase}")
    for run in runs:
        run.stats.utilization = run.stats.busy_time / makespan if makespan > 0 else 0.0
    return SimResult(outcomes, [run.stats for run in runs], makespan)


@dataclass(frozen=True)
class Summary:
    count: int
    rejected: int
    mean_e2e: float | None
    p50_e2e: float | None
    p99_e2e: float | None
    mean_ttft: float | None
    cdf: list[tuple[float, float]]

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["cdf"] = [list(p) for p in self.cdf]
        return d


def empirical_cdf(values) -> list[tuple[float, float]]:
    """Sorted ``(value, fraction <= value)`` pairs, one per distinct value."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        return []
    uniq, idx = np.unique(v, return_index=True)
    ends = np.append(idx[1:], v.size)
    return [(float(x), float(e) / v.size) for x, e in zip(uniq, ends)]


def metrics(result: SimResult) -> Summary:
    done = result.finished
    e2e = [o.e2e for o in done]
    ttft = [o.ttft for o in done]
    if not e2e:
        return Summary(0, len(result.rejected), None, None, None, None, [])
    return Summary(
        count=len(e2e),
        rejected=len(result.rejected),
        mean_e2e=float(np.mean(e2e)),
        p50_e2e=float(np.percentile(e2e, 50)),
        p99_e2e=float(np.percentile(e2e, 99)),
        mean_ttft=float(np.mean(ttft)),
        cdf=empirical_cdf(e2e),
    )


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def write_results(result: SimResult, out_dir, extra: dict | None = None) -> dict:
    """Write ``requests.csv``, ``cdf.csv`` and ``summary.json``; return the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "requests.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["request_id", "replica", "ttft_s", "e2e_s"])
        for o in result.outcomes:
            w.writerow([o.request_id, "" if o.replica is None else o.replica, _fmt(o.ttft), _fmt(o.e2e)])
    summary = metrics(result)
    with open(out / "cdf.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["e2e_s", "fraction"])
        for x, frac in summary.cdf:
            w.writerow([repr(x), repr(frac)])
    doc = {
        **(extra or {}),
        "count": summary.count,
        "rejected": summary.rejected,
        "rejected_ids": [o.request_id for o in result.rejected],
        "mean_e2e_s": summary.mean_e2e,
        "p50_e2e_s": summary.p50_e2e,
        "p99_e2e_s": summary.p99_e2e,
        "mean_ttft_s": summary.mean_ttft,
        "makespan_s": result.makespan,
        "replicas": [
            {
                "replica": s.replica,
                "policy": s.policy,
                "total_pages": s.total_pages,
                "peak_pages_held": s.peak_pages_held,
                "utilization": s.utilization,
                "decode_tokens": s.decode_tokens,
                "decode_time_s": s.decode_time,
            }
            for s in result.replicas
        ],
        "files": ["requests.csv", "cdf.csv", "summary.json"],
    }
    with open(out / "summary.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return doc


def request_from_json(obj: dict) -> Request:
    arrival = obj.get("arrival_time")
    return Request(
        id=str(obj["id"]),
        arrival_time=None if arrival is None else float(arrival),
        prompt_len=int(obj["prompt_len"]),
        task_type=str(obj.get("task_type", "unknown")),
        output_len={str(k): int(v) for k, v in obj["output_len"].items()},
    )


def request_to_json(req: Request) -> dict:
    d = {"id": req.id, "prompt_len": req.prompt_len, "task_type": req.task_type, "output_len": req.output_len}
    if req.arrival_time is not None:
        d["arrival_time"] = req.arrival_time
    return d


def load_request_trace(path) -> list[Request]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                out.append(request_from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}: line {line_no}: {e}") from None
    return out


def write_request_trace(requests, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for req in requests:
            f.write(json.dumps(request_to_json(req), sort_keys=True) + "\n")


def with_arrivals(requests, rate: float, rng) -> list[Request]:
    """Fill in missing arrival times with a Poisson process; keep given ones."""
    requests = list(requests)
    missing = [i for i, r in enumerate(requests) if r.arrival_time is None]
    if missing:
        gen = gen_poisson_arrivals(rate, len(requests), rng)
        requests = [
            Request(r.id, gen[i], r.prompt_len, r.task_type, r.output_len) if r.arrival_time is None else r
            for i, r in enumerate(requests)
        ]
    return sorted(requests, key=lambda r: r.arrival_time)
