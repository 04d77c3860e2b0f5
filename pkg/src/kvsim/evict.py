"""Toy causal attention and token-eviction policies (StreamingLLM, H2O)."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

STREAMING = "streaming"
H2O = "h2o"


@dataclass(frozen=True)
class ModelDims:
    batch: int
    seq_len: int
    hidden: int
    heads: int
    head_dim: int

    def __post_init__(self):
        if min(self.batch, self.seq_len, self.hidden, self.heads, self.head_dim) < 1:
            raise ValueError("all model dimensions must be positive")
        if self.hidden != self.heads * self.head_dim:
            raise ValueError(f"hidden {self.hidden} != heads {self.heads} * head_dim {self.head_dim}")


@dataclass(frozen=True)
class ToyLayer:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    heads: int = 1

    @classmethod
    def init(cls, dims: ModelDims, seed: int = 0) -> ToyLayer:
        rng = np.random.default_rng(seed)
        w = [rng.uniform(-0.5, 0.5, size=(dims.hidden, dims.hidden)) for _ in range(3)]
        return cls(*w, heads=dims.heads)

    def project(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(q, k, v)`` for hidden states ``x`` of shape ``(tokens, hidden)``."""
        x = np.asarray(x, dtype=np.float64)
        return x @ self.w_q, x @ self.w_k, x @ self.w_v


@dataclass(frozen=True)
class EvictionPolicy:
    kind: str
    first: int  # sink tokens for StreamingLLM, heavy hitters for H2O
    recent: int
    interval: int = 1

    def __post_init__(self):
        if self.kind not in (STREAMING, H2O):
            raise ValueError(f"unknown eviction kind {self.kind!r}")
        if self.first < 0 or self.recent < 0 or self.budget <= 0:
            raise ValueError("eviction budget must be positive")
        if self.interval < 1:
            raise ValueError("interval must be >= 1")

    @property
    def budget(self) -> int:
        return self.first + self.recent


@dataclass(frozen=True, eq=False)
class CacheState:
    retained: tuple[int, ...]
    accumulated_score: np.ndarray = field(repr=False)
    step: int = 0

    @classmethod
    def fresh(cls, seq_len: int) -> CacheState:
        return cls(tuple(range(seq_len)), np.zeros(seq_len))

    def __post_init__(self):
        if len(self.accumulated_score) != len(self.retained):
            raise ValueError("one accumulated score per retained token is required")
        if any(b <= a for a, b in zip(self.retained, self.retained[1:])):
            raise ValueError("retained indices must be strictly increasing")

    def append(self, index: int) -> CacheState:
        if self.retained and index <= self.retained[-1]:
            raise ValueError(f"token {index} is not newer than {self.retained[-1]}")
        return replace(
            self,
            retained=self.retained + (index,),
            accumulated_score=np.append(self.accumulated_score, 0.0),
        )

    def keep(self, indices) -> CacheState:
        """Drop every retained token not in ``indices``; their scores are discarded."""
        wanted = set(indices)
        mask = np.array([i in wanted for i in self.retained], dtype=bool)
        if mask.sum() != len(wanted):
            raise ValueError("cannot keep tokens that are not retained")
        kept = tuple(i for i, m in zip(self.retained, mask) if m)
        return replace(self, retained=kept, accumulated_score=self.accumulated_score[mask])


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def toy_attention(q, k, v, causal: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Scaled dot-product attention for one head.

    With ``m`` queries against ``n`` keys, query ``i`` sits at absolute
    position ``n - m + i`` and (when causal) sees keys ``0..n - m + i``.  A
    single decode query therefore sees the whole cache.
    """
    q, k, v = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (q, k, v))
    m, d = q.shape
    n = k.shape[0]
    if k.shape[1] != d:
        raise ValueError(f"query width {d} != key width {k.shape[1]}")
    if v.shape[0] != n:
        raise ValueError(f"{n} keys but {v.shape[0]} values")
    if m > n:
        raise ValueError(f"{m} queries cannot attend to only {n} keys")

    logits = q @ k.T / np.sqrt(d)
    if causal:
        offset = n - m
        mask = np.arange(n)[None, :] > (np.arange(m)[:, None] + offset)
        logits = np.where(mask, -np.inf, logits)
    scores = softmax(logits, axis=-1)
    return scores @ v, scores


def accumulate_scores(state: CacheState, new_scores) -> CacheState:
    new_scores = np.asarray(new_scores, dtype=np.float64).ravel()
    if new_scores.shape[0] != len(state.retained):
        raise ValueError(f"{new_scores.shape[0]} scores for {len(state.retained)} retained tokens")
    return replace(state, accumulated_score=state.accumulated_score + new_scores, step=state.step + 1)


def evict_streaming(seq_len: int, sink: int, recent: int) -> list[int]:
    if min(seq_len, sink, recent) < 0:
        raise ValueError("counts must be non-negative")
    if seq_len <= sink + recent:
        return list(range(seq_len))
    return list(range(sink)) + list(range(seq_len - recent, seq_len))


def evict_h2o(state: CacheState, heavy: int, recent: int) -> list[int]:
    """Keep the last ``recent`` tokens plus the ``heavy`` best-scoring older ones.

    Ties in accumulated score go to the more recent token.
    """
    retained = state.retained
    n = len(retained)
    if n <= heavy + recent:
        return list(retained)
    split = n - recent
    older = sorted(range(split), key=lambda i: (state.accumulated_score[i], i), reverse=True)
    chosen = sorted(older[:heavy]) + list(range(split, n))
    return [retained[i] for i in chosen]


def evict(state: CacheState, policy: EvictionPolicy) -> CacheState:
    if policy.kind == STREAMING:
        # positions within the retained list: sinks are the oldest survivors
        keep = evict_streaming(len(state.retained), policy.first, policy.recent)
        return state.keep(state.retained[i] for i in keep)
    return state.keep(evict_h2o(state, policy.first, policy.recent))


@dataclass
class DecodeTrace:
    outputs: np.ndarray
    retained_sizes: list[int]
    state: CacheState


def decode_with_eviction(
    layer: ToyLayer,
    prompt: np.ndarray,
    steps: int,
    policy: EvictionPolicy | None = None,
    seed: int = 0,
) -> DecodeTrace:
    """Run a toy decode loop: append each new token's K/V, attend, evict.

    New hidden states are drawn from a seeded normal generator; only cache
    dynamics matter here.  Attention scores are averaged over heads before
    they are accumulated.
    """
    rng = np.random.default_rng(seed)
    prompt = np.asarray(prompt, dtype=np.float64)
    hidden = prompt.shape[1]
    head_dim = hidden // layer.heads

    _, keys, values = layer.project(prompt)
    state = CacheState.fresh(prompt.shape[0])
    outputs, sizes = [], []
    for t in range(steps):
        x = rng.standard_normal((1, hidden))
        q, k, v = layer.project(x)
        keys = np.concatenate([keys, k], axis=0)
        values = np.concatenate([values, v], axis=0)
        state = state.append(prompt.shape[0] + t)

        out = np.empty((1, hidden))
        mean_scores = np.zeros(keys.shape[0])
        for h in range(layer.heads):
            cols = slice(h * head_dim, (h + 1) * head_dim)
            o, s = toy_attention(q[:, cols], keys[:, cols], values[:, cols])
            out[:, cols] = o
            mean_scores += s[0] / layer.heads
        state = accumulate_scores(state, mean_scores)
        outputs.append(out[0])

        if policy is not None and state.step % policy.interval == 0:
            before = state.retained
            state = evict(state, policy)
            keep = np.isin(before, state.retained)
            keys, values = keys[keep], values[keep]
        sizes.append(len(state.retained))
    return DecodeTrace(np.array(outputs), sizes, state)
