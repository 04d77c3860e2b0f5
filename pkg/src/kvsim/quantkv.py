"""Group-wise asymmetric KV-cache quantization and GEAR-style error correction.

Matrices are 2-D float arrays laid out as ``(tokens, channels)``.  A
:class:`QuantSpec` chooses the axis statistics are shared along:

* ``per-token``: each token row is split into chunks of ``group_size``
  channels, each chunk gets its own ``(lo, delta)``.
* ``per-channel``: each channel column is split into chunks of
  ``group_size`` tokens.

The trailing ``residual_window`` tokens are never quantized.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

if TYPE_CHECKING:
    from kvsim.policies import CompressionPolicy, FootprintModel

PER_TOKEN = "per-token"
PER_CHANNEL = "per-channel"
AXES = (PER_TOKEN, PER_CHANNEL)

POWER_ITERATIONS = 20
POWER_TOL = 1e-10


@dataclass(frozen=True)
class QuantSpec:
    bits: int = 4
    axis: str = PER_TOKEN
    group_size: int = 32
    residual_window: int = 0

    def __post_init__(self):
        if not 1 <= self.bits <= 8:
            raise ValueError(f"bits must be in 1..8, got {self.bits}")
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if self.residual_window < 0:
            raise ValueError("residual_window must be >= 0")

    @property
    def levels(self) -> int:
        return (1 << self.bits) - 1


@dataclass(frozen=True)
class GearSpec:
    base: QuantSpec
    sparsity_frac: float = 0.02
    rank: int = 2

    def __post_init__(self):
        if not 0.0 <= self.sparsity_frac <= 1.0:
            raise ValueError("sparsity_frac must be in [0, 1]")
        if self.rank < 0:
            raise ValueError("rank must be >= 0")


@dataclass(frozen=True)
class QuantizedMatrix:
    """Codes plus per-group affine parameters.

    ``group_lo`` and ``group_delta`` have shape ``(tokens, n_groups)`` for
    per-token layouts and ``(n_groups, channels)`` for per-channel ones.
    """

    codes: np.ndarray
    group_lo: np.ndarray
    group_delta: np.ndarray
    spec: QuantSpec
    residual: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return (self.codes.shape[0] + self.residual.shape[0], self.residual.shape[1])


class ErrorStats(NamedTuple):
    max_abs: float
    mean_abs: float
    lowrank_applied: bool = True


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))[0]
        raise ValueError(f"non-finite value at index {tuple(int(i) for i in bad)}")
    return x


def _group_starts(n: int, group_size: int) -> np.ndarray:
    return np.arange(0, n, group_size)


def _expand(params: np.ndarray, n: int, group_size: int, axis: int) -> np.ndarray:
    sizes = np.diff(np.append(_group_starts(n, group_size), n))
    return np.repeat(params, sizes, axis=axis)


def _group_axis(spec: QuantSpec) -> int:
    # per-token groups run along channels (axis 1), per-channel along tokens (axis 0)
    return 1 if spec.axis == PER_TOKEN else 0


def quantize(x, spec: QuantSpec) -> QuantizedMatrix:
    x = _as_matrix(x)
    n_res = min(spec.residual_window, x.shape[0])
    body, residual = x[: x.shape[0] - n_res], x[x.shape[0] - n_res :].copy()
    axis = _group_axis(spec)
    n = body.shape[axis]

    if body.size == 0:
        empty_shape = (body.shape[0], 0) if axis == 1 else (0, body.shape[1])
        return QuantizedMatrix(
            codes=np.zeros(body.shape, dtype=np.uint8),
            group_lo=np.zeros(empty_shape),
            group_delta=np.zeros(empty_shape),
            spec=spec,
            residual=residual,
        )

    starts = _group_starts(n, spec.group_size)
    lo = np.minimum.reduceat(body, starts, axis=axis)
    hi = np.maximum.reduceat(body, starts, axis=axis)
    delta = (hi - lo) / spec.levels
    # constant groups: delta 0, all codes 0, dequant returns lo
    delta[hi == lo] = 0.0

    lo_e = _expand(lo, n, spec.group_size, axis)
    delta_e = _expand(delta, n, spec.group_size, axis)
    safe = np.where(delta_e > 0, delta_e, 1.0)
    codes = np.where(delta_e > 0, np.rint((body - lo_e) / safe), 0.0)
    codes = np.clip(codes, 0, spec.levels).astype(np.uint8)
    return QuantizedMatrix(codes=codes, group_lo=lo, group_delta=delta, spec=spec, residual=residual)


def dequantize(q: QuantizedMatrix) -> np.ndarray:
    spec = q.spec
    if q.codes.size and int(q.codes.max()) > spec.levels:
        raise ValueError(f"code {int(q.codes.max())} out of range for {spec.bits}-bit spec")
    if q.codes.size == 0:
        body = np.zeros(q.codes.shape)
    else:
        axis = _group_axis(spec)
        n = q.codes.shape[axis]
        lo_e = _expand(q.group_lo, n, spec.group_size, axis)
        delta_e = _expand(q.group_delta, n, spec.group_size, axis)
        body = q.codes.astype(np.float64) * delta_e + lo_e
    return np.concatenate([body, q.residual], axis=0)


def lowrank_power(m: np.ndarray, rank: int, iterations: int = POWER_ITERATIONS, tol: float = POWER_TOL):
    """Rank-``rank`` approximation of ``m`` by power iteration with deflation.

    Returns ``(u, s, v)`` with ``u @ diag(s) @ v.T`` the approximation.  Stops
    early once the deflated remainder has no singular value above ``tol``.
    """
    m = np.array(m, dtype=np.float64)
    rows, cols = m.shape
    rng = np.random.default_rng(0)
    us, ss, vs = [], [], []
    for _ in range(rank):
        v = rng.standard_normal(cols)
        v /= np.linalg.norm(v)
        for _ in range(iterations):
            w = m.T @ (m @ v)
            norm = np.linalg.norm(w)
            if norm <= tol:
                break
            w /= norm
            done = np.linalg.norm(w - v) < tol
            v = w
            if done:
                break
        u = m @ v
        sigma = float(np.linalg.norm(u))
        if sigma <= tol:
            break
        u /= sigma
        m -= sigma * np.outer(u, v)
        us.append(u)
        ss.append(sigma)
        vs.append(v)
    if not ss:
        return np.zeros((rows, 0)), np.zeros(0), np.zeros((cols, 0))
    return np.column_stack(us), np.array(ss), np.column_stack(vs)


def gear_correct(x, spec: GearSpec) -> tuple[np.ndarray, ErrorStats]:
    """Quantize ``x`` and repair the error with sparse outliers plus a low-rank term.

    The largest ``ceil(s * N)`` residual entries are restored exactly; the rest
    of the residual is approximated at rank ``spec.rank``.  If the low-rank
    term would raise the worst-case error above plain quantization it is
    dropped, so the result never does worse than :func:`quantize` alone.
    """
    x = _as_matrix(x)
    dq = dequantize(quantize(x, spec.base))
    resid = x - dq
    plain_max = float(np.abs(resid).max()) if resid.size else 0.0

    n_sparse = math.ceil(spec.sparsity_frac * resid.size)
    sparse = np.zeros_like(resid)
    kept_mask = np.zeros(resid.shape, dtype=bool)
    if n_sparse:
        flat = np.abs(resid).ravel()
        # stable sort on -|r| keeps lower flat indices first among ties
        keep = np.argsort(-flat, kind="stable")[:n_sparse]
        sparse.flat[keep] = resid.flat[keep]
        kept_mask.flat[keep] = True
    remaining = resid - sparse

    rank = spec.rank
    limit = min(resid.shape) if resid.size else 0
    if rank > limit:
        warnings.warn(f"rank {rank} exceeds min(rows, cols) = {limit}; clamped", stacklevel=2)
        rank = limit

    lowrank = np.zeros_like(resid)
    if rank and np.any(remaining):
        u, s, v = lowrank_power(remaining, rank)
        lowrank = (u * s) @ v.T
        lowrank[kept_mask] = 0.0

    # outliers are stored verbatim, so write them back rather than adding them
    recon = dq + lowrank
    recon[kept_mask] = x[kept_mask]
    err = np.abs(x - recon)
    applied = bool(np.any(lowrank))
    if err.size and err.max() > plain_max:
        recon = dq.copy()
        recon[kept_mask] = x[kept_mask]
        err = np.abs(x - recon)
        applied = False
    if not err.size:
        return recon, ErrorStats(0.0, 0.0, applied)
    return recon, ErrorStats(float(err.max()), float(err.mean()), applied)


def _matrix_bytes(spec: QuantSpec, tokens: int, head_dim: int, meta_bytes: int, full_bytes: int) -> int:
    n_res = min(spec.residual_window, tokens)
    n_q = tokens - n_res
    code_bytes = math.ceil(n_q * head_dim * spec.bits / 8)
    if spec.axis == PER_TOKEN:
        groups = n_q * math.ceil(head_dim / spec.group_size)
    else:
        groups = head_dim * math.ceil(n_q / spec.group_size)
    return code_bytes + groups * meta_bytes + n_res * head_dim * full_bytes


def _gear_overhead(gear: GearSpec, tokens: int, head_dim: int) -> int:
    n_q = tokens - min(gear.base.residual_window, tokens)
    if n_q == 0:
        return 0
    # fp16 value + int32 index per outlier, fp16 factors for the low-rank term
    sparse = math.ceil(gear.sparsity_frac * n_q * head_dim) * (2 + 4)
    lowrank = gear.rank * (n_q + head_dim) * 2
    return sparse + lowrank


def kv_bytes(policy: CompressionPolicy, tokens: int, fm: FootprintModel) -> int:
    """Bytes of K and V cache held for ``tokens`` tokens of one sequence."""
    if tokens < 0:
        raise ValueError("tokens must be >= 0")
    scale = fm.layers * fm.kv_heads
    if policy.kind == "fp16":
        return 2 * scale * fm.head_dim * fm.bytes_per_scalar_full * tokens
    if policy.kind == "evict":
        kept = min(tokens, policy.eviction.budget)
        return 2 * scale * fm.head_dim * fm.bytes_per_scalar_full * kept

    total = 0
    for spec in (policy.key_spec, policy.value_spec):
        per_head = _matrix_bytes(spec, tokens, fm.head_dim, fm.meta_bytes_per_group, fm.bytes_per_scalar_full)
        if policy.gear is not None:
            per_head += _gear_overhead(GearSpec(spec, policy.gear.sparsity_frac, policy.gear.rank), tokens, fm.head_dim)
        total += per_head
    return scale * total
