"""Compression policy presets and the per-model KV footprint parameters."""

from __future__ import annotations

from dataclasses import dataclass

from kvsim.evict import H2O as H2O_KIND
from kvsim.evict import STREAMING, EvictionPolicy
from kvsim.quantkv import PER_CHANNEL, PER_TOKEN, GearSpec, QuantSpec


@dataclass(frozen=True)
class FootprintModel:
    # LLaMA-7B defaults
    layers: int = 32
    kv_heads: int = 32
    head_dim: int = 128
    bytes_per_scalar_full: int = 2
    meta_bytes_per_group: int = 4

    def __post_init__(self):
        if min(self.layers, self.kv_heads, self.head_dim, self.bytes_per_scalar_full, self.meta_bytes_per_group) <= 0:
            raise ValueError("footprint parameters must be positive")

    @property
    def fp16_bytes_per_token(self) -> int:
        return 2 * self.layers * self.kv_heads * self.head_dim * self.bytes_per_scalar_full


@dataclass(frozen=True)
class CompressionPolicy:
    """One of ``fp16``, ``quant`` (optionally GEAR-corrected) or ``evict``."""

    name: str
    kind: str
    key_spec: QuantSpec | None = None
    value_spec: QuantSpec | None = None
    gear: GearSpec | None = None
    eviction: EvictionPolicy | None = None

    def __post_init__(self):
        if self.kind == "quant" and (self.key_spec is None or self.value_spec is None):
            raise ValueError(f"{self.name}: quantized policy needs key and value specs")
        if self.kind == "evict" and self.eviction is None:
            raise ValueError(f"{self.name}: eviction policy missing")
        if self.kind not in ("fp16", "quant", "evict"):
            raise ValueError(f"unknown policy kind {self.kind!r}")


FP16 = CompressionPolicy("fp16", "fp16")

# KIVI: per-channel keys, per-token values, G=32, R=128
KIVI = CompressionPolicy(
    "kivi",
    "quant",
    key_spec=QuantSpec(bits=4, axis=PER_CHANNEL, group_size=32, residual_window=128),
    value_spec=QuantSpec(bits=4, axis=PER_TOKEN, group_size=32, residual_window=128),
)

_GEAR_BASE = QuantSpec(bits=4, axis=PER_TOKEN, group_size=32, residual_window=0)
GEAR = CompressionPolicy(
    "gear",
    "quant",
    key_spec=QuantSpec(bits=4, axis=PER_CHANNEL, group_size=32, residual_window=0),
    value_spec=_GEAR_BASE,
    gear=GearSpec(_GEAR_BASE, sparsity_frac=0.02, rank=2),
)

STREAMING_LLM = CompressionPolicy("stream", "evict", eviction=EvictionPolicy(STREAMING, 64, 448))
H2O = CompressionPolicy("h2o", "evict", eviction=EvictionPolicy(H2O_KIND, 64, 448))

PRESETS: dict[str, CompressionPolicy] = {p.name: p for p in (FP16, KIVI, GEAR, H2O, STREAMING_LLM)}
COMPRESSED = ("kivi", "gear", "h2o", "stream")


def get_policy(name: str) -> CompressionPolicy:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown compression policy {name!r}; expected one of {sorted(PRESETS)}") from None
