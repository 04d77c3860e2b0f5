"""Simulator for LLM serving with compressed KV caches.

Quantization and eviction kernels, a grid-interpolated cost model, response
length predictors, an iteration-level multi-replica simulator, a router and
offline evaluation of compression-induced failures.
"""

from kvsim.costmodel import CostProfile, load_profile, predict_throughput, predict_time
from kvsim.evaluator import benign_filter, bucketize, collect_negatives, length_diff, sweep_and_breakdown
from kvsim.evict import evict_h2o, evict_streaming, toy_attention
from kvsim.lengthmodel import BucketLengthPredictor, OracleLengthPredictor, predict_len, train_bucket_heuristic
from kvsim.policies import COMPRESSED, PRESETS, CompressionPolicy, FootprintModel, get_policy
from kvsim.quantkv import GearSpec, QuantSpec, dequantize, gear_correct, kv_bytes, quantize
from kvsim.router import RoutingPolicy, estimate_e2e, route
from kvsim.sim import Replica, Request, gen_poisson_arrivals, metrics, simulate

__all__ = [
    "COMPRESSED",
    "PRESETS",
    "BucketLengthPredictor",
    "CompressionPolicy",
    "CostProfile",
    "FootprintModel",
    "GearSpec",
    "OracleLengthPredictor",
    "QuantSpec",
    "Replica",
    "Request",
    "RoutingPolicy",
    "benign_filter",
    "bucketize",
    "collect_negatives",
    "dequantize",
    "estimate_e2e",
    "evict_h2o",
    "evict_streaming",
    "gear_correct",
    "gen_poisson_arrivals",
    "get_policy",
    "kv_bytes",
    "length_diff",
    "load_profile",
    "metrics",
    "predict_len",
    "predict_throughput",
    "predict_time",
    "quantize",
    "route",
    "simulate",
    "sweep_and_breakdown",
    "toy_attention",
    "train_bucket_heuristic",
]
