"""Profiled per-iteration cost table with log-space bilinear interpolation.

Profiles are CSV files with the header::

    policy,phase,batch,kv_len,attn_time_us,other_time_us

Each ``(policy, phase)`` pair must form a full rectangular grid over
``batch x kv_len``.  Times are stored internally in seconds.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

PREFILL = "prefill"
DECODE = "decode"
PHASES = (PREFILL, DECODE)
HEADER = ("policy", "phase", "batch", "kv_len", "attn_time_us", "other_time_us")


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class ProfilePoint:
    policy: str
    phase: str
    batch: int
    kv_len: int
    attn_time: float
    other_time: float


class TimePrediction(NamedTuple):
    attn_time: float
    other_time: float
    clamped: bool

    @property
    def total(self) -> float:
        return self.attn_time + self.other_time


@dataclass(frozen=True)
class _Grid:
    batches: np.ndarray
    kv_lens: np.ndarray
    attn: np.ndarray  # (len(batches), len(kv_lens))
    other: np.ndarray


def _segment(axis: np.ndarray, x: float) -> tuple[int, float, bool]:
    """Locate ``x`` on a strictly increasing grid axis.

    Returns the lower cell index, the interpolation weight in log2 space and
    whether ``x`` had to be clamped to the axis range.
    """
    if len(axis) == 1:
        return 0, 0.0, x != axis[0]
    if x <= axis[0]:
        return 0, 0.0, x < axis[0]
    if x >= axis[-1]:
        return len(axis) - 2, 1.0, x > axis[-1]
    i = int(np.searchsorted(axis, x, side="right")) - 1
    lo, hi = axis[i], axis[i + 1]
    if x == lo:
        return i, 0.0, False
    return i, (math.log2(x) - math.log2(lo)) / (math.log2(hi) - math.log2(lo)), False


def _blend(table: np.ndarray, i: int, ti: float, j: int, tj: float) -> float:
    if table.shape[0] == 1:
        row = table[0]
        return float(row[j] if table.shape[1] == 1 else (1 - tj) * row[j] + tj * row[j + 1])
    if table.shape[1] == 1:
        return float((1 - ti) * table[i, 0] + ti * table[i + 1, 0])
    a = (1 - tj) * table[i, j] + tj * table[i, j + 1]
    b = (1 - tj) * table[i + 1, j] + tj * table[i + 1, j + 1]
    return float((1 - ti) * a + ti * b)


class CostProfile:
    """Immutable lookup of per-iteration attention and non-attention time."""

    def __init__(self, points):
        points = list(points)
        if not points:
            raise ProfileError("empty profile")
        self.points: tuple[ProfilePoint, ...] = tuple(points)
        self._grids: dict[tuple[str, str], _Grid] = {}

        grouped: dict[tuple[str, str], dict[tuple[int, int], ProfilePoint]] = {}
        for p in points:
            cell = grouped.setdefault((p.policy, p.phase), {})
            key = (p.batch, p.kv_len)
            if key in cell:
                raise ProfileError(f"duplicate point {p.policy},{p.phase},{p.batch},{p.kv_len}")
            cell[key] = p

        for key, cells in grouped.items():
            batches = np.array(sorted({b for b, _ in cells}), dtype=np.float64)
            kv_lens = np.array(sorted({k for _, k in cells}), dtype=np.float64)
            missing = [(int(b), int(k)) for b in batches for k in kv_lens if (b, k) not in cells]
            if missing:
                shown = ", ".join(f"batch={b} kv_len={k}" for b, k in missing[:5])
                raise ProfileError(f"{key[0]}/{key[1]}: grid is missing {len(missing)} cell(s): {shown}")
            attn = np.array([[cells[(b, k)].attn_time for k in kv_lens] for b in batches])
            other = np.array([[cells[(b, k)].other_time for k in kv_lens] for b in batches])
            self._grids[key] = _Grid(batches, kv_lens, attn, other)

    @property
    def policies(self) -> list[str]:
        return sorted({policy for policy, _ in self._grids})

    def covers(self, policy: str) -> bool:
        return all((policy, phase) in self._grids for phase in PHASES)

    def grid(self, policy: str, phase: str) -> _Grid:
        try:
            return self._grids[(policy, phase)]
        except KeyError:
            raise KeyError(f"profile has no rows for policy={policy!r} phase={phase!r}") from None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            write_profile(self, f)


def write_profile(profile: CostProfile, f) -> None:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(HEADER)
    for p in profile.points:
        w.writerow([p.policy, p.phase, p.batch, p.kv_len, repr(p.attn_time * 1e6), repr(p.other_time * 1e6)])


def _parse_rows(reader) -> list[ProfilePoint]:
    header = next(reader, None)
    if header is None:
        raise ProfileError("empty profile")
    if tuple(h.strip() for h in header) != HEADER:
        raise ProfileError(f"row 1: expected header {','.join(HEADER)}")

    points, seen = [], {}
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(HEADER):
            raise ProfileError(f"row {row_no}: expected {len(HEADER)} fields, got {len(row)}")
        policy, phase = row[0].strip(), row[1].strip()
        try:
            batch, kv_len = int(row[2]), int(row[3])
            attn_us, other_us = float(row[4]), float(row[5])
        except ValueError as e:
            raise ProfileError(f"row {row_no}: {e}") from None
        if phase not in PHASES:
            raise ProfileError(f"row {row_no}: unknown phase {phase!r}")
        if batch < 1 or kv_len < 1:
            raise ProfileError(f"row {row_no}: batch and kv_len must be >= 1")
        if not (math.isfinite(attn_us) and math.isfinite(other_us)) or attn_us < 0 or other_us < 0:
            raise ProfileError(f"row {row_no}: times must be finite and non-negative")
        key = (policy, phase, batch, kv_len)
        if key in seen:
            raise ProfileError(f"row {row_no}: duplicate of row {seen[key]} ({policy},{phase},{batch},{kv_len})")
        seen[key] = row_no
        points.append(ProfilePoint(policy, phase, batch, kv_len, attn_us * 1e-6, other_us * 1e-6))
    if not points:
        raise ProfileError("empty profile")
    return points


def load_profile(source) -> CostProfile:
    """Load a profile from a path, an open text file or a CSV string."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        with open(source, newline="", encoding="utf-8") as f:
            return CostProfile(_parse_rows(csv.reader(f)))
    if isinstance(source, str):
        source = io.StringIO(source)
    return CostProfile(_parse_rows(csv.reader(source)))


def predict_time(p: CostProfile, policy: str, phase: str, batch: float, kv_len: float) -> TimePrediction:
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}")
    if batch <= 0 or kv_len <= 0:
        raise ValueError("batch and kv_len must be positive")
    g = p.grid(policy, phase)
    i, ti, cb = _segment(g.batches, float(batch))
    j, tj, ck = _segment(g.kv_lens, float(kv_len))
    return TimePrediction(_blend(g.attn, i, ti, j, tj), _blend(g.other, i, ti, j, tj), bool(cb or ck))


def predict_throughput(p: CostProfile, policy: str, phase: str, batch: float, kv_len: float) -> float:
    """Tokens per second: ``batch`` tokens per decode step, ``batch * kv_len`` per prefill."""
    total = predict_time(p, policy, phase, batch, kv_len).total
    if total <= 0:
        raise ValueError(f"zero iteration time for {policy}/{phase} at batch={batch} kv_len={kv_len}")
    tokens = batch if phase == DECODE else batch * kv_len
    return tokens / total


def accuracy(pred: float, gt: float) -> float:
    """Relative accuracy in percent, ``(1 - |pred - gt| / gt) * 100`` floored at 0."""
    if gt <= 0:
        raise ValueError("ground truth must be positive")
    return max(0.0, (1.0 - abs(pred - gt) / gt) * 100.0)


def accuracy_report(p: CostProfile, samples) -> dict[str, float]:
    """Mean accuracy per policy over ``(policy, phase, batch, kv_len, measured_s)`` samples."""
    scores: dict[str, list[float]] = {}
    for policy, phase, batch, kv_len, measured in samples:
        pred = predict_time(p, policy, phase, batch, kv_len).total
        scores.setdefault(policy, []).append(accuracy(pred, measured))
    return {policy: float(np.mean(v)) for policy, v in sorted(scores.items())}
