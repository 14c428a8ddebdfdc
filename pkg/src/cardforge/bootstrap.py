"""Seeded percentile bootstrap.

Every replicate has its own 64-bit seed derived from
``(master_seed, stream_label, replicate_index)``, so replicates can be
evaluated in any order or partition with identical results.

Seed derivation (frozen; part of the output format):

* ``key = blake2b(f"{master_seed}|{stream_label}", digest_size=8)`` read little-endian
* ``seed_i = splitmix64_mix(key + (i + 1) * 0x9E3779B97F4A7C15 mod 2**64)``

A replicate draws its resample from the SplitMix64 counter stream of its
seed: draw ``k`` of a stratum of size ``m`` selects index
``floor(u_k * m)`` with ``u_k = (mix(seed + (k + 1) * GOLDEN) >> 11) / 2**53``.
"""
from __future__ import annotations

import hashlib
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from . import _kernels
from .errors import AllReplicatesDegenerate, EmptyInput
from .metrics import (
    DEFAULT_THRESHOLD,
    METRIC_NAMES,
    UNDEFINED,
    Missing,
    Value,
    decode_value,
    encode_value,
    hard_predictions,
    suite_arrays,
)

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
DEGENERATE_POLICIES = ("drop_and_count", "propagate_undefined")
MIN_CI_ITERATIONS = 100
WORKERS_ENV = "CARDFORGE_WORKERS"


@dataclass(frozen=True)
class BootstrapConfig:
    iterations: int = 10_000
    ci_level: float = 0.95
    master_seed: int = 0
    degenerate_policy: str = "drop_and_count"
    workers: Optional[int] = None  # execution detail only; never changes results

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError(f"ci_level {self.ci_level} outside (0, 1)")
        if not 0 <= self.master_seed <= MASK64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        if self.degenerate_policy not in DEGENERATE_POLICIES:
            raise ValueError(f"unknown degenerate_policy {self.degenerate_policy!r}")
        if self.workers is not None and self.workers < 1:
            raise ValueError("workers must be positive")

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "ci_level": self.ci_level,
            "master_seed": self.master_seed,
            "degenerate_policy": self.degenerate_policy,
            "method": "percentile (nearest-rank)",
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "BootstrapConfig":
        return cls(
            iterations=int(data["iterations"]),
            ci_level=float(data["ci_level"]),
            master_seed=int(data["master_seed"]),
            degenerate_policy=str(data["degenerate_policy"]),
        )


@dataclass(frozen=True)
class Interval:
    lo: Value
    hi: Value
    replicates_used: int
    replicates_dropped: int

    def __post_init__(self):
        if self.defined and self.lo > self.hi:
            raise ValueError(f"interval lo {self.lo} > hi {self.hi}")

    @property
    def defined(self) -> bool:
        return not isinstance(self.lo, Missing) and not isinstance(self.hi, Missing)

    def to_dict(self) -> dict:
        return {
            "lo": encode_value(self.lo),
            "hi": encode_value(self.hi),
            "replicates_used": self.replicates_used,
            "replicates_dropped": self.replicates_dropped,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Interval":
        return cls(
            decode_value(data["lo"]),
            decode_value(data["hi"]),
            int(data["replicates_used"]),
            int(data["replicates_dropped"]),
        )


def resolve_workers(workers: Optional[int] = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"{WORKERS_ENV}={env!r} is not an integer") from None
    return os.cpu_count() or 1


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def stream_key(master_seed: int, stream_label: str) -> int:
    digest = hashlib.blake2b(f"{master_seed}|{stream_label}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def replicate_seed(master_seed: int, stream_label: str, replicate_index: int) -> int:
    key = stream_key(master_seed, stream_label)
    return _mix64((key + (replicate_index + 1) * GOLDEN) & MASK64)


def replicate_seeds(master_seed: int, stream_label: str, count: int, start: int = 0) -> np.ndarray:
    """Seeds for replicates ``start .. start + count - 1`` as a uint64 array."""
    key = np.uint64(stream_key(master_seed, stream_label))
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    return _mix64_np(key + idx * np.uint64(GOLDEN))


def resample_indices(seed: int, size: int) -> np.ndarray:
    """Resample positions (with replacement) for one replicate of ``size`` records."""
    ctr = np.uint64(seed) + np.arange(1, size + 1, dtype=np.uint64) * np.uint64(GOLDEN)
    u = (_mix64_np(ctr) >> np.uint64(11)).astype(np.float64) * (1.0 / 2**53)
    return np.minimum((u * size).astype(np.int64), size - 1)


def _rank(p: Fraction, m: int) -> int:
    return max(1, math.ceil(p * m))


def percentile_interval(
    values: np.ndarray,
    config: BootstrapConfig,
    strict: bool = True,
    label: str = "",
    warn: bool = True,
) -> Interval:
    """Nearest-rank percentile interval of replicate values (NaN = undefined replicate).

    With ``strict=False`` a fully degenerate replicate set yields an undefined
    interval instead of raising.
    """
    values = np.asarray(values, dtype=float)
    defined = values[~np.isnan(values)]
    used = int(defined.size)
    dropped = int(values.size - used)
    if dropped and config.degenerate_policy == "propagate_undefined":
        return Interval(UNDEFINED, UNDEFINED, used, dropped)
    if used == 0:
        if strict:
            raise AllReplicatesDegenerate(f"{label or 'statistic'}: all {dropped} replicates undefined")
        return Interval(UNDEFINED, UNDEFINED, 0, dropped)
    if warn and dropped > 0.01 * values.size:
        logger.warning("%s: %d of %d replicates undefined and dropped", label or "statistic", dropped, values.size)
    ordered = np.sort(defined)
    level = Fraction(repr(config.ci_level))
    half_alpha = (1 - level) / 2
    lo = ordered[_rank(half_alpha, used) - 1]
    hi = ordered[_rank(1 - half_alpha, used) - 1]
    return Interval(float(lo), float(hi), used, dropped)


class ResampleFrame:
    """Records prepared for the compiled replicate kernel.

    Args:
        y_true: labels in canonical order.
        pred: binary predictions in canonical order.
        scores: scores in canonical order, or None (AUC not accumulated).
        labelings: integer group-code arrays (canonical order), one per factor;
            each contributes ``max(code) + 1`` groups unless ``n_groups``
            gives the counts. Accumulator row 0 is always the whole resample,
            labeling groups follow in order.
        strata: optional stratum code per record; each stratum is resampled
            within itself at its own size. Default: one stratum.
    """

    def __init__(self, y_true, pred, scores=None, labelings=None, n_groups=None, strata=None):
        y_true = np.asarray(y_true, dtype=np.int8)
        n = y_true.size
        self.n = n
        self.use_auc = scores is not None
        if scores is not None:
            order = np.argsort(np.asarray(scores, dtype=float), kind="stable")
            s_sorted = np.asarray(scores, dtype=float)[order]
            # exclusive end of the tie block holding each record
            starts = np.r_[True, s_sorted[1:] != s_sorted[:-1]] if n else np.zeros(0, bool)
            start_idx = np.flatnonzero(starts)
            ends = np.r_[start_idx[1:], n].astype(np.int64)
            block_end = np.repeat(ends, np.diff(np.r_[start_idx, n]))
            in_tie = np.repeat((ends - start_idx) > 1, np.diff(np.r_[start_idx, n]))
        else:
            order = np.arange(n)
            block_end = np.arange(1, n + 1, dtype=np.int64)
            in_tie = np.zeros(n, dtype=bool)
        self.order = order
        position = np.empty(n, dtype=np.int64)
        position[order] = np.arange(n)
        self.y = np.ascontiguousarray(y_true[order])
        self.pred = np.ascontiguousarray(np.asarray(pred, dtype=np.int8)[order])
        self.block_end = np.ascontiguousarray(block_end, dtype=np.int64)
        self.in_tie = np.ascontiguousarray(in_tie, dtype=np.int8)

        labelings = list(labelings or [])
        if n_groups is None:
            n_groups = [int(np.max(c)) + 1 if n else 1 for c in labelings]
        self.group_offsets = np.r_[1, 1 + np.cumsum(n_groups, dtype=np.int64)].astype(np.int64)
        self.n_groups_total = int(self.group_offsets[-1])
        gid = np.empty((n, len(labelings)), dtype=np.int32)
        for l, codes in enumerate(labelings):
            gid[:, l] = np.asarray(codes, dtype=np.int64)[order] + self.group_offsets[l]
        self.gid = np.ascontiguousarray(gid)
        self.thr_pos = int(np.count_nonzero(self.pred == 0))
        if self.use_auc and np.any(self.pred[: self.thr_pos] != 0):
            raise ValueError("predictions must be monotone in score when scores are given")
        # 0 tp, 1 fp, 2 tn, 3 fn
        self.cell = np.where(self.y == 1, np.where(self.pred == 1, 0, 3), np.where(self.pred == 1, 1, 2)).astype(np.int8)

        if strata is None:
            members = position
            sizes = np.array([n], dtype=np.int64)
        else:
            strata = np.asarray(strata, dtype=np.int64)
            by_stratum = np.argsort(strata, kind="stable")
            members = position[by_stratum]
            sizes = np.bincount(strata).astype(np.int64)
        self.members = np.ascontiguousarray(members, dtype=np.int64)
        self.sizes = sizes
        self.offsets = np.r_[0, np.cumsum(sizes)[:-1]].astype(np.int64)
        self.identity = strata is None and bool(np.array_equal(self.members, np.arange(n)))

    def run(self, seeds: np.ndarray, workers: Optional[int] = None) -> np.ndarray:
        """Accumulator array of shape (len(seeds), n_groups_total, 5)."""
        seeds = np.ascontiguousarray(seeds, dtype=np.uint64)
        reps = seeds.size
        out = np.zeros((reps, self.n_groups_total, 5), dtype=np.int64)
        args = (
            self.members, self.offsets, self.sizes, self.identity, self.y, self.cell,
            self.gid, self.block_end, self.in_tie, self.use_auc, self.thr_pos,
        )
        # compile (or load from cache) on this thread before fanning out
        _kernels.run_chunk(seeds, 0, 0, *args, out)
        n_workers = min(resolve_workers(workers), max(1, reps))
        if n_workers == 1:
            _kernels.run_chunk(seeds, 0, reps, *args, out)
            return out
        chunk = max(1, -(-reps // (n_workers * 4)))
        bounds = [(s, min(s + chunk, reps)) for s in range(0, reps, chunk)]
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(lambda b: _kernels.run_chunk(seeds, b[0], b[1], *args, out), bounds))
        return out

    def counts(self, weights: np.ndarray) -> np.ndarray:
        """Accumulators for explicit per-record weights (canonical order)."""
        w = np.ascontiguousarray(np.asarray(weights, dtype=np.int32)[self.order])
        acc = np.zeros((self.n_groups_total, 5), dtype=np.int64)
        g = self.n_groups_total
        _kernels.accumulate(
            w, self.y, self.cell, self.gid, self.block_end, self.in_tie, self.use_auc,
            self.thr_pos, acc, np.zeros((g, 5), np.int64), np.zeros(self.n, np.int64),
        )
        return acc


def replicate_metrics(acc: np.ndarray, use_auc: bool) -> dict:
    """Metric arrays (NaN = undefined) from accumulators ``(..., 5)``."""
    return suite_arrays(
        acc[..., 0], acc[..., 1], acc[..., 2], acc[..., 3], acc[..., 4] if use_auc else None
    )


def canonical_order(records: Sequence) -> list:
    """Input-order-free resampling order: ascending score, then id."""
    return sorted(records, key=lambda r: (r.y_score if r.y_score is not None else 0.0, r.id))


def bootstrap_ci(
    records: Sequence,
    statistic: Union[str, Callable],
    config: BootstrapConfig = BootstrapConfig(),
    threshold: float = DEFAULT_THRESHOLD,
    stream_label: Optional[str] = None,
) -> Interval:
    """Percentile bootstrap interval of ``statistic`` over ``records``.

    Args:
        records: prediction records; resampled iid with replacement at their own size.
        statistic: a metric name from ``METRIC_NAMES`` (compiled path) or a
            callable mapping a list of records to a float or ``Missing``.
        config: iterations, level, seed and degenerate-replicate policy.
        threshold: decision threshold for named thresholded metrics.
        stream_label: seed stream; defaults to ``"records|<statistic>"``.
    """
    if not records:
        raise EmptyInput("bootstrap_ci needs at least one record")
    if config.iterations < MIN_CI_ITERATIONS:
        raise ValueError(f"at least {MIN_CI_ITERATIONS} iterations are needed for an interval")
    recs = canonical_order(records)
    name = statistic if isinstance(statistic, str) else getattr(statistic, "__name__", "statistic")
    label = stream_label or f"records|{name}"
    seeds = replicate_seeds(config.master_seed, label, config.iterations)

    if isinstance(statistic, str):
        if statistic not in METRIC_NAMES:
            raise KeyError(f"unknown metric {statistic!r}")
        pred = hard_predictions(recs, threshold)
        has_scores = recs[0].y_score is not None
        frame = ResampleFrame(
            [r.y_true for r in recs], pred, [r.y_score for r in recs] if has_scores else None
        )
        acc = frame.run(seeds, config.workers)[:, 0, :]
        arrays = replicate_metrics(acc, frame.use_auc)
        values = arrays.get(statistic, np.full(config.iterations, np.nan))
    else:
        values = np.empty(config.iterations)
        for r, seed in enumerate(seeds):
            idx = resample_indices(int(seed), len(recs))
            v = statistic([recs[i] for i in idx])
            values[r] = np.nan if isinstance(v, Missing) else float(v)
    return percentile_interval(values, config, label=label)
