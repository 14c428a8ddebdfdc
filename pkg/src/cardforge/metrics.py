"""Confusion matrices and the binary metric suite.

Metrics that cannot be computed (zero denominator, one-class slice) are
reported as :data:`UNDEFINED`; AUC without scores is :data:`UNAVAILABLE`.
Neither is ever encoded as 0 or NaN on the public surface.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import MixedPredictionKinds

METRIC_NAMES = ("accuracy", "sensitivity", "specificity", "ppv", "npv", "f1", "auc")
DEFAULT_THRESHOLD = 0.5


class Missing(enum.Enum):
    UNDEFINED = "undefined"
    UNAVAILABLE = "unavailable"

    def __repr__(self):
        return self.name


UNDEFINED = Missing.UNDEFINED
UNAVAILABLE = Missing.UNAVAILABLE

Value = Union[float, Missing]


def is_defined(value) -> bool:
    return not isinstance(value, Missing)


def encode_value(value: Value):
    """JSON-friendly form: a number, or the sentinel's string name."""
    return value.value if isinstance(value, Missing) else value


def decode_value(raw) -> Value:
    if isinstance(raw, str):
        return Missing(raw)
    return float(raw)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError(f"negative count in {self}")

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def n_pos(self) -> int:
        return self.tp + self.fn

    @property
    def n_neg(self) -> int:
        return self.tn + self.fp

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )


@dataclass(frozen=True)
class MetricSet:
    accuracy: Value
    sensitivity: Value
    specificity: Value
    ppv: Value
    npv: Value
    f1: Value
    auc: Value
    n: int
    n_pos: int
    n_neg: int

    def get(self, name: str) -> Value:
        if name not in METRIC_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def to_dict(self) -> dict:
        out = {name: encode_value(getattr(self, name)) for name in METRIC_NAMES}
        out.update(n=self.n, n_pos=self.n_pos, n_neg=self.n_neg)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "MetricSet":
        kwargs = {name: decode_value(data[name]) for name in METRIC_NAMES}
        return cls(**kwargs, n=int(data["n"]), n_pos=int(data["n_pos"]), n_neg=int(data["n_neg"]))


def _ratio(num: int, den: int) -> Value:
    if den == 0:
        return UNDEFINED
    return num / den


def hard_predictions(records: Sequence, threshold: float = DEFAULT_THRESHOLD) -> list:
    """Binary prediction per record: score >= threshold, else the hard label.

    Raises:
        MixedPredictionKinds: some records carry only scores and others only labels.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    with_score = sum(r.y_score is not None for r in records)
    if 0 < with_score < len(records):
        raise MixedPredictionKinds(
            f"{with_score} of {len(records)} records carry scores; the rest only hard labels"
        )
    if with_score:
        return [1 if r.y_score >= threshold else 0 for r in records]
    return [int(r.y_pred) for r in records]


def confusion_matrix(records: Sequence, threshold: float = DEFAULT_THRESHOLD) -> ConfusionMatrix:
    preds = hard_predictions(records, threshold)
    tp = fp = tn = fn = 0
    for rec, p in zip(records, preds):
        if rec.y_true == 1:
            if p:
                tp += 1
            else:
                fn += 1
        elif p:
            fp += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fp, tn, fn)


def roc_auc(scores: Iterable[float], labels: Iterable[int]) -> Value:
    """Rank-based (Mann-Whitney) AUC with ties counted as one half."""
    s = np.asarray(list(scores) if not isinstance(scores, np.ndarray) else scores, dtype=float)
    y = np.asarray(list(labels) if not isinstance(labels, np.ndarray) else labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return UNDEFINED
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    # average 1-based rank of each tie group
    ends = np.cumsum(counts)
    avg_rank = ends - (counts - 1) / 2.0
    rank_sum = avg_rank[inverse.ravel()][pos].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def metric_suite(
    cm: ConfusionMatrix,
    scores_and_labels: Optional[tuple] = None,
) -> MetricSet:
    """Full metric suite from a confusion matrix.

    Args:
        cm: confusion counts of the slice.
        scores_and_labels: optional ``(scores, labels)`` for the same records;
            AUC is ``UNAVAILABLE`` without it.
    """
    tp, fp, tn, fn = cm.tp, cm.fp, cm.tn, cm.fn
    # 2tp/(2tp+fp+fn) equals the harmonic mean of ppv and sensitivity
    # whenever both are defined and not both zero
    if tp + fp == 0 or tp + fn == 0 or tp == 0:
        f1 = UNDEFINED
    else:
        f1 = 2 * tp / (2 * tp + fp + fn)
    if scores_and_labels is None:
        auc = UNAVAILABLE
    else:
        scores, labels = scores_and_labels
        if len(scores) != len(labels):
            raise ValueError("scores and labels differ in length")
        auc = roc_auc(scores, labels)
    return MetricSet(
        accuracy=_ratio(tp + tn, cm.n),
        sensitivity=_ratio(tp, tp + fn),
        specificity=_ratio(tn, tn + fp),
        ppv=_ratio(tp, tp + fp),
        npv=_ratio(tn, tn + fn),
        f1=f1,
        auc=auc,
        n=cm.n,
        n_pos=cm.n_pos,
        n_neg=cm.n_neg,
    )


def evaluate(records: Sequence, threshold: float = DEFAULT_THRESHOLD) -> MetricSet:
    """Confusion matrix plus metric suite for a list of records."""
    cm = confusion_matrix(records, threshold)
    if records and records[0].y_score is not None:
        pair = ([r.y_score for r in records], [r.y_true for r in records])
    else:
        pair = None
    return metric_suite(cm, pair)


def suite_arrays(tp, fp, tn, fn, auc_num2=None) -> dict:
    """Vectorized metric suite over arrays of (weighted) counts.

    Undefined entries are NaN here; callers convert before exposing them.
    ``auc_num2`` is twice the Mann-Whitney numerator (ties counted once).
    """
    tp, fp, tn, fn = (np.asarray(a, dtype=np.int64) for a in (tp, fp, tn, fn))

    def ratio(num, den):
        out = np.full(den.shape, np.nan)
        ok = den != 0
        out[ok] = num[ok] / den[ok]
        return out

    f1 = ratio(2 * tp, 2 * tp + fp + fn)
    f1[(tp + fp == 0) | (tp + fn == 0) | (tp == 0)] = np.nan
    out = {
        "accuracy": ratio(tp + tn, tp + fp + tn + fn),
        "sensitivity": ratio(tp, tp + fn),
        "specificity": ratio(tn, tn + fp),
        "ppv": ratio(tp, tp + fp),
        "npv": ratio(tn, tn + fn),
        "f1": f1,
    }
    if auc_num2 is not None:
        out["auc"] = ratio(np.asarray(auc_num2, dtype=np.int64), 2 * (tp + fn) * (tn + fp))
    return out
