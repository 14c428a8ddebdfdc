"""Subgroup audit: per-factor stratification, ΔM gaps, bootstrap intervals, flags.

ΔM for a subgroup is ``M_subgroup - M_overall`` against the whole cohort
(subgroup included); positive values favour the subgroup. Intervals come
from one set of full-cohort replicates in which every subgroup statistic and
the overall statistic are recomputed together, so the ΔM interval reflects
the correlation between the two terms.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .bootstrap import (
    BootstrapConfig,
    Interval,
    ResampleFrame,
    bootstrap_ci,
    canonical_order,
    percentile_interval,
    replicate_metrics,
    replicate_seeds,
)
from .cohort import (
    UNKNOWN,
    CohortTable,
    FactorDescriptor,
    Provenance,
    apply_all_bins,
    factor_values,
)
from .errors import EmptyCohort, ManifestMismatch, MissingCI
from .metrics import (
    DEFAULT_THRESHOLD,
    METRIC_NAMES,
    UNAVAILABLE,
    UNDEFINED,
    ConfusionMatrix,
    MetricSet,
    Value,
    decode_value,
    encode_value,
    hard_predictions,
    is_defined,
    metric_suite,
)

logger = logging.getLogger(__name__)

JOINT_STREAM = "cohort=*|suite"


@dataclass(frozen=True)
class FlagPolicy:
    """``ci_excludes_zero`` or ``abs_gap_over`` with threshold ``tau``."""

    kind: str = "ci_excludes_zero"
    tau: Optional[float] = None

    def __post_init__(self):
        if self.kind == "ci_excludes_zero":
            if self.tau is not None:
                raise ValueError("ci_excludes_zero takes no tau")
        elif self.kind == "abs_gap_over":
            if self.tau is None or not 0.0 <= self.tau <= 1.0:
                raise ValueError("abs_gap_over needs tau in [0, 1]")
        else:
            raise ValueError(f"unknown flag policy {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "FlagPolicy":
        if ":" in text:
            kind, tau = text.split(":", 1)
            return cls(kind, float(tau))
        return cls(text)

    def __str__(self):
        return self.kind if self.tau is None else f"{self.kind}:{self.tau!r}"


@dataclass(frozen=True)
class AuditConfig:
    threshold: float = DEFAULT_THRESHOLD
    min_subgroup_n: int = 30
    metrics: Tuple[str, ...] = METRIC_NAMES
    bootstrap: BootstrapConfig = BootstrapConfig()
    flag_policy: FlagPolicy = FlagPolicy()
    flag_unknown: bool = False

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold outside [0, 1]")
        if self.min_subgroup_n < 1:
            raise ValueError("min_subgroup_n must be >= 1")
        if not self.metrics:
            raise ValueError("metrics must be non-empty")
        unknown = [m for m in self.metrics if m not in METRIC_NAMES]
        if unknown:
            raise ValueError(f"unknown metrics {unknown}")
        # canonical order so config echoes are stable
        object.__setattr__(self, "metrics", tuple(m for m in METRIC_NAMES if m in self.metrics))

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "min_subgroup_n": self.min_subgroup_n,
            "metrics": list(self.metrics),
            "bootstrap": self.bootstrap.to_dict(),
            "flag_policy": str(self.flag_policy),
            "flag_unknown": self.flag_unknown,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "AuditConfig":
        return cls(
            threshold=float(data["threshold"]),
            min_subgroup_n=int(data["min_subgroup_n"]),
            metrics=tuple(data["metrics"]),
            bootstrap=BootstrapConfig.from_dict(data["bootstrap"]),
            flag_policy=FlagPolicy.parse(data["flag_policy"]),
            flag_unknown=bool(data.get("flag_unknown", False)),
        )


def _cm_dict(cm: ConfusionMatrix) -> dict:
    return {"tp": cm.tp, "fp": cm.fp, "tn": cm.tn, "fn": cm.fn}


def _intervals_to_dict(ci):
    return None if ci is None else {m: iv.to_dict() for m, iv in ci.items()}


def _intervals_from_dict(data):
    return None if data is None else {m: Interval.from_dict(v) for m, v in data.items()}


@dataclass(frozen=True)
class SubgroupReport:
    factor: FactorDescriptor
    value: str
    n: int
    metrics: MetricSet
    delta: Dict[str, Value]
    cm: ConfusionMatrix = ConfusionMatrix()
    subgroup_ci: Optional[Dict[str, Interval]] = None
    delta_ci: Optional[Dict[str, Interval]] = None
    flagged: Dict[str, bool] = field(default_factory=dict)
    suppressed: bool = False

    @property
    def any_flagged(self) -> bool:
        return any(self.flagged.values())

    def to_dict(self) -> dict:
        return {
            "factor": self.factor.name,
            "value": self.value,
            "n": self.n,
            "suppressed": self.suppressed,
            "confusion": _cm_dict(self.cm),
            "metrics": self.metrics.to_dict(),
            "delta": {m: encode_value(v) for m, v in self.delta.items()},
            "subgroup_ci": _intervals_to_dict(self.subgroup_ci),
            "delta_ci": _intervals_to_dict(self.delta_ci),
            "flagged": dict(self.flagged),
        }

    @classmethod
    def from_dict(cls, data: Mapping, factors: Mapping[str, FactorDescriptor]) -> "SubgroupReport":
        return cls(
            factor=factors[data["factor"]],
            value=data["value"],
            n=int(data["n"]),
            metrics=MetricSet.from_dict(data["metrics"]),
            delta={m: decode_value(v) for m, v in data["delta"].items()},
            cm=ConfusionMatrix(**data["confusion"]),
            subgroup_ci=_intervals_from_dict(data.get("subgroup_ci")),
            delta_ci=_intervals_from_dict(data.get("delta_ci")),
            flagged={m: bool(v) for m, v in data.get("flagged", {}).items()},
            suppressed=bool(data["suppressed"]),
        )


@dataclass(frozen=True)
class PathologySlice:
    name: str
    n: int
    sensitivity: Value
    ci: Optional[Interval] = None
    excluded: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "sensitivity": encode_value(self.sensitivity),
            "ci": None if self.ci is None else self.ci.to_dict(),
            "excluded": self.excluded,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PathologySlice":
        ci = data.get("ci")
        return cls(
            data["name"],
            int(data["n"]),
            decode_value(data["sensitivity"]),
            None if ci is None else Interval.from_dict(ci),
            int(data.get("excluded", 0)),
        )


@dataclass(frozen=True)
class AuditResult:
    overall: MetricSet
    overall_ci: Dict[str, Interval]
    reports: Tuple[SubgroupReport, ...]
    factors: Tuple[FactorDescriptor, ...]
    config: AuditConfig
    provenance: Provenance = Provenance()
    pathology_slices: Tuple[PathologySlice, ...] = ()
    overall_cm: ConfusionMatrix = ConfusionMatrix()

    def reports_for(self, factor_name: str) -> List[SubgroupReport]:
        return [r for r in self.reports if r.factor.name == factor_name]

    def flagged(self) -> List[Tuple[SubgroupReport, str]]:
        return [(r, m) for r in self.reports for m in r.flagged if r.flagged[m]]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "provenance": self.provenance.to_dict(),
            "overall": self.overall.to_dict(),
            "overall_confusion": _cm_dict(self.overall_cm),
            "overall_ci": _intervals_to_dict(self.overall_ci),
            "factors": [f.to_dict() for f in self.factors],
            "reports": [r.to_dict() for r in self.reports],
            "pathology_slices": [p.to_dict() for p in self.pathology_slices],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "AuditResult":
        factors = tuple(FactorDescriptor.from_dict(f) for f in data["factors"])
        by_name = {f.name: f for f in factors}
        return cls(
            overall=MetricSet.from_dict(data["overall"]),
            overall_ci=_intervals_from_dict(data["overall_ci"]) or {},
            reports=tuple(SubgroupReport.from_dict(r, by_name) for r in data["reports"]),
            factors=factors,
            config=AuditConfig.from_dict(data["config"]),
            provenance=Provenance.from_dict(data.get("provenance")),
            pathology_slices=tuple(PathologySlice.from_dict(p) for p in data.get("pathology_slices", [])),
            overall_cm=ConfusionMatrix(**data["overall_confusion"]),
        )


def stratify(cohort: CohortTable, factor: FactorDescriptor) -> Dict[str, list]:
    """Partition records by the factor's value; ``unknown`` is its own part."""
    cohort.factor(factor.name)
    parts: Dict[str, list] = {v: [] for v in factor_values(cohort, factor)}
    for rec in cohort.records:
        parts[rec.factors.get(factor.name, UNKNOWN)].append(rec)
    return parts


def _delta(sub: Value, overall: Value) -> Value:
    if is_defined(sub) and is_defined(overall):
        return sub - overall
    return UNDEFINED


def _cm_from_counts(counts) -> ConfusionMatrix:
    return ConfusionMatrix(*(int(c) for c in counts))


class _Columns:
    """Cohort in canonical resampling order as numpy columns."""

    def __init__(self, cohort: CohortTable, threshold: float):
        self.records = canonical_order(cohort.records)
        self.y = np.fromiter((r.y_true for r in self.records), dtype=np.int8, count=len(self.records))
        self.pred = np.asarray(hard_predictions(self.records, threshold), dtype=np.int8)
        self.has_scores = self.records[0].y_score is not None
        self.scores = (
            np.fromiter((r.y_score for r in self.records), dtype=float, count=len(self.records))
            if self.has_scores
            else None
        )
        # 0 tp, 1 fp, 2 tn, 3 fn
        self.cell = np.where(self.y == 1, np.where(self.pred == 1, 0, 3), np.where(self.pred == 1, 1, 2))

    def evaluate(self, mask=None) -> Tuple[ConfusionMatrix, MetricSet]:
        cell = self.cell if mask is None else self.cell[mask]
        cm = _cm_from_counts(np.bincount(cell, minlength=4))
        if not self.has_scores:
            return cm, metric_suite(cm)
        if mask is None:
            return cm, metric_suite(cm, (self.scores, self.y))
        return cm, metric_suite(cm, (self.scores[mask], self.y[mask]))


def run_audit(cohort: CohortTable, config: AuditConfig = AuditConfig()) -> AuditResult:
    """Overall and per-subgroup metrics, ΔM, bootstrap intervals and flags.

    Numeric factors not yet binned are binned first (non-strict).
    """
    if not cohort.records:
        raise EmptyCohort("cohort has no records")
    cohort = apply_all_bins(cohort)
    cols = _Columns(cohort, config.threshold)
    metrics = [m for m in config.metrics if m != "auc" or cols.has_scores]

    overall_cm, overall = cols.evaluate()
    factors = list(cohort.manifest)
    labelings, group_values = [], []
    cells = [r.factors for r in cols.records]
    for f in factors:
        values = factor_values(cohort, f)
        index = {v: i for i, v in enumerate(values)}
        codes = np.array([index[c.get(f.name, UNKNOWN)] for c in cells], dtype=np.int64)
        labelings.append(codes)
        group_values.append(values)

    frame = ResampleFrame(
        cols.y, cols.pred, cols.scores, labelings, n_groups=[len(v) for v in group_values]
    )
    bcfg = config.bootstrap
    seeds = replicate_seeds(bcfg.master_seed, JOINT_STREAM, bcfg.iterations)
    acc = frame.run(seeds, bcfg.workers)
    reps = replicate_metrics(acc, frame.use_auc)

    dropped = 0

    def interval(values, label):
        nonlocal dropped
        iv = percentile_interval(values, bcfg, strict=False, label=label, warn=False)
        dropped += iv.replicates_dropped > 0.01 * bcfg.iterations
        return iv

    overall_ci = {m: interval(reps[m][:, 0], f"overall {m}") for m in metrics}

    reports = []
    for f, codes, values, offset in zip(factors, labelings, group_values, frame.group_offsets):
        for j, value in enumerate(values):
            mask = codes == j
            cm, sub = cols.evaluate(mask)
            delta = {m: _delta(sub.get(m), overall.get(m)) for m in metrics}
            n = int(mask.sum())
            if n < config.min_subgroup_n:
                reports.append(SubgroupReport(f, value, n, sub, delta, cm, suppressed=True,
                                              flagged={m: False for m in metrics}))
                continue
            row = offset + j
            sub_ci = {m: interval(reps[m][:, row], f"{f.name}={value} {m}") for m in metrics}
            delta_ci = {
                m: interval(reps[m][:, row] - reps[m][:, 0], f"{f.name}={value} Δ{m}") for m in metrics
            }
            reports.append(SubgroupReport(f, value, n, sub, delta, cm, sub_ci, delta_ci))
    if dropped:
        logger.warning("%d intervals dropped more than 1%% of replicates as undefined", dropped)

    reports = flag_disparities(reports, config.flag_policy, config.flag_unknown)
    slices = pathology_sensitivity_slices(
        cohort, [f.name for f in factors if f.kind == "finding_flag"], config
    )
    return AuditResult(
        overall=overall,
        overall_ci=overall_ci,
        reports=tuple(reports),
        factors=tuple(factors),
        config=config,
        provenance=cohort.provenance,
        pathology_slices=tuple(slices),
        overall_cm=overall_cm,
    )


def flag_disparities(
    reports: Sequence[SubgroupReport], policy: FlagPolicy = FlagPolicy(), flag_unknown: bool = False
) -> List[SubgroupReport]:
    """Set ``flagged`` per metric; suppressed and ``unknown`` subgroups are never flagged.

    Raises:
        MissingCI: a non-suppressed report lacks ΔM intervals under ``ci_excludes_zero``.
    """
    out = []
    for rep in reports:
        flags = {m: False for m in rep.delta}
        if not rep.suppressed and (flag_unknown or rep.value != UNKNOWN):
            if policy.kind == "ci_excludes_zero":
                if rep.delta_ci is None:
                    raise MissingCI(f"{rep.factor.name}={rep.value}: no ΔM intervals")
                for m in rep.delta:
                    iv = rep.delta_ci.get(m)
                    if iv is None:
                        raise MissingCI(f"{rep.factor.name}={rep.value}: no interval for Δ{m}")
                    flags[m] = iv.defined and (iv.hi < 0 or iv.lo > 0)
            else:
                for m, d in rep.delta.items():
                    flags[m] = is_defined(d) and abs(d) > policy.tau
        out.append(replace(rep, flagged=flags))
    return out


def pathology_sensitivity_slices(
    cohort: CohortTable, finding_factors: Sequence[str], config: AuditConfig = AuditConfig()
) -> List[PathologySlice]:
    """Sensitivity over records flagged with each finding.

    Flagged records are abnormal by construction; flagged normals are
    excluded and counted. Slices may overlap.
    """
    out = []
    for name in finding_factors:
        factor = cohort.factor(name)
        if factor.kind != "finding_flag":
            raise ManifestMismatch(f"factor {name!r} is not a finding_flag")
        flagged = [r for r in cohort.records if r.factors.get(name) == "1"]
        kept = [r for r in flagged if r.y_true == 1]
        excluded = len(flagged) - len(kept)
        if excluded:
            logger.warning("finding %s: %d flagged records have y_true=0 and were excluded", name, excluded)
        if not kept:
            out.append(PathologySlice(name, 0, UNDEFINED, None, excluded))
            continue
        preds = hard_predictions(kept, config.threshold)
        sens = sum(preds) / len(kept)
        ci = None
        if len(kept) >= config.min_subgroup_n:
            ci = bootstrap_ci(
                kept, "sensitivity", config.bootstrap, config.threshold,
                stream_label=f"{name}=1|sensitivity",
            )
        out.append(PathologySlice(name, len(kept), sens, ci, excluded))
    return out
