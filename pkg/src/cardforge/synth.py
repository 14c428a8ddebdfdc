"""Synthetic cohorts with controlled per-block performance, and power scans.

A spec is a manifest plus blocks. Each block fixes how its records get
factor values, its size, prevalence and the sensitivity/specificity the
classifier should achieve on it. Scores are either hard labels or Beta
draws whose mass above 0.5 equals the target.

Spec file (YAML)::

    seed: 11
    score_model: {kind: beta_scores, concentration: 8}
    provenance: {dataset_name: ..., ...}
    factors: [ ...manifest entries... ]
    finding_count_from: [mass, calcification]   # optional
    blocks:
      - name: ge
        n: 5000
        prevalence: 0.4
        sensitivity: 0.53
        specificity: 0.80
        factors:
          device: GE_Type_1                 # fixed value
          sex: {F: 0.5, M: 0.5}             # categorical weights
          age: {uniform_int: [20, 90]}      # raw numbers, binned at audit time
          mass: {finding_rate: 0.3}         # flag on abnormal records only
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml
from scipy import optimize, stats

from .audit import AuditConfig, run_audit
from .bootstrap import BootstrapConfig, replicate_seed
from .cohort import (
    CohortTable,
    Manifest,
    PredictionRecord,
    derive_finding_count_factor,
)
from .errors import InvalidSpec, ManifestMismatch

logger = logging.getLogger(__name__)

SCORE_KINDS = ("hard_labels", "beta_scores")


@dataclass(frozen=True)
class ScoreModel:
    kind: str = "hard_labels"
    concentration: Optional[float] = None

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise InvalidSpec(f"score_model kind must be one of {SCORE_KINDS}")
        if self.kind == "beta_scores":
            if self.concentration is None or not self.concentration > 0:
                raise InvalidSpec("beta_scores needs a positive concentration")
        elif self.concentration is not None:
            raise InvalidSpec("hard_labels takes no concentration")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.concentration is not None:
            out["concentration"] = self.concentration
        return out


@dataclass(frozen=True)
class Block:
    name: str
    n: int
    prevalence: float
    sensitivity: float
    specificity: float
    factors: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 1:
            raise InvalidSpec(f"block {self.name}: n must be a positive integer")
        if not 0.0 <= self.prevalence <= 1.0:
            raise InvalidSpec(f"block {self.name}: prevalence outside [0, 1]")
        for label in ("sensitivity", "specificity"):
            v = getattr(self, label)
            if not 0.0 < v < 1.0:
                raise InvalidSpec(f"block {self.name}: {label} target must lie in (0, 1)")
        for name, rule in self.factors.items():
            _check_rule(self.name, name, rule)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "prevalence": self.prevalence,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "factors": dict(self.factors),
        }


def _check_rule(block, factor, rule):
    if isinstance(rule, str):
        return
    if isinstance(rule, Mapping):
        if set(rule) == {"uniform_int"}:
            lo_hi = rule["uniform_int"]
            if not (isinstance(lo_hi, (list, tuple)) and len(lo_hi) == 2 and lo_hi[0] <= lo_hi[1]):
                raise InvalidSpec(f"block {block}, factor {factor}: uniform_int needs [lo, hi]")
            return
        if set(rule) == {"finding_rate"}:
            if not 0.0 <= float(rule["finding_rate"]) <= 1.0:
                raise InvalidSpec(f"block {block}, factor {factor}: finding_rate outside [0, 1]")
            return
        weights = list(rule.values())
        if rule and all(isinstance(w, (int, float)) and w >= 0 for w in weights) and sum(weights) > 0:
            return
    raise InvalidSpec(f"block {block}, factor {factor}: unrecognised assignment {rule!r}")


@dataclass(frozen=True)
class SynthSpec:
    manifest: Manifest
    blocks: Tuple[Block, ...]
    score_model: ScoreModel = ScoreModel()
    seed: int = 0

    def __post_init__(self):
        if not self.blocks:
            raise InvalidSpec("spec has no blocks")
        names = [b.name for b in self.blocks]
        if len(set(names)) != len(names):
            raise InvalidSpec("block names must be unique")
        declared = {f.name: f for f in self.manifest.factors}
        for b in self.blocks:
            missing = sorted(set(declared) - set(b.factors))
            extra = sorted(set(b.factors) - set(declared))
            if missing:
                raise InvalidSpec(f"block {b.name} assigns no value for factors {missing}")
            if extra:
                raise InvalidSpec(f"block {b.name} assigns undeclared factors {extra}")
            for name, rule in b.factors.items():
                is_flag = isinstance(rule, Mapping) and "finding_rate" in rule
                if is_flag != (declared[name].kind == "finding_flag") and not isinstance(rule, str):
                    raise InvalidSpec(f"block {b.name}: finding_rate is for finding_flag factors only ({name})")
        if not 0 <= self.seed < 2**64:
            raise InvalidSpec("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "score_model": self.score_model.to_dict()}
        out.update(self.manifest.to_dict())
        out["blocks"] = [b.to_dict() for b in self.blocks]
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "SynthSpec":
        if not isinstance(data, Mapping):
            raise InvalidSpec("spec must be a mapping")
        try:
            manifest = Manifest.from_dict(
                {k: data[k] for k in ("factors", "provenance", "finding_count_from") if k in data}
            )
        except ManifestMismatch as exc:
            raise InvalidSpec(str(exc)) from exc
        sm = data.get("score_model", "hard_labels")
        if isinstance(sm, str):
            sm = {"kind": sm}
        try:
            blocks = tuple(
                Block(
                    name=str(b["name"]),
                    n=int(b["n"]),
                    prevalence=float(b["prevalence"]),
                    sensitivity=float(b["sensitivity"]),
                    specificity=float(b["specificity"]),
                    factors=dict(b.get("factors") or {}),
                )
                for b in data.get("blocks") or ()
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpec(f"malformed block: {exc!r}") from exc
        return cls(
            manifest=manifest,
            blocks=blocks,
            score_model=ScoreModel(sm.get("kind", "hard_labels"), sm.get("concentration")),
            seed=int(data.get("seed", 0)),
        )


def load_synth_spec(path) -> SynthSpec:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise InvalidSpec(f"{path}: not a well-formed spec: {exc}") from None
    return SynthSpec.from_dict(data)


@lru_cache(maxsize=256)
def beta_shape(target: float, concentration: float) -> Tuple[float, float]:
    """(a, b) with a + b = concentration and P(X >= 0.5) = target for X ~ Beta(a, b)."""
    def gap(a):
        return stats.beta.sf(0.5, a, concentration - a) - target

    eps = concentration * 1e-9
    a = optimize.brentq(gap, eps, concentration - eps, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    return a, concentration - a


def _assign(rule, y, rng) -> List[str]:
    n = y.size
    if isinstance(rule, str):
        return [rule] * n
    if "uniform_int" in rule:
        lo, hi = rule["uniform_int"]
        return [str(v) for v in rng.integers(int(lo), int(hi), size=n, endpoint=True)]
    if "finding_rate" in rule:
        hit = rng.random(n) < float(rule["finding_rate"])
        return ["1" if (h and yi == 1) else "0" for h, yi in zip(hit, y)]
    values = list(rule)
    p = np.asarray([float(rule[v]) for v in values])
    picks = rng.choice(len(values), size=n, p=p / p.sum())
    return [values[i] for i in picks]


def synth_cohort(spec: SynthSpec) -> CohortTable:
    """Draw the cohort described by ``spec``; fully determined by ``spec.seed``.

    Each block uses its own PCG64 stream seeded from ``(seed, block index)``.
    Records are ordered block by block; ids are ``s<global index>``.
    """
    records = []
    names = [f.name for f in spec.manifest.factors]
    for bi, block in enumerate(spec.blocks):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, bi])))
        n = block.n
        y = (rng.random(n) < block.prevalence).astype(np.int64)
        correct_target = np.where(y == 1, block.sensitivity, block.specificity)
        scores = preds = None
        if spec.score_model.kind == "hard_labels":
            correct = rng.random(n) < correct_target
            preds = np.where(correct, y, 1 - y)
        else:
            c = spec.score_model.concentration
            a_pos, b_pos = beta_shape(block.sensitivity, c)
            a_neg, b_neg = beta_shape(block.specificity, c)
            pos_draw = rng.beta(a_pos, b_pos, size=n)
            neg_draw = rng.beta(a_neg, b_neg, size=n)
            # negatives mirror the positive construction around 0.5
            scores = np.where(y == 1, pos_draw, 1.0 - neg_draw)
        columns = {name: _assign(block.factors[name], y, rng) for name in names}
        base = len(records)
        for i in range(n):
            records.append(PredictionRecord(
                id=f"s{base + i:07d}",
                y_true=int(y[i]),
                y_score=float(scores[i]) if scores is not None else None,
                y_pred=int(preds[i]) if preds is not None else None,
                factors={name: columns[name][i] for name in names},
            ))
    cohort = CohortTable(tuple(records), spec.manifest.factors, spec.manifest.provenance)
    if spec.manifest.finding_count_from:
        cohort = derive_finding_count_factor(cohort, list(spec.manifest.finding_count_from))
    return cohort


def mixture_expectation(spec: SynthSpec, block_names: Optional[Sequence[str]] = None) -> Dict[str, float]:
    """Expected sensitivity, specificity and accuracy of the pooled blocks.

    Closed form over the block targets; independent of the audit code so it
    can serve as a test oracle.
    """
    chosen = [b for b in spec.blocks if block_names is None or b.name in block_names]
    if not chosen:
        raise InvalidSpec("no blocks selected")
    pos = sum(b.n * b.prevalence for b in chosen)
    neg = sum(b.n * (1 - b.prevalence) for b in chosen)
    tp = sum(b.n * b.prevalence * b.sensitivity for b in chosen)
    tn = sum(b.n * (1 - b.prevalence) * b.specificity for b in chosen)
    out = {"accuracy": (tp + tn) / (pos + neg)}
    out["sensitivity"] = tp / pos if pos else math.nan
    out["specificity"] = tn / neg if neg else math.nan
    return out


@dataclass(frozen=True)
class PowerRow:
    gap: float
    n_per_block: int
    trials: int
    detected: int

    @property
    def rate(self) -> float:
        return self.detected / self.trials


def _marker(spec: SynthSpec, injected: int, factor: Optional[str]) -> Tuple[str, str]:
    """Factor and value identifying the injected block (a fixed, block-unique value)."""
    block = spec.blocks[injected]
    candidates = [factor] if factor else list(block.factors)
    for name in candidates:
        rule = block.factors.get(name)
        if isinstance(rule, str) and all(
            other.factors.get(name) != rule for j, other in enumerate(spec.blocks) if j != injected
        ):
            return name, rule
    raise InvalidSpec(f"block {block.name} has no fixed factor value that sets it apart")


def power_scan(
    spec_template: SynthSpec,
    gap_sizes: Sequence[float],
    cohort_sizes: Sequence[int],
    trials: int,
    metric: str = "sensitivity",
    injected: int = 0,
    reference: int = 1,
    factor: Optional[str] = None,
    audit_config: AuditConfig = AuditConfig(),
) -> List[PowerRow]:
    """Detection rate of an injected gap, per (gap, block size).

    The injected block's ``metric`` target is set to the reference block's
    target minus the gap; every block gets the scanned size. Each trial
    draws a fresh cohort and bootstrap seed derived from the template seed,
    audits it and counts a detection when the injected subgroup is flagged
    on ``metric``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if metric not in ("sensitivity", "specificity"):
        raise ValueError("gaps can be injected into sensitivity or specificity only")
    name, value = _marker(spec_template, injected, factor)
    ref_target = getattr(spec_template.blocks[reference], metric)
    rows = []
    for gap in gap_sizes:
        target = ref_target - gap
        if not 0.0 < target < 1.0:
            raise InvalidSpec(f"gap {gap} pushes the {metric} target outside (0, 1)")
        for size in cohort_sizes:
            blocks = [replace(b, n=int(size)) for b in spec_template.blocks]
            blocks[injected] = replace(blocks[injected], **{metric: target})
            detected = 0
            for t in range(trials):
                seed = replicate_seed(spec_template.seed, f"power|{gap!r}|{int(size)}", t)
                spec = replace(spec_template, blocks=tuple(blocks), seed=seed)
                cfg = replace(audit_config, bootstrap=replace(audit_config.bootstrap, master_seed=seed))
                result = run_audit(synth_cohort(spec), cfg)
                detected += any(
                    r.flagged.get(metric, False) for r in result.reports_for(name) if r.value == value
                )
            rows.append(PowerRow(float(gap), int(size), trials, detected))
            logger.info("gap %.3f n=%d: %d/%d detected", gap, size, detected, trials)
    return rows
