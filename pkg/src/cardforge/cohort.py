"""Cohort data model, prediction-table and manifest ingestion, factor derivation."""
from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import yaml

from .errors import (
    AlreadyBinned,
    DuplicateId,
    InvalidLabel,
    ManifestMismatch,
    MissingColumn,
    NonNumericColumn,
    ValueOutOfRange,
)

logger = logging.getLogger(__name__)

UNKNOWN = "unknown"
RESERVED_PREFIX = "derived_"
FINDING_COUNT = "finding_count"

CATEGORIES = ("socio_demographic", "anatomic", "disease_dependent", "instrumental", "data_source")
KINDS = ("categorical", "numeric_binned", "finding_flag")
CORE_COLUMNS = ("id", "y_true", "y_score", "y_pred")

_NAME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class FactorDescriptor:
    name: str
    category: str
    kind: str = "categorical"
    bin_edges: Optional[Tuple[float, ...]] = None
    value_order: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if not _NAME_RE.match(self.name or ""):
            raise ManifestMismatch(f"invalid factor name {self.name!r}")
        if self.category not in CATEGORIES:
            raise ManifestMismatch(f"factor {self.name}: unknown category {self.category!r}")
        if self.kind not in KINDS:
            raise ManifestMismatch(f"factor {self.name}: unknown kind {self.kind!r}")
        if self.kind == "numeric_binned":
            if not self.bin_edges:
                raise ManifestMismatch(f"factor {self.name}: numeric_binned needs non-empty bin_edges")
            edges = self.bin_edges
            if any(not math.isfinite(e) for e in edges) or any(
                b <= a for a, b in zip(edges, edges[1:])
            ):
                raise ManifestMismatch(f"factor {self.name}: bin_edges must be strictly ascending")
        elif self.bin_edges is not None:
            raise ManifestMismatch(f"factor {self.name}: bin_edges only allowed for numeric_binned")

    def to_dict(self) -> dict:
        out = {"name": self.name, "category": self.category, "kind": self.kind}
        if self.bin_edges is not None:
            out["bin_edges"] = list(self.bin_edges)
        if self.value_order is not None:
            out["value_order"] = list(self.value_order)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "FactorDescriptor":
        if not isinstance(data, Mapping):
            raise ManifestMismatch(f"factor entry must be a mapping, got {data!r}")
        extra = set(data) - {"name", "category", "kind", "bin_edges", "value_order"}
        if extra:
            raise ManifestMismatch(f"factor entry has unknown keys {sorted(extra)}")
        edges = data.get("bin_edges")
        order = data.get("value_order")
        try:
            edges = tuple(float(e) for e in edges) if edges is not None else None
        except (TypeError, ValueError):
            raise ManifestMismatch(f"factor {data.get('name')}: bin_edges must be numbers") from None
        return cls(
            name=str(data.get("name", "")),
            category=str(data.get("category", "")),
            kind=str(data.get("kind", "categorical")),
            bin_edges=edges,
            value_order=tuple(str(v) for v in order) if order is not None else None,
        )


@dataclass(frozen=True)
class Provenance:
    dataset_name: str = ""
    dataset_version: str = ""
    date_range: str = ""
    description: str = ""

    def to_dict(self) -> dict:
        return {
            "dataset_name": self.dataset_name,
            "dataset_version": self.dataset_version,
            "date_range": self.date_range,
            "description": self.description,
        }

    @classmethod
    def from_dict(cls, data: Optional[Mapping]) -> "Provenance":
        data = data or {}
        return cls(**{k: str(data.get(k, "") or "") for k in cls.__dataclass_fields__})

    def summary(self) -> str:
        parts = [p for p in (self.dataset_name, self.dataset_version, self.date_range) if p]
        text = ", ".join(parts)
        if self.description:
            text = f"{text}: {self.description}" if text else self.description
        return text


@dataclass(frozen=True)
class Manifest:
    factors: Tuple[FactorDescriptor, ...]
    provenance: Provenance = Provenance()
    finding_count_from: Tuple[str, ...] = ()

    def __post_init__(self):
        names = [f.name for f in self.factors]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ManifestMismatch(f"duplicate factor names: {dupes}")
        for n in names:
            if n.startswith(RESERVED_PREFIX):
                raise ManifestMismatch(f"factor name {n!r} uses reserved prefix {RESERVED_PREFIX!r}")
        by_name = {f.name: f for f in self.factors}
        for n in self.finding_count_from:
            if n not in by_name or by_name[n].kind != "finding_flag":
                raise ManifestMismatch(f"finding_count_from names {n!r}, which is not a finding_flag factor")
        if self.finding_count_from and FINDING_COUNT in by_name:
            raise ManifestMismatch(f"factor name {FINDING_COUNT!r} is reserved when finding_count_from is set")

    def to_dict(self) -> dict:
        out = {
            "provenance": self.provenance.to_dict(),
            "factors": [f.to_dict() for f in self.factors],
        }
        if self.finding_count_from:
            out["finding_count_from"] = list(self.finding_count_from)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "Manifest":
        if not isinstance(data, Mapping) or not isinstance(data.get("factors"), list):
            raise ManifestMismatch("manifest must be a mapping with a 'factors' list")
        return cls(
            factors=tuple(FactorDescriptor.from_dict(f) for f in data["factors"]),
            provenance=Provenance.from_dict(data.get("provenance")),
            finding_count_from=tuple(str(x) for x in data.get("finding_count_from") or ()),
        )


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    y_true: int
    y_score: Optional[float] = None
    y_pred: Optional[int] = None
    factors: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.y_true not in (0, 1):
            raise InvalidLabel(f"record {self.id}: y_true must be 0 or 1")
        if self.y_score is None and self.y_pred is None:
            raise MissingColumn(f"record {self.id}: needs y_score or y_pred")
        if self.y_score is not None and not 0.0 <= self.y_score <= 1.0:
            raise ValueOutOfRange(f"record {self.id}: y_score {self.y_score} outside [0,1]")
        if self.y_pred is not None and self.y_pred not in (0, 1):
            raise InvalidLabel(f"record {self.id}: y_pred must be 0 or 1")


@dataclass(frozen=True)
class CohortTable:
    records: Tuple[PredictionRecord, ...]
    manifest: Tuple[FactorDescriptor, ...]
    provenance: Provenance = Provenance()
    binned: frozenset = frozenset()

    def __post_init__(self):
        names = {f.name for f in self.manifest}
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise DuplicateId(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
            stray = set(rec.factors) - names
            if stray:
                raise ManifestMismatch(f"record {rec.id}: factors {sorted(stray)} not in manifest")

    def __len__(self):
        return len(self.records)

    def factor(self, name: str) -> FactorDescriptor:
        for f in self.manifest:
            if f.name == name:
                return f
        raise ManifestMismatch(f"factor {name!r} not in manifest")

    def values(self, name: str) -> list:
        return [rec.factors.get(name, UNKNOWN) for rec in self.records]


def load_manifest(path) -> Manifest:
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ManifestMismatch(f"{path}: not a well-formed manifest: {exc}") from None
    return Manifest.from_dict(data)


def _parse_score(text: str, row: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ValueOutOfRange(f"row {row}: y_score {text!r} is not a number", rows=[row]) from None
    if not 0.0 <= value <= 1.0:
        raise ValueOutOfRange(f"row {row}: y_score {text} outside [0,1]", rows=[row])
    return value


def _parse_label(text: str):
    text = text.strip()
    if text in ("0", "1"):
        return int(text)
    try:
        value = float(text)
    except ValueError:
        return None
    return int(value) if value in (0.0, 1.0) else None


def ingest_cohort(table_file, manifest_file) -> CohortTable:
    """Read a prediction table and its factor manifest into a validated cohort.

    Missing factor cells become ``"unknown"``. Rows with an unparseable
    ``y_true`` are all reported together by row number (header is row 1).
    """
    manifest = load_manifest(manifest_file)
    with open(table_file, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn(f"{table_file}: empty file, no header row") from None
        rows = list(reader)
    return cohort_from_rows(header, rows, manifest)


def cohort_from_rows(header: Sequence[str], rows: Iterable[Sequence[str]], manifest: Manifest) -> CohortTable:
    col = {name: i for i, name in enumerate(header)}
    if "y_true" not in col:
        raise MissingColumn("table has no y_true column")
    if "y_score" not in col and "y_pred" not in col:
        raise MissingColumn("table needs a y_score or y_pred column")
    absent = [f.name for f in manifest.factors if f.name not in col]
    if absent:
        raise ManifestMismatch(f"manifest factors absent from table: {absent}")

    i_id, i_true = col.get("id"), col["y_true"]
    i_score, i_pred = col.get("y_score"), col.get("y_pred")
    factor_cols = [(f.name, col[f.name]) for f in manifest.factors]

    records = []
    bad_labels = []
    both_present = 0
    for rowno, row in enumerate(rows, start=2):
        if not any(cell.strip() for cell in row):
            continue
        if len(row) < len(header):
            row = list(row) + [""] * (len(header) - len(row))
        y_true = _parse_label(row[i_true])
        if y_true is None:
            bad_labels.append(rowno)
            continue
        score_text = row[i_score].strip() if i_score is not None else ""
        pred_text = row[i_pred].strip() if i_pred is not None else ""
        y_score = _parse_score(score_text, rowno) if score_text else None
        y_pred = None
        if pred_text:
            y_pred = _parse_label(pred_text)
            if y_pred is None:
                raise InvalidLabel(f"row {rowno}: y_pred {pred_text!r} is not 0/1", rows=[rowno])
        if y_score is None and y_pred is None:
            raise MissingColumn(f"row {rowno}: neither y_score nor y_pred given")
        if y_score is not None and y_pred is not None:
            both_present += 1
        rec_id = row[i_id].strip() if i_id is not None else str(rowno - 2)
        factors = {}
        for name, idx in factor_cols:
            cell = row[idx].strip()
            factors[name] = cell if cell else UNKNOWN
        records.append(PredictionRecord(rec_id, y_true, y_score, y_pred, factors))

    if bad_labels:
        raise InvalidLabel(f"unparseable y_true in rows {bad_labels}", rows=bad_labels)
    if both_present:
        logger.warning("%d records carry both y_score and y_pred; y_pred is ignored", both_present)
    cohort = CohortTable(tuple(records), manifest.factors, manifest.provenance)
    if manifest.finding_count_from:
        cohort = derive_finding_count_factor(cohort, list(manifest.finding_count_from))
    return cohort


def _fmt_edge(edge: float) -> str:
    return format(edge, "g")


def bin_labels(edges: Sequence[float]) -> list:
    """Interval labels for ascending edges, left-closed/right-open."""
    labels = [f"<{_fmt_edge(edges[0])}"]
    labels += [f"[{_fmt_edge(a)},{_fmt_edge(b)})" for a, b in zip(edges, edges[1:])]
    labels.append(f"≥{_fmt_edge(edges[-1])}")
    return labels


def bin_value(value: float, edges: Sequence[float]) -> str:
    labels = bin_labels(edges)
    for i, edge in enumerate(edges):
        if value < edge:
            return labels[i]
    return labels[-1]


def apply_bins(cohort: CohortTable, factor: FactorDescriptor, strict: bool = False) -> CohortTable:
    """Replace raw numeric values of ``factor`` with interval labels.

    Raises:
        AlreadyBinned: the factor was binned before.
        NonNumericColumn: ``strict`` and some non-``unknown`` cell is not a number.
    """
    if factor.kind != "numeric_binned":
        raise ManifestMismatch(f"factor {factor.name} is not numeric_binned")
    if factor.name in cohort.binned:
        raise AlreadyBinned(f"factor {factor.name} is already binned")
    cohort.factor(factor.name)
    edges = factor.bin_edges
    new_records = []
    bad = []
    for rec in cohort.records:
        raw = rec.factors.get(factor.name, UNKNOWN)
        if raw == UNKNOWN:
            label = UNKNOWN
        else:
            try:
                value = float(raw)
                if not math.isfinite(value):
                    raise ValueError
                label = bin_value(value, edges)
            except ValueError:
                bad.append(rec.id)
                label = UNKNOWN
        factors = dict(rec.factors)
        factors[factor.name] = label
        new_records.append(replace(rec, factors=factors))
    if bad and strict:
        raise NonNumericColumn(f"factor {factor.name}: non-numeric values for records {bad[:10]}")
    if bad:
        logger.warning("factor %s: %d non-numeric values mapped to %r", factor.name, len(bad), UNKNOWN)
    return replace(cohort, records=tuple(new_records), binned=cohort.binned | {factor.name})


def apply_all_bins(cohort: CohortTable, strict: bool = False) -> CohortTable:
    for f in cohort.manifest:
        if f.kind == "numeric_binned" and f.name not in cohort.binned:
            cohort = apply_bins(cohort, f, strict=strict)
    return cohort


def derive_finding_count_factor(cohort: CohortTable, finding_columns: Sequence[str]) -> CohortTable:
    """Add the disease-dependent ``finding_count`` factor ("0", "1", "2+")."""
    by_name = {f.name: f for f in cohort.manifest}
    for name in finding_columns:
        if name not in by_name:
            raise ManifestMismatch(f"finding column {name!r} not in manifest")
        if by_name[name].kind != "finding_flag":
            raise ManifestMismatch(f"factor {name!r} is not a finding_flag")
    if FINDING_COUNT in by_name:
        raise ManifestMismatch(f"factor {FINDING_COUNT!r} already exists")
    new_records = []
    for rec in cohort.records:
        flags = [rec.factors.get(name, UNKNOWN) for name in finding_columns]
        if any(v not in ("0", "1") for v in flags):
            label = UNKNOWN
        else:
            count = sum(v == "1" for v in flags)
            label = "2+" if count >= 2 else str(count)
        factors = dict(rec.factors)
        factors[FINDING_COUNT] = label
        new_records.append(replace(rec, factors=factors))
    derived = FactorDescriptor(
        FINDING_COUNT, "disease_dependent", "categorical", value_order=("0", "1", "2+")
    )
    return replace(cohort, records=tuple(new_records), manifest=cohort.manifest + (derived,))


def write_cohort(cohort: CohortTable, table_file, manifest_file, finding_count_from: Sequence[str] = ()) -> None:
    """Serialize a cohort as a CSV table plus YAML manifest readable by :func:`ingest_cohort`."""
    factors = [f for f in cohort.manifest if not (finding_count_from and f.name == FINDING_COUNT)]
    has_score = any(r.y_score is not None for r in cohort.records)
    has_pred = any(r.y_pred is not None for r in cohort.records)
    has_score = has_score or not has_pred  # an empty table still needs a prediction column
    header = ["id", "y_true"]
    if has_score:
        header.append("y_score")
    if has_pred:
        header.append("y_pred")
    header += [f.name for f in factors]
    with open(table_file, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for rec in cohort.records:
            row = [rec.id, str(rec.y_true)]
            if has_score:
                row.append("" if rec.y_score is None else repr(rec.y_score))
            if has_pred:
                row.append("" if rec.y_pred is None else str(rec.y_pred))
            row += [rec.factors.get(f.name, UNKNOWN) for f in factors]
            writer.writerow(row)
    manifest = Manifest(tuple(factors), cohort.provenance, tuple(finding_count_from))
    Path(manifest_file).write_text(
        yaml.safe_dump(manifest.to_dict(), sort_keys=False, allow_unicode=True), encoding="utf-8"
    )


def factor_values(cohort: CohortTable, factor: FactorDescriptor) -> list:
    """Observed values in display order: manifest value_order, then lexicographic, ``unknown`` last."""
    observed = set(cohort.values(factor.name))
    order = []
    if factor.kind == "numeric_binned" and factor.name in cohort.binned:
        order = [v for v in bin_labels(factor.bin_edges) if v in observed]
    elif factor.value_order:
        order = [v for v in factor.value_order if v in observed]
    rest = sorted(v for v in observed if v not in order and v != UNKNOWN)
    tail = [UNKNOWN] if UNKNOWN in observed and UNKNOWN not in order else []
    return order + rest + tail


def manifest_of(cohort: CohortTable) -> Dict[str, FactorDescriptor]:
    return {f.name: f for f in cohort.manifest}
