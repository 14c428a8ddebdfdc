"""The model facts card: data model, construction, validation, JSON form."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence, Tuple

from ..audit import AuditResult
from ..cohort import CATEGORIES, FactorDescriptor
from ..errors import InvalidCard, MissingSection, UnsupportedSchema

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

SECTIONS = (
    "model_details",
    "intended_use",
    "factors",
    "metrics_description",
    "training_eval_data",
    "caveats_recommendations",
    "quantitative_analysis",
)
HEADINGS = {
    "model_details": "Model Details",
    "intended_use": "Intended Use",
    "factors": "Factors",
    "metrics_description": "Metrics",
    "training_eval_data": "Training & Evaluation Data",
    "caveats_recommendations": "Caveats & Recommendations",
    "quantitative_analysis": "Quantitative Analysis",
}
PROSE_SECTIONS = (
    "model_details",
    "intended_use",
    "metrics_description",
    "training_eval_data",
    "caveats_recommendations",
)

ERROR = "ERROR"
WARNING = "WARNING"
ACK_ALL = "ack:all"


@dataclass(frozen=True)
class ModelDetails:
    name: str
    version: str = ""
    date: str = ""
    architecture: str = ""
    description: str = ""

    def empty(self) -> bool:
        return not self.name.strip()

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "date": self.date,
            "architecture": self.architecture,
            "description": self.description,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelDetails":
        return cls(**{k: _text(data.get(k)) for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class MetricsDescription:
    """Author prose plus an echo of the audit settings that produced the numbers."""

    text: str
    metrics: Tuple[str, ...] = ()
    threshold: Optional[float] = None
    bootstrap: Optional[dict] = None
    min_subgroup_n: Optional[int] = None
    flag_policy: str = ""

    def empty(self) -> bool:
        return not self.text.strip() and not self.metrics

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "metrics": list(self.metrics),
            "threshold": self.threshold,
            "bootstrap": self.bootstrap,
            "min_subgroup_n": self.min_subgroup_n,
            "flag_policy": self.flag_policy,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "MetricsDescription":
        return cls(
            text=_text(data.get("text")),
            metrics=tuple(data.get("metrics") or ()),
            threshold=data.get("threshold"),
            bootstrap=data.get("bootstrap"),
            min_subgroup_n=data.get("min_subgroup_n"),
            flag_policy=_text(data.get("flag_policy")),
        )


@dataclass(frozen=True)
class TrainEvalData:
    training: str
    evaluation: str
    same_data: bool = False

    def empty(self) -> bool:
        return not self.training.strip() or not self.evaluation.strip()

    def to_dict(self) -> dict:
        return {"training": self.training, "evaluation": self.evaluation, "same_data": self.same_data}

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainEvalData":
        return cls(_text(data.get("training")), _text(data.get("evaluation")), bool(data.get("same_data", False)))


@dataclass(frozen=True)
class ModelCard:
    """Seven-section card. A section set to None is absent (only reachable by parsing)."""

    model_details: Optional[ModelDetails]
    intended_use: Optional[str]
    factors: Optional[Tuple[FactorDescriptor, ...]]
    metrics_description: Optional[MetricsDescription]
    training_eval_data: Optional[TrainEvalData]
    caveats_recommendations: Optional[Tuple[str, ...]]
    quantitative_analysis: Optional[AuditResult]
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        out = {"schema_version": self.schema_version}
        for name in SECTIONS:
            value = getattr(self, name)
            if value is None:
                continue
            if name == "factors":
                value = _group_factors(value)
            elif name == "caveats_recommendations":
                value = list(value)
            elif hasattr(value, "to_dict"):
                value = value.to_dict()
            out[name] = value
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelCard":
        if not isinstance(data, Mapping):
            raise InvalidCard("card document must be an object")
        version = data.get("schema_version")
        if not isinstance(version, int) or isinstance(version, bool):
            raise InvalidCard("schema_version missing or not an integer")
        if version > SCHEMA_VERSION:
            raise UnsupportedSchema(f"schema_version {version} is newer than supported {SCHEMA_VERSION}")
        extra = set(data) - set(SECTIONS) - {"schema_version"}
        if extra:
            raise InvalidCard(f"unknown top-level keys {sorted(extra)}")
        try:
            return cls(
                model_details=_opt(data, "model_details", ModelDetails.from_dict),
                intended_use=_opt(data, "intended_use", _text),
                factors=_opt(data, "factors", _ungroup_factors),
                metrics_description=_opt(data, "metrics_description", MetricsDescription.from_dict),
                training_eval_data=_opt(data, "training_eval_data", TrainEvalData.from_dict),
                caveats_recommendations=_opt(data, "caveats_recommendations", lambda v: tuple(_text(c) for c in v)),
                quantitative_analysis=_opt(data, "quantitative_analysis", AuditResult.from_dict),
                schema_version=version,
            )
        except InvalidCard:
            raise
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise InvalidCard(f"malformed card: {exc!r}") from exc


def _text(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (dict, list)):
        raise InvalidCard(f"expected text, got {type(value).__name__}")
    return str(value)


def _opt(data, key, conv):
    return None if data.get(key) is None else conv(data[key])


def _group_factors(factors: Sequence[FactorDescriptor]) -> dict:
    out = {}
    for cat in CATEGORIES:
        members = [f.to_dict() for f in factors if f.category == cat]
        if members:
            out[cat] = members
    return out


def _ungroup_factors(grouped: Mapping) -> Tuple[FactorDescriptor, ...]:
    out = []
    for cat in CATEGORIES:
        for entry in grouped.get(cat, ()):
            f = FactorDescriptor.from_dict(entry)
            if f.category != cat:
                raise InvalidCard(f"factor {f.name} listed under {cat} but has category {f.category}")
            out.append(f)
    unknown = set(grouped) - set(CATEGORIES)
    if unknown:
        raise InvalidCard(f"unknown factor categories {sorted(unknown)}")
    return tuple(out)


def sort_factors(factors: Sequence[FactorDescriptor]) -> Tuple[FactorDescriptor, ...]:
    """Stable order by category taxonomy; this is the order the card stores."""
    rank = {c: i for i, c in enumerate(CATEGORIES)}
    return tuple(sorted(factors, key=lambda f: rank[f.category]))


def build_card(meta: Mapping, audit: AuditResult) -> ModelCard:
    """Assemble a card from author metadata and an audit.

    Args:
        meta: mapping with ``model_details`` (name, version, date, architecture,
            description), ``intended_use``, ``metrics_description``,
            ``training_eval_data`` (training, evaluation, optional same_data)
            and a ``caveats_recommendations`` list.
        audit: supplies the quantitative analysis; the factors section is
            always derived from its manifest.

    Raises:
        MissingSection: a prose section is absent or empty.
    """
    meta = meta or {}
    for name in PROSE_SECTIONS:
        value = meta.get(name)
        if value is None or (isinstance(value, (str, list, dict)) and not value):
            raise MissingSection(name)
    if meta.get("factors") is not None:
        logger.warning("metadata 'factors' ignored; the factors section is derived from the audit manifest")
    details = meta["model_details"]
    details = ModelDetails.from_dict(details) if isinstance(details, Mapping) else ModelDetails(name=_text(details))
    if details.empty():
        raise MissingSection("model_details")
    ted = meta["training_eval_data"]
    if not isinstance(ted, Mapping):
        raise MissingSection("training_eval_data")
    ted = TrainEvalData.from_dict(ted)
    if ted.empty():
        raise MissingSection("training_eval_data")
    caveats = meta["caveats_recommendations"]
    caveats = (caveats,) if isinstance(caveats, str) else tuple(_text(c) for c in caveats)
    if not any(c.strip() for c in caveats):
        raise MissingSection("caveats_recommendations")
    if not _text(meta["intended_use"]).strip():
        raise MissingSection("intended_use")
    text = meta["metrics_description"]
    if isinstance(text, Mapping):
        text = text.get("text")
    cfg = audit.config
    metrics_desc = MetricsDescription(
        text=_text(text),
        metrics=tuple(m for m in cfg.metrics if m in audit.overall_ci) or cfg.metrics,
        threshold=cfg.threshold,
        bootstrap=cfg.bootstrap.to_dict(),
        min_subgroup_n=cfg.min_subgroup_n,
        flag_policy=str(cfg.flag_policy),
    )
    return ModelCard(
        model_details=details,
        intended_use=_text(meta["intended_use"]),
        factors=sort_factors(audit.factors),
        metrics_description=metrics_desc,
        training_eval_data=ted,
        caveats_recommendations=caveats,
        quantitative_analysis=audit,
    )


@dataclass(frozen=True)
class Violation:
    level: str
    code: str
    section: str
    message: str

    def __str__(self):
        return f"{self.level} {self.code} {self.section}: {self.message}"


def _section_empty(card: ModelCard, name: str) -> bool:
    value = getattr(card, name)
    if value is None:
        return True
    if isinstance(value, str):
        return not value.strip()
    if name == "caveats_recommendations":
        return not any(c.strip() for c in value)
    if isinstance(value, tuple):
        return not value
    if hasattr(value, "empty"):
        return value.empty()
    return False


def acknowledged(caveats: Sequence[str], factor: str, value: str) -> bool:
    """True if some caveat carries ``ack:all`` or ``ack:<factor>:<value>`` as a whole token."""
    tag = re.compile(r"(?<!\S)(?:" + re.escape(ACK_ALL) + "|" + re.escape(f"ack:{factor}:{value}") + r")(?!\S)")
    return any(tag.search(c) for c in caveats or ())


def validate_card(card: ModelCard, strict: bool = False) -> List[Violation]:
    """Completeness, factor coverage, provenance distinctness, acknowledged disparities.

    Unacknowledged disparities are warnings unless ``strict``.
    """
    out = []
    for name in SECTIONS:
        if _section_empty(card, name):
            out.append(Violation(ERROR, "MissingSection", name, f"section '{HEADINGS[name]}' is missing or empty"))
    qa = card.quantitative_analysis
    if qa is not None:
        listed = {f.name for f in card.factors or ()}
        used = []
        for name in [f.name for f in qa.factors] + [r.factor.name for r in qa.reports]:
            if name not in listed and name not in used:
                used.append(name)
        for name in used:
            out.append(Violation(ERROR, "UncoveredFactor", "factors", f"factor '{name}' is analysed but not listed"))
    ted = card.training_eval_data
    if ted is not None and not ted.empty() and not ted.same_data:
        if ted.training.strip() == ted.evaluation.strip():
            out.append(Violation(
                ERROR, "ProvenanceNotDistinct", "training_eval_data",
                "training and evaluation provenance are identical; set same_data to confirm",
            ))
    if qa is not None:
        level = ERROR if strict else WARNING
        for rep in qa.reports:
            metrics = [m for m in rep.flagged if rep.flagged[m]]
            if metrics and not acknowledged(card.caveats_recommendations, rep.factor.name, rep.value):
                out.append(Violation(
                    level, "UnacknowledgedDisparity", "caveats_recommendations",
                    f"{rep.factor.name}={rep.value} flagged on {', '.join(metrics)} "
                    f"without ack:{rep.factor.name}:{rep.value}",
                ))
    return out


def card_to_json(card: ModelCard) -> str:
    """Canonical card_json text: fixed key order, full float precision, trailing newline."""
    return json.dumps(card.to_dict(), indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def card_from_json(text: str) -> ModelCard:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidCard(f"card is not valid JSON: {exc}") from exc
    return ModelCard.from_dict(data)
