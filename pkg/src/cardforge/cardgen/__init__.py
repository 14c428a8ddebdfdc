"""Model facts card: data model, validation, document and chart rendering."""
from .model import (
    HEADINGS,
    SCHEMA_VERSION,
    SECTIONS,
    ModelCard,
    ModelDetails,
    MetricsDescription,
    TrainEvalData,
    Violation,
    build_card,
    card_from_json,
    card_to_json,
    validate_card,
)
from .plotting import Bar, ChartSpec, chart_spec, draw_chart, render_chart
from .render import FORMATS, chart_path, render

__all__ = [
    "HEADINGS", "SCHEMA_VERSION", "SECTIONS", "ModelCard", "ModelDetails", "MetricsDescription",
    "TrainEvalData", "Violation", "build_card", "card_from_json", "card_to_json", "validate_card",
    "Bar", "ChartSpec", "chart_spec", "draw_chart", "render_chart", "FORMATS", "chart_path", "render",
]
