"""Card documents: canonical JSON, Markdown and HTML.

Markdown and HTML are emitted from one block list so both show the same
content in the same order. Numbers are fixed to four decimals and nothing
depends on the clock, host or locale.
"""
from __future__ import annotations

import html
from typing import List, Sequence, Tuple

from ..cohort import CATEGORIES
from ..errors import InvalidCard
from ..metrics import METRIC_NAMES, is_defined
from .model import HEADINGS, SECTIONS, ModelCard, card_to_json

FORMATS = ("card_json", "markdown", "html")

CATEGORY_TITLES = {
    "socio_demographic": "Socio-demographic",
    "anatomic": "Anatomic",
    "disease_dependent": "Disease-dependent",
    "instrumental": "Instrumental",
    "data_source": "Data source",
}


def chart_path(factor: str, metric: str) -> str:
    return f"charts/{factor}_{metric}.svg"


def fmt(value) -> str:
    """Four decimals, no negative zero; sentinels by name."""
    if value is None:
        return "-"
    if not is_defined(value):
        return value.value
    text = f"{value:.4f}"
    return "0.0000" if text == "-0.0000" else text


def fmt_delta(value) -> str:
    if value is None or not is_defined(value):
        return fmt(value)
    text = f"{value:+.4f}"
    return "+0.0000" if text == "-0.0000" else text


def fmt_ci(iv) -> str:
    if iv is None:
        return "-"
    if not iv.defined:
        return "undefined"
    return f"[{fmt(iv.lo)}, {fmt(iv.hi)}]"


# block kinds: ("h", level, text) ("p", text) ("ul", items) ("table", header, rows) ("links", [(label, href)])
Block = Tuple


def _blocks(card: ModelCard) -> List[Block]:
    md = card.model_details
    out: List[Block] = [("h", 1, f"Model Facts Card: {md.name}")]

    out.append(("h", 2, HEADINGS["model_details"]))
    items = [f"Name: {md.name}"]
    for label, value in (("Version", md.version), ("Date", md.date), ("Architecture", md.architecture)):
        if value:
            items.append(f"{label}: {value}")
    out.append(("ul", items))
    if md.description:
        out.append(("p", md.description))

    out.append(("h", 2, HEADINGS["intended_use"]))
    out.append(("p", card.intended_use))

    out.append(("h", 2, HEADINGS["factors"]))
    for cat in CATEGORIES:
        members = [f for f in card.factors if f.category == cat]
        if not members:
            continue
        out.append(("h", 3, CATEGORY_TITLES[cat]))
        lines = []
        for f in members:
            line = f"{f.name} ({f.kind})"
            if f.bin_edges:
                line += ", bin edges " + ", ".join(format(e, "g") for e in f.bin_edges)
            lines.append(line)
        out.append(("ul", lines))

    desc = card.metrics_description
    out.append(("h", 2, HEADINGS["metrics_description"]))
    if desc.text:
        out.append(("p", desc.text))
    settings = [f"Metrics reported: {', '.join(desc.metrics)}"]
    if desc.threshold is not None:
        settings.append(f"Decision threshold: score >= {desc.threshold:g}")
    if desc.bootstrap:
        b = desc.bootstrap
        settings.append(
            f"Bootstrap: {b['iterations']} iterations, {b['ci_level'] * 100:g}% "
            f"{b.get('method', 'percentile')} intervals, seed {b['master_seed']}, "
            f"degenerate replicates {b['degenerate_policy']}"
        )
    if desc.min_subgroup_n is not None:
        settings.append(f"Minimum subgroup size: {desc.min_subgroup_n}")
    if desc.flag_policy:
        settings.append(f"Flag policy: {desc.flag_policy}")
    out.append(("ul", settings))

    ted = card.training_eval_data
    out.append(("h", 2, HEADINGS["training_eval_data"]))
    items = [f"Training: {ted.training}", f"Evaluation: {ted.evaluation}"]
    if ted.same_data:
        items.append("Training and evaluation data are the same (declared).")
    qa = card.quantitative_analysis
    summary = qa.provenance.summary()
    if summary:
        items.append(f"Audited cohort: {summary}")
    out.append(("ul", items))

    out.append(("h", 2, HEADINGS["caveats_recommendations"]))
    out.append(("ul", list(card.caveats_recommendations)))

    out.append(("h", 2, HEADINGS["quantitative_analysis"]))
    out.extend(_quantitative_blocks(qa))
    return out


def _quantitative_blocks(qa) -> List[Block]:
    metrics = [m for m in METRIC_NAMES if m in qa.config.metrics]
    level = qa.config.bootstrap.ci_level * 100
    out: List[Block] = [("h", 3, "Overall")]
    rows = []
    for m in metrics:
        rows.append([m, fmt(qa.overall.get(m)), fmt_ci(qa.overall_ci.get(m))])
    out.append(("table", ["Metric", "Value", f"{level:g}% CI"], rows))
    out.append(("p", f"n = {qa.overall.n} ({qa.overall.n_pos} positive, {qa.overall.n_neg} negative)"))

    flagged = qa.flagged()
    out.append(("h", 3, "Flagged disparities"))
    if flagged:
        items = []
        for rep, m in flagged:
            ci = rep.delta_ci.get(m) if rep.delta_ci else None
            items.append(f"{rep.factor.name} = {rep.value}: Δ{m} {fmt_delta(rep.delta[m])}, CI {fmt_ci(ci)}")
        out.append(("ul", items))
    else:
        out.append(("p", "None."))

    header = ["Value", "n"] + [f"{m} / Δ{m} [CI of Δ]" for m in metrics] + ["Flags"]
    for f in qa.factors:
        reports = qa.reports_for(f.name)
        if not reports:
            continue
        out.append(("h", 3, f"Factor: {f.name} ({CATEGORY_TITLES[f.category]})"))
        rows = []
        for rep in reports:
            row = [rep.value, str(rep.n)]
            for m in metrics:
                ci = rep.delta_ci.get(m) if rep.delta_ci else None
                row.append(f"{fmt(rep.metrics.get(m))} / {fmt_delta(rep.delta.get(m))} {fmt_ci(ci)}")
            if rep.suppressed:
                row.append(f"suppressed (n < {qa.config.min_subgroup_n})")
            else:
                row.append(", ".join(m for m in metrics if rep.flagged.get(m)) or "-")
            rows.append(row)
        out.append(("table", header, rows))
        out.append(("links", [(m, chart_path(f.name, m)) for m in metrics if m in qa.overall_ci]))

    if qa.pathology_slices:
        out.append(("h", 3, "Sensitivity by finding"))
        rows = [[p.name, str(p.n), fmt(p.sensitivity), fmt_ci(p.ci), str(p.excluded)] for p in qa.pathology_slices]
        out.append(("table", ["Finding", "n", "sensitivity", f"{level:g}% CI", "excluded (y_true=0)"], rows))
    return out


def _md_cell(text: str) -> str:
    return text.replace("|", "\\|")


def _markdown(blocks: Sequence[Block]) -> str:
    parts = []
    for b in blocks:
        kind = b[0]
        if kind == "h":
            parts.append("#" * b[1] + " " + b[2])
        elif kind == "p":
            parts.append(b[1])
        elif kind == "ul":
            parts.append("\n".join(f"- {item}" for item in b[1]))
        elif kind == "table":
            lines = ["| " + " | ".join(_md_cell(h) for h in b[1]) + " |",
                     "|" + "|".join("---" for _ in b[1]) + "|"]
            lines += ["| " + " | ".join(_md_cell(c) for c in row) + " |" for row in b[2]]
            parts.append("\n".join(lines))
        elif kind == "links":
            parts.append("Charts: " + ", ".join(f"[{label}]({href})" for label, href in b[1]))
    return "\n\n".join(parts) + "\n"


def _html(blocks: Sequence[Block], title: str) -> str:
    e = html.escape
    body = []
    for b in blocks:
        kind = b[0]
        if kind == "h":
            body.append(f"<h{b[1]}>{e(b[2])}</h{b[1]}>")
        elif kind == "p":
            body.append(f"<p>{e(b[1])}</p>")
        elif kind == "ul":
            body.append("<ul>\n" + "\n".join(f"<li>{e(i)}</li>" for i in b[1]) + "\n</ul>")
        elif kind == "table":
            head = "".join(f"<th>{e(h)}</th>" for h in b[1])
            rows = "\n".join("<tr>" + "".join(f"<td>{e(c)}</td>" for c in row) + "</tr>" for row in b[2])
            body.append(f"<table>\n<thead><tr>{head}</tr></thead>\n<tbody>\n{rows}\n</tbody>\n</table>")
        elif kind == "links":
            imgs = "\n".join(
                f'<figure><img src="{e(href)}" alt="{e(label)}"><figcaption>{e(label)}</figcaption></figure>'
                for label, href in b[1]
            )
            body.append(f'<div class="charts">\n{imgs}\n</div>')
    return (
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n"
        f"<title>{e(title)}</title>\n"
        "<style>table{border-collapse:collapse}td,th{border:1px solid #999;padding:2px 6px}"
        "figure{display:inline-block;margin:4px}img{max-width:480px}</style>\n"
        "</head>\n<body>\n" + "\n".join(body) + "\n</body>\n</html>\n"
    )


def render(card: ModelCard, fmt_name: str = "markdown") -> bytes:
    """Render ``card`` as ``card_json``, ``markdown`` or ``html`` (UTF-8 bytes).

    Raises:
        InvalidCard: a section is missing, or the format is unknown.
    """
    if fmt_name not in FORMATS:
        raise InvalidCard(f"unknown format {fmt_name!r}; expected one of {FORMATS}")
    missing = [s for s in SECTIONS if getattr(card, s) is None]
    if missing:
        raise InvalidCard(f"cannot render card without sections {missing}")
    if fmt_name == "card_json":
        return card_to_json(card).encode("utf-8")
    blocks = _blocks(card)
    if fmt_name == "markdown":
        return _markdown(blocks).encode("utf-8")
    return _html(blocks, blocks[0][2]).encode("utf-8")
