import json
from dataclasses import replace

import pytest
from matplotlib.figure import Figure

from cardforge.audit import AuditConfig, run_audit
from cardforge.bootstrap import BootstrapConfig
from cardforge.cardgen import (
    HEADINGS,
    SECTIONS,
    Bar,
    ChartSpec,
    ModelCard,
    build_card,
    card_from_json,
    card_to_json,
    chart_spec,
    draw_chart,
    render,
    render_chart,
    validate_card,
)
from cardforge.cardgen.model import acknowledged
from cardforge.cohort import CohortTable, FactorDescriptor, PredictionRecord
from cardforge.errors import EmptySpec, InvalidCard, MissingSection, UnsupportedSchema
from conftest import GOLDEN

DEVICE = FactorDescriptor("device", "instrumental")
SEX = FactorDescriptor("sex", "socio_demographic")

META = {
    "model_details": {"name": "Toy", "version": "0.1", "date": "2024", "architecture": "logistic",
                      "description": "toy model"},
    "intended_use": "Testing.",
    "metrics_description": "Confusion-matrix metrics at 0.5.",
    "training_eval_data": {"training": "set A", "evaluation": "set B"},
    "caveats_recommendations": ["Small cohort."],
}


@pytest.fixture(scope="module")
def audit():
    records = []
    for i in range(240):
        dev = "good" if i % 2 else "bad"
        y = (i // 2) % 2
        s = (0.9 if y else 0.1) if dev == "good" else (0.3 if (i // 4) % 3 else 0.8)
        records.append(PredictionRecord(f"r{i:03d}", y, s, factors={"device": dev, "sex": "FM"[(i // 3) % 2]}))
    cohort = CohortTable(tuple(records), (SEX, DEVICE))
    return run_audit(cohort, AuditConfig(bootstrap=BootstrapConfig(iterations=300, master_seed=2)))


@pytest.fixture(scope="module")
def card(audit):
    return build_card(META, audit)


def check_golden(name, data, update):
    path = GOLDEN / name
    if update:
        path.parent.mkdir(exist_ok=True)
        path.write_bytes(data)
    assert path.exists(), f"golden {name} missing; rerun with CARDFORGE_UPDATE_GOLDEN=1"
    assert data == path.read_bytes(), f"output differs from golden {name}"


def test_seven_sections_present(card):
    assert all(getattr(card, s) is not None for s in SECTIONS)
    assert len(SECTIONS) == 7
    assert validate_card(card) == [v for v in validate_card(card) if v.code == "UnacknowledgedDisparity"]


def test_factor_section_follows_manifest(card):
    # sorted by category taxonomy, not by manifest order
    assert [f.name for f in card.factors] == ["sex", "device"]


def test_missing_caveats(audit):
    meta = {k: v for k, v in META.items() if k != "caveats_recommendations"}
    with pytest.raises(MissingSection) as err:
        build_card(meta, audit)
    assert err.value.section == "caveats_recommendations"


@pytest.mark.parametrize("section", ["intended_use", "model_details", "training_eval_data", "metrics_description"])
def test_empty_prose_section(audit, section):
    with pytest.raises(MissingSection):
        build_card({**META, section: ""}, audit)


def test_validate_missing_section_message(card):
    broken = replace(card, caveats_recommendations=())
    errors = [str(v) for v in validate_card(broken) if v.level == "ERROR"]
    assert any(e.startswith("ERROR MissingSection caveats_recommendations:") for e in errors)


def test_validate_uncovered_factor(card):
    broken = replace(card, factors=tuple(f for f in card.factors if f.name != "device"))
    codes = [(v.code, v.section) for v in validate_card(broken)]
    assert ("UncoveredFactor", "factors") in codes


def test_validate_identical_provenance(card):
    same = replace(card, training_eval_data=replace(card.training_eval_data, evaluation="set A"))
    assert "ProvenanceNotDistinct" in [v.code for v in validate_card(same)]
    declared = replace(same, training_eval_data=replace(same.training_eval_data, same_data=True))
    assert "ProvenanceNotDistinct" not in [v.code for v in validate_card(declared)]


def test_unacknowledged_disparity_levels(card):
    assert card.quantitative_analysis.flagged(), "fixture must contain a flagged subgroup"
    soft = [v for v in validate_card(card) if v.code == "UnacknowledgedDisparity"]
    hard = [v for v in validate_card(card, strict=True) if v.code == "UnacknowledgedDisparity"]
    assert soft and all(v.level == "WARNING" for v in soft)
    assert hard and all(v.level == "ERROR" for v in hard)


def test_acknowledgement_clears_disparity(card):
    flagged = {(r.factor.name, r.value) for r, _ in card.quantitative_analysis.flagged()}
    tokens = " ".join(f"ack:{f}:{v}" for f, v in sorted(flagged))
    acked = replace(card, caveats_recommendations=card.caveats_recommendations + (tokens + " Known gap.",))
    assert validate_card(acked, strict=True) == []


@pytest.mark.parametrize("text,hit", [
    ("ack:device:GE", True),
    ("see ack:device:GE here", True),
    ("ack:device:GE_2", False),
    ("xack:device:GE", False),
    ("ack:all", True),
    ("ack:device", False),
])
def test_ack_token_matching(text, hit):
    assert acknowledged([text], "device", "GE") is hit


def test_json_round_trip(card):
    text = card_to_json(card)
    again = card_from_json(text)
    assert again == card
    assert card_to_json(again) == text
    assert list(json.loads(text))[0] == "schema_version"


def test_newer_schema_rejected(card):
    data = json.loads(card_to_json(card))
    data["schema_version"] = 99
    with pytest.raises(UnsupportedSchema):
        ModelCard.from_dict(data)


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("schema_version"),
    lambda d: d.update(extra=1),
    lambda d: d["factors"].update(weather=[]),
    lambda d: d["quantitative_analysis"].pop("reports"),
])
def test_malformed_cards(card, mutate):
    data = json.loads(card_to_json(card))
    mutate(data)
    with pytest.raises(InvalidCard):
        ModelCard.from_dict(data)


def test_parsed_card_may_lack_sections(card):
    data = json.loads(card_to_json(card))
    del data["intended_use"]
    parsed = ModelCard.from_dict(data)
    assert parsed.intended_use is None
    assert [v.section for v in validate_card(parsed) if v.code == "MissingSection"] == ["intended_use"]
    with pytest.raises(InvalidCard):
        render(parsed, "markdown")


def test_heading_order(card):
    text = render(card, "markdown").decode()
    h2 = [line[3:] for line in text.splitlines() if line.startswith("## ")]
    assert h2 == [HEADINGS[s] for s in SECTIONS]
    html = render(card, "html").decode()
    positions = [html.index(f"<h2>{HEADINGS[s].replace('&', '&amp;')}</h2>") for s in SECTIONS]
    assert positions == sorted(positions)


@pytest.mark.parametrize("fmt", ["card_json", "markdown", "html"])
def test_render_deterministic(card, fmt):
    assert render(card, fmt) == render(card_from_json(card_to_json(card)), fmt)


def test_render_unknown_format(card):
    with pytest.raises(InvalidCard):
        render(card, "pdf")


def test_no_negative_zero(card):
    text = render(card, "markdown").decode()
    assert "-0.0000" not in text


def test_chart_spec_matches_report(audit):
    spec = chart_spec(audit, "device", "sensitivity")
    reports = audit.reports_for("device")
    assert [b.value for b in spec.bars] == [r.value for r in reports]
    for bar, rep in zip(spec.bars, reports):
        assert bar.estimate == rep.delta["sensitivity"]
        assert (bar.lo, bar.hi) == (rep.delta_ci["sensitivity"].lo, rep.delta_ci["sensitivity"].hi)
        assert bar.flagged == rep.flagged["sensitivity"]
    raw = chart_spec(audit, "device", "sensitivity", mode="raw")
    assert raw.reference == audit.overall.sensitivity
    assert [b.value for b in chart_spec(audit, "device", "sensitivity", hide=["bad"]).bars] == ["good"]


def test_chart_spec_round_trip(audit):
    spec = chart_spec(audit, "sex", "auc")
    assert ChartSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def test_suppressed_bar_has_no_whiskers():
    spec = ChartSpec("device", "sensitivity", (
        Bar("A", -0.1, -0.2, 0.0, 100),
        Bar("B", 0.2, None, None, 5, suppressed=True),
        Bar("C", 0.05, -0.01, 0.1, 80, flagged=True),
    ))
    ax = Figure().add_subplot()
    draw_chart(ax, spec)
    assert len([c for c in ax.containers if type(c).__name__ == "ErrorbarContainer"]) == 2
    # report order reads top to bottom
    placed = dict(zip([t.get_text() for t in ax.get_yticklabels()], ax.get_yticks()))
    assert placed["A"] > placed["B"] > placed["C"]
    lo, hi = ax.get_xlim()
    assert lo == -hi


def test_empty_chart_spec():
    with pytest.raises(EmptySpec):
        render_chart(ChartSpec("device", "sensitivity", ()))


def test_svg_deterministic(audit):
    spec = chart_spec(audit, "device", "sensitivity")
    a = render_chart(spec)
    assert a == render_chart(ChartSpec.from_dict(spec.to_dict()))
    assert a.startswith(b"<?xml")
    assert b"<dc:date>" not in a


def test_one_bar_svg_golden(update_golden):
    spec = ChartSpec("device", "sensitivity", (Bar("GE_Type_1", -0.115, -0.14, -0.09, 5000, flagged=True),))
    check_golden("one_bar.svg", render_chart(spec), update_golden)


def test_demo_markdown_golden(demo_audit_dir, update_golden):
    check_golden("demo_card.md", (demo_audit_dir / "card.md").read_bytes(), update_golden)
