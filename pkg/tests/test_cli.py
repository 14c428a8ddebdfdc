import hashlib
import json
import re

import pytest

from cardforge.cli import build_parser, main
from conftest import GOLDEN


def sub_parsers():
    parser = build_parser()
    action = next(a for a in parser._actions if a.dest == "command")
    return action.choices


def test_demo_audit_flags_device_gap(demo_dir, tmp_path, capsys):
    code = main(["audit", "--cohort", str(demo_dir / "cohort.csv"), "--manifest", str(demo_dir / "manifest.yaml"),
                 "--card-meta", str(demo_dir / "card_meta.yaml"), "--out", str(tmp_path), "--bootstrap-n", "500"])
    out = capsys.readouterr().out
    assert code == 0
    assert "FLAG device=GE_Type_1 sensitivity" in out
    card = json.loads((tmp_path / "card.json").read_text())
    flagged = [r for r in card["quantitative_analysis"]["reports"]
               if r["factor"] == "device" and r["flagged"]["sensitivity"]]
    assert flagged
    assert (tmp_path / "card.md").exists() and not (tmp_path / "card.html").exists()
    assert (tmp_path / "charts" / "device_sensitivity.svg").exists()
    assert (tmp_path / "subgroups.csv").read_text().startswith("factor,")


def test_missing_manifest_is_usage_error(demo_dir, tmp_path, capsys):
    missing = tmp_path / "nope.yaml"
    code = main(["audit", "--cohort", str(demo_dir / "cohort.csv"), "--manifest", str(missing),
                 "--card-meta", str(demo_dir / "card_meta.yaml"), "--out", str(tmp_path)])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_strict_unacknowledged_exits_1(demo_dir, tmp_path, capsys):
    meta = (demo_dir / "card_meta.yaml").read_text().replace("ack:device:GE_Type_1", "device GE")
    (tmp_path / "meta.yaml").write_text(meta)
    args = ["audit", "--cohort", str(demo_dir / "cohort.csv"), "--manifest", str(demo_dir / "manifest.yaml"),
            "--card-meta", str(tmp_path / "meta.yaml"), "--out", str(tmp_path / "o"), "--bootstrap-n", "500"]
    assert main(args) == 0
    assert "WARNING UnacknowledgedDisparity" in capsys.readouterr().err
    assert main(args + ["--strict"]) == 1
    assert "ERROR UnacknowledgedDisparity caveats_recommendations: device=GE_Type_1" in capsys.readouterr().err


def test_ingestion_failure_exits_3(demo_dir, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text((demo_dir / "cohort.csv").read_text().replace(",0.", ",1.", 1))
    code = main(["audit", "--cohort", str(bad), "--manifest", str(demo_dir / "manifest.yaml"),
                 "--card-meta", str(demo_dir / "card_meta.yaml"), "--out", str(tmp_path)])
    assert code == 3
    assert "ValueOutOfRange" in capsys.readouterr().err


def test_validate_clean_card(demo_audit_dir, capsys):
    assert main(["validate", "--card", str(demo_audit_dir / "card.json")]) == 0
    assert capsys.readouterr().out == ""


def test_validate_missing_caveats(demo_audit_dir, tmp_path, capsys):
    data = json.loads((demo_audit_dir / "card.json").read_text())
    del data["caveats_recommendations"]
    (tmp_path / "card.json").write_text(json.dumps(data))
    assert main(["validate", "--card", str(tmp_path / "card.json")]) == 1
    lines = capsys.readouterr().out.splitlines()
    assert any(line.startswith("ERROR MissingSection caveats_recommendations: ") for line in lines)


def test_validate_newer_schema(demo_audit_dir, tmp_path, capsys):
    data = json.loads((demo_audit_dir / "card.json").read_text())
    data["schema_version"] = 2
    (tmp_path / "card.json").write_text(json.dumps(data))
    assert main(["validate", "--card", str(tmp_path / "card.json")]) == 3
    assert "UnsupportedSchema" in capsys.readouterr().err


def test_validate_unparseable(tmp_path):
    (tmp_path / "card.json").write_text("{not json")
    assert main(["validate", "--card", str(tmp_path / "card.json")]) == 3


def test_render_matches_golden(demo_audit_dir, tmp_path):
    out = tmp_path / "card.md"
    assert main(["render", "--card", str(demo_audit_dir / "card.json"), "--format", "markdown",
                 "--out", str(out)]) == 0
    assert out.read_bytes() == (GOLDEN / "demo_card.md").read_bytes()


def test_render_json_is_canonical(demo_audit_dir, tmp_path):
    out = tmp_path / "card.json"
    assert main(["render", "--card", str(demo_audit_dir / "card.json"), "--format", "card_json",
                 "--out", str(out)]) == 0
    assert out.read_bytes() == (demo_audit_dir / "card.json").read_bytes()


def test_synth_reproduces_golden_hash(tmp_path, update_golden):
    assert main(["synth", "--out", str(tmp_path)]) == 0
    digest = hashlib.sha256((tmp_path / "cohort.csv").read_bytes()).hexdigest() + "\n"
    path = GOLDEN / "demo_cohort.sha256"
    if update_golden:
        path.write_text(digest)
    assert digest == path.read_text()


def test_chart_one_bar_spec_matches_golden(tmp_path):
    spec = {"factor": "device", "metric": "sensitivity", "mode": "delta", "reference": None,
            "bars": [{"value": "GE_Type_1", "estimate": -0.115, "lo": -0.14, "hi": -0.09, "n": 5000,
                      "suppressed": False, "flagged": True}]}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    assert main(["chart", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / "c.svg")]) == 0
    assert (tmp_path / "c.svg").read_bytes() == (GOLDEN / "one_bar.svg").read_bytes()


def test_chart_from_card_matches_audit_chart(demo_audit_dir, tmp_path):
    out = tmp_path / "c.svg"
    assert main(["chart", "--card", str(demo_audit_dir / "card.json"), "--factor", "device",
                 "--metric", "sensitivity", "--out", str(out)]) == 0
    assert out.read_bytes() == (demo_audit_dir / "charts" / "device_sensitivity.svg").read_bytes()


def test_chart_needs_one_source(tmp_path):
    assert main(["chart", "--out", str(tmp_path / "c.svg")]) == 2


def test_power_csv(tmp_path):
    spec = tmp_path / "spec.yaml"
    spec.write_text(
        "seed: 5\nscore_model: hard_labels\n"
        "factors: [{name: device, category: instrumental, kind: categorical}]\n"
        "blocks:\n"
        "  - {name: a, n: 50, prevalence: 0.5, sensitivity: 0.8, specificity: 0.8, factors: {device: A}}\n"
        "  - {name: b, n: 50, prevalence: 0.5, sensitivity: 0.8, specificity: 0.8, factors: {device: B}}\n"
    )
    out = tmp_path / "power.csv"
    args = ["power", "--spec", str(spec), "--gaps", "0,0.3", "--sizes", "20,200", "--trials", "3",
            "--bootstrap-n", "200", "--out", str(out)]
    assert main(args) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "gap,n_per_block,trials,detected,rate"
    assert len(lines) == 5
    assert lines[1].startswith("0.0,20,3,0,")
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first


@pytest.mark.parametrize("argv", [
    [],
    ["audit"],
    ["synth", "--out", "x", "--colour", "red"],
    ["render", "--card", "c.json", "--format", "pdf"],
    ["frobnicate"],
])
def test_usage_errors(argv):
    assert main(argv) == 2


@pytest.mark.parametrize("command", ["audit", "render", "validate", "chart", "synth", "power"])
def test_help_lists_every_flag(command, capsys):
    assert main([command, "--help"]) == 0
    documented = set(re.findall(r"(?<![\w-])(--[a-z][a-z-]*)", capsys.readouterr().out))
    accepted = {s for a in sub_parsers()[command]._actions for s in a.option_strings if s.startswith("--")}
    assert documented == accepted


def test_audit_accepts_listed_flags():
    accepted = {s for a in sub_parsers()["audit"]._actions for s in a.option_strings}
    for flag in ("--cohort", "--manifest", "--card-meta", "--threshold", "--bootstrap-n", "--ci-level",
                 "--seed", "--min-subgroup", "--out", "--format", "--strict"):
        assert flag in accepted
