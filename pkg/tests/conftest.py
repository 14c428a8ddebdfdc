import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

GOLDEN = Path(__file__).parent / "golden"
ACCEPTANCE_LINES = []


def record_acceptance(number, passed, detail):
    line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def demo_dir(tmp_path_factory):
    """Bundled demo cohort, manifest and card metadata written to disk."""
    from cardforge.cli import main

    out = tmp_path_factory.mktemp("demo")
    assert main(["synth", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="session")
def demo_audit_dir(demo_dir, tmp_path_factory):
    from cardforge.cli import main

    out = tmp_path_factory.mktemp("demo_audit")
    code = main([
        "audit", "--cohort", str(demo_dir / "cohort.csv"), "--manifest", str(demo_dir / "manifest.yaml"),
        "--card-meta", str(demo_dir / "card_meta.yaml"), "--out", str(out),
        "--format", "card_json,markdown,html",
    ])
    assert code == 0
    return out


@pytest.fixture
def update_golden():
    return os.environ.get("CARDFORGE_UPDATE_GOLDEN") == "1"
