"""Command-line entry point.

Exit codes: 0 success, 1 validation violations, 2 usage error, 3 data error.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence

import yaml

from .audit import AuditConfig, FlagPolicy, run_audit
from .bootstrap import BootstrapConfig
from .cardgen import (
    FORMATS,
    ChartSpec,
    build_card,
    card_from_json,
    chart_path,
    chart_spec,
    render,
    render_chart,
    validate_card,
)
from .cardgen.model import ERROR
from .cohort import ingest_cohort, write_cohort
from .errors import CardforgeError, DataError, MissingSection
from .metrics import METRIC_NAMES, encode_value
from .synth import load_synth_spec, power_scan, synth_cohort

logger = logging.getLogger("cardforge")

EXIT_OK, EXIT_VIOLATIONS, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3

FILE_NAMES = {"card_json": "card.json", "markdown": "card.md", "html": "card.html"}


class UsageError(Exception):
    pass


def bundled(name: str) -> Path:
    return Path(str(resources.files("cardforge") / "data" / name))


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file not found: {path}")
    return p


def _formats(text: str) -> List[str]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    bad = [t for t in items if t not in FORMATS]
    if bad or not items:
        raise argparse.ArgumentTypeError(f"formats must be a comma list from {', '.join(FORMATS)}")
    return items


def _floats(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def _add_bootstrap_flags(p):
    p.add_argument("--bootstrap-n", type=int, default=10_000, help="bootstrap iterations (default 10000)")
    p.add_argument("--ci-level", type=float, default=0.95, help="confidence level (default 0.95)")
    p.add_argument("--seed", type=int, default=0, help="master seed for all randomness (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cardforge", description="Subgroup bias audits and model facts cards.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("audit", help="audit a cohort and write the card, charts and subgroup table")
    p.add_argument("--cohort", required=True, help="prediction table (CSV)")
    p.add_argument("--manifest", required=True, help="factor manifest (YAML)")
    p.add_argument("--card-meta", required=True, help="card metadata with the prose sections (YAML)")
    p.add_argument("--threshold", type=float, default=0.5, help="decision threshold, score >= t is positive")
    _add_bootstrap_flags(p)
    p.add_argument("--min-subgroup", type=int, default=30, help="suppress subgroups smaller than this")
    p.add_argument("--metrics", default=",".join(METRIC_NAMES), help="comma list of metrics to report")
    p.add_argument("--flag-policy", default="ci_excludes_zero", help="ci_excludes_zero or abs_gap_over:TAU")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", type=_formats, default=["card_json", "markdown"],
                   help="comma list of card_json, markdown, html (card.json is always written)")
    p.add_argument("--strict", action="store_true", help="unacknowledged disparities are errors (exit 1)")

    p = sub.add_parser("render", help="render a card.json as markdown, html or canonical json")
    p.add_argument("--card", required=True, help="card.json path")
    p.add_argument("--format", choices=FORMATS, default="markdown", help="output format")
    p.add_argument("--out", help="output file (default stdout)")

    p = sub.add_parser("validate", help="check a card.json against the card rules")
    p.add_argument("--card", required=True, help="card.json path")
    p.add_argument("--strict", action="store_true", help="unacknowledged disparities are errors")

    p = sub.add_parser("chart", help="render one subgroup chart as SVG")
    p.add_argument("--card", help="card.json path (with --factor and --metric)")
    p.add_argument("--spec", help="chart spec (JSON or YAML) instead of a card")
    p.add_argument("--factor", help="factor name")
    p.add_argument("--metric", choices=METRIC_NAMES, help="metric name")
    p.add_argument("--mode", choices=("delta", "raw"), default="delta", help="plot ΔM or the raw metric")
    p.add_argument("--out", required=True, help="output SVG path")

    p = sub.add_parser("synth", help="generate a synthetic cohort (bundled demo spec by default)")
    p.add_argument("--spec", help="synth spec (YAML); default is the bundled demo")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.add_argument("--out", required=True, help="output directory for cohort.csv and manifest.yaml")

    p = sub.add_parser("power", help="detection rate of an injected gap across gap and block sizes")
    p.add_argument("--spec", help="synth spec template (YAML); default is the bundled demo")
    p.add_argument("--gaps", type=_floats, required=True, help="comma list of gap sizes")
    p.add_argument("--sizes", type=_ints, required=True, help="comma list of records per block")
    p.add_argument("--trials", type=int, default=100, help="trials per cell (default 100)")
    p.add_argument("--metric", choices=("sensitivity", "specificity"), default="sensitivity",
                   help="metric the gap is injected into")
    p.add_argument("--injected", type=int, default=0, help="index of the injected block (default 0)")
    p.add_argument("--reference", type=int, default=1, help="index of the reference block (default 1)")
    p.add_argument("--min-subgroup", type=int, default=30, help="suppress subgroups smaller than this")
    _add_bootstrap_flags(p)
    p.add_argument("--out", help="output CSV (default stdout)")
    return parser


def subgroup_rows(audit) -> List[list]:
    """Delimited per-subgroup table: point estimates, ΔM, both intervals and flags."""
    metrics = [m for m in audit.config.metrics if m in audit.overall_ci]
    header = ["factor", "category", "value", "n", "suppressed"]
    for m in metrics:
        header += [m, f"{m}_lo", f"{m}_hi", f"delta_{m}", f"delta_{m}_lo", f"delta_{m}_hi", f"flag_{m}"]
    rows = [header]

    def num(v):
        v = encode_value(v)
        return v if isinstance(v, str) else repr(float(v))

    for rep in audit.reports:
        row = [rep.factor.name, rep.factor.category, rep.value, rep.n, int(rep.suppressed)]
        for m in metrics:
            sci = rep.subgroup_ci.get(m) if rep.subgroup_ci else None
            dci = rep.delta_ci.get(m) if rep.delta_ci else None
            row += [num(rep.metrics.get(m))]
            row += [num(sci.lo), num(sci.hi)] if sci else ["", ""]
            row += [num(rep.delta[m])]
            row += [num(dci.lo), num(dci.hi)] if dci else ["", ""]
            row += [int(rep.flagged.get(m, False))]
        rows.append(row)
    return rows


def _csv_bytes(rows) -> bytes:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue().encode("utf-8")


def _load_yaml(path: Path):
    try:
        return yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise DataError(f"{path}: not well-formed YAML: {exc}") from None


def cmd_audit(args) -> int:
    cohort_path, manifest_path, meta_path = (_existing(p) for p in (args.cohort, args.manifest, args.card_meta))
    try:
        config = AuditConfig(
            threshold=args.threshold,
            min_subgroup_n=args.min_subgroup,
            metrics=tuple(m.strip() for m in args.metrics.split(",") if m.strip()),
            bootstrap=BootstrapConfig(iterations=args.bootstrap_n, ci_level=args.ci_level, master_seed=args.seed),
            flag_policy=FlagPolicy.parse(args.flag_policy),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cohort = ingest_cohort(cohort_path, manifest_path)
    meta = _load_yaml(meta_path)
    result = run_audit(cohort, config)
    try:
        card = build_card(meta, result)
    except MissingSection as exc:
        raise DataError(f"{meta_path}: {exc}") from None

    out = Path(args.out)
    formats = ["card_json"] + [f for f in args.format if f != "card_json"]
    for fmt in formats:
        _write(out / FILE_NAMES[fmt], render(card, fmt))
    for f in result.factors:
        if not result.reports_for(f.name):
            continue
        for m in config.metrics:
            if m in result.overall_ci:
                _write(out / chart_path(f.name, m), render_chart(chart_spec(result, f.name, m)))
    _write(out / "subgroups.csv", _csv_bytes(subgroup_rows(result)))

    for rep, m in result.flagged():
        ci = rep.delta_ci[m]
        print(f"FLAG {rep.factor.name}={rep.value} {m} delta={rep.delta[m]:+.4f} "
              f"ci=[{ci.lo:+.4f}, {ci.hi:+.4f}] n={rep.n}")
    violations = validate_card(card, strict=args.strict)
    for v in violations:
        print(v, file=sys.stderr)
    return EXIT_VIOLATIONS if any(v.level == ERROR for v in violations) else EXIT_OK


def _read_card(path: str):
    text = _existing(path).read_text(encoding="utf-8")
    return card_from_json(text)


def cmd_render(args) -> int:
    data = render(_read_card(args.card), args.format)
    if args.out:
        _write(Path(args.out), data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    return EXIT_OK


def cmd_validate(args) -> int:
    violations = validate_card(_read_card(args.card), strict=args.strict)
    for v in violations:
        print(v)
    return EXIT_VIOLATIONS if any(v.level == ERROR for v in violations) else EXIT_OK


def cmd_chart(args) -> int:
    if bool(args.card) == bool(args.spec):
        raise UsageError("give exactly one of --card or --spec")
    if args.spec:
        data = _load_yaml(_existing(args.spec))  # YAML also reads JSON
        try:
            spec = ChartSpec.from_dict(data)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{args.spec}: malformed chart spec: {exc!r}") from None
    else:
        if not (args.factor and args.metric):
            raise UsageError("--card needs --factor and --metric")
        card = _read_card(args.card)
        qa = card.quantitative_analysis
        if qa is None or not qa.reports_for(args.factor):
            raise DataError(f"card has no subgroups for factor {args.factor!r}")
        spec = chart_spec(qa, args.factor, args.metric, mode=args.mode)
    _write(Path(args.out), render_chart(spec))
    return EXIT_OK


def _spec_or_demo(path: Optional[str]):
    return load_synth_spec(_existing(path) if path else bundled("demo_synth.yaml"))


def cmd_synth(args) -> int:
    spec = _spec_or_demo(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    cohort = synth_cohort(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_cohort(cohort, out / "cohort.csv", out / "manifest.yaml", spec.manifest.finding_count_from)
    if not args.spec:
        _write(out / "card_meta.yaml", bundled("demo_card_meta.yaml").read_bytes())
    logger.info("wrote %d records to %s", len(cohort), out)
    return EXIT_OK


def cmd_power(args) -> int:
    spec = replace(_spec_or_demo(args.spec), seed=args.seed)
    try:
        config = AuditConfig(
            min_subgroup_n=args.min_subgroup,
            bootstrap=BootstrapConfig(iterations=args.bootstrap_n, ci_level=args.ci_level, master_seed=args.seed),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    rows = power_scan(spec, args.gaps, args.sizes, args.trials, metric=args.metric,
                      injected=args.injected, reference=args.reference, audit_config=config)
    table = [["gap", "n_per_block", "trials", "detected", "rate"]]
    table += [[repr(r.gap), r.n_per_block, r.trials, r.detected, repr(r.rate)] for r in rows]
    data = _csv_bytes(table)
    if args.out:
        _write(Path(args.out), data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    return EXIT_OK


COMMANDS = {
    "audit": cmd_audit,
    "render": cmd_render,
    "validate": cmd_validate,
    "chart": cmd_chart,
    "synth": cmd_synth,
    "power": cmd_power,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"cardforge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CardforgeError) as exc:
        print(f"cardforge {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
