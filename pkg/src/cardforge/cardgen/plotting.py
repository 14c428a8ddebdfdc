"""Horizontal subgroup bar charts with CI whiskers, rendered to SVG.

Rendering goes through the object-oriented Figure API (no pyplot state) with
an rc context that pins everything that would otherwise leak into the markup:
the SVG id salt, text-as-text fonts and the Date metadata.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
from matplotlib.backends.backend_svg import FigureCanvasSVG  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from ..errors import EmptySpec  # noqa: E402
from ..metrics import Value, decode_value, encode_value, is_defined  # noqa: E402

MODES = ("delta", "raw")

STYLE = {
    "svg.hashsalt": "cardforge",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "path.simplify": False,
}

BAR_COLOR = "#4c72b0"
FLAG_COLOR = "#c44e52"
SUPPRESSED_COLOR = "#bbbbbb"


@dataclass(frozen=True)
class Bar:
    value: str
    estimate: Value
    lo: Optional[float] = None
    hi: Optional[float] = None
    n: int = 0
    suppressed: bool = False
    flagged: bool = False

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "estimate": encode_value(self.estimate),
            "lo": self.lo,
            "hi": self.hi,
            "n": self.n,
            "suppressed": self.suppressed,
            "flagged": self.flagged,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Bar":
        lo, hi = data.get("lo"), data.get("hi")
        return cls(
            str(data["value"]),
            decode_value(data["estimate"]),
            None if lo is None else float(lo),
            None if hi is None else float(hi),
            int(data.get("n", 0)),
            bool(data.get("suppressed", False)),
            bool(data.get("flagged", False)),
        )


@dataclass(frozen=True)
class ChartSpec:
    factor: str
    metric: str
    bars: Tuple[Bar, ...]
    mode: str = "delta"
    reference: Optional[float] = None  # overall value, drawn in raw mode

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def to_dict(self) -> dict:
        return {
            "factor": self.factor,
            "metric": self.metric,
            "mode": self.mode,
            "reference": self.reference,
            "bars": [b.to_dict() for b in self.bars],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ChartSpec":
        ref = data.get("reference")
        return cls(
            str(data["factor"]),
            str(data["metric"]),
            tuple(Bar.from_dict(b) for b in data.get("bars") or ()),
            str(data.get("mode", "delta")),
            None if ref is None else float(ref),
        )


def chart_spec(audit, factor: str, metric: str, mode: str = "delta", hide: Sequence[str] = ()) -> ChartSpec:
    """Chart of one metric across a factor's subgroups, in report order."""
    bars = []
    for rep in audit.reports_for(factor):
        if rep.value in hide:
            continue
        if mode == "delta":
            est = rep.delta.get(metric)
            cis = rep.delta_ci
        else:
            est = rep.metrics.get(metric)
            cis = rep.subgroup_ci
        iv = None if rep.suppressed or cis is None else cis.get(metric)
        lo = iv.lo if iv is not None and iv.defined else None
        hi = iv.hi if iv is not None and iv.defined else None
        bars.append(Bar(rep.value, est, lo, hi, rep.n, rep.suppressed, rep.flagged.get(metric, False)))
    ref = audit.overall.get(metric)
    return ChartSpec(factor, metric, tuple(bars), mode, ref if mode == "raw" and is_defined(ref) else None)


def draw_chart(ax, spec: ChartSpec):
    """Draw ``spec`` onto a matplotlib Axes."""
    if not spec.bars:
        raise EmptySpec(f"chart {spec.factor}/{spec.metric} has no bars")
    ypos = list(range(len(spec.bars)))[::-1]
    for y, bar in zip(ypos, spec.bars):
        width = bar.estimate if is_defined(bar.estimate) else 0.0
        if bar.suppressed:
            ax.barh(y, width, height=0.6, color="white", edgecolor=SUPPRESSED_COLOR, hatch="///")
        else:
            ax.barh(y, width, height=0.6, color=FLAG_COLOR if bar.flagged else BAR_COLOR)
            if bar.lo is not None:
                ax.errorbar(
                    width, y, xerr=[[width - bar.lo], [bar.hi - width]],
                    fmt="none", ecolor="black", elinewidth=1.0, capsize=3,
                )
        note = f"n={bar.n}"
        if not is_defined(bar.estimate):
            note += ", undefined"
        elif bar.suppressed:
            note += ", suppressed"
        ax.annotate(note, (1.0, y), xycoords=("axes fraction", "data"), xytext=(4, 0),
                    textcoords="offset points", va="center", fontsize=7)
    if spec.mode == "delta":
        ax.axvline(0.0, color="black", linewidth=0.8)
        ax.set_xlabel(f"Δ{spec.metric} (subgroup - overall)")
    else:
        if spec.reference is not None:
            ax.axvline(spec.reference, color="black", linewidth=0.8, linestyle="--")
        ax.set_xlabel(spec.metric)
        ax.set_xlim(0.0, 1.0)
    ax.set_yticks(ypos)
    ax.set_yticklabels([b.value for b in spec.bars])
    ax.set_title(f"{spec.factor}: {spec.metric}")
    if spec.mode == "delta":
        # symmetric limits keep the zero line centred
        extent = [abs(b.estimate) for b in spec.bars if is_defined(b.estimate)]
        extent += [abs(v) for b in spec.bars for v in (b.lo, b.hi) if v is not None]
        lim = max(extent + [0.05]) * 1.15
        ax.set_xlim(-lim, lim)
    return ax


def render_chart(spec: ChartSpec) -> bytes:
    """SVG bytes for ``spec``; identical specs give identical bytes."""
    if not spec.bars:
        raise EmptySpec(f"chart {spec.factor}/{spec.metric} has no bars")
    with matplotlib.rc_context(STYLE):
        height = 1.3 + 0.35 * len(spec.bars)
        fig = Figure(figsize=(6.0, height))
        FigureCanvasSVG(fig)
        ax = fig.add_subplot(1, 1, 1)
        draw_chart(ax, spec)
        # margins fixed in inches so labels fit at any bar count
        fig.subplots_adjust(left=0.25, right=0.82, bottom=0.6 / height, top=1 - 0.4 / height)
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()
