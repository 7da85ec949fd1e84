"""Figure building for the three standard plot kinds.

sweep_d: median error vs dimension, log-log, with a d^(-1/2) reference
slope. sweep_gamma: median error vs step-decay exponent, with a vertical
guide at the 2/3 optimum. curves: per-method training loss vs step.
`describe` produces the text summary the --describe flag prints; it is
built from the parsed table alone, so its bytes are stable across
matplotlib versions.
"""
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import matplotlib.pyplot as plt
from matplotlib.transforms import blended_transform_factory

from .errors import ParseError
from .tables import AXIS_COLUMN, KINDS, read_table

GAMMA_STAR = 2.0 / 3.0
GAMMA_LABEL = r"achieved at $\gamma = \frac{2}{3}$"
SLOPE_LABEL = r"$d^{-1/2}$ reference"

# (log_x, log_y) defaults per kind
LOG_DEFAULTS = {
    "sweep_d": (True, True),
    "sweep_gamma": (False, True),
    "curves": (True, True),
}


@dataclass(frozen=True)
class PlotSpec:
    """One requested figure: where the CSV is, how to read it, where the
    image goes. Axis flags left as None take the kind's defaults."""

    input: Path
    kind: str
    out: Path = None
    title: str = ""
    log_x: bool = None
    log_y: bool = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParseError(f"unknown plot kind {self.kind!r}; expected "
                             f"one of {', '.join(KINDS)}")

    def axes(self):
        dx, dy = LOG_DEFAULTS[self.kind]
        return (dx if self.log_x is None else self.log_x,
                dy if self.log_y is None else self.log_y)


def _x_label(kind):
    return AXIS_COLUMN.get(kind, "t")


def _fmt(value):
    return format(value, "g")


def describe(spec):
    """Stable text summary of what the figure would contain."""
    table = read_table(spec.input, spec.kind)
    log_x, log_y = spec.axes()
    scale = {True: "log", False: "linear"}
    lines = [f"kind: {spec.kind}"]
    if spec.title:
        lines.append(f"title: {spec.title}")
    lines.append(f"axes: x={_x_label(spec.kind)} ({scale[log_x]}), "
                 f"y={table.metric} ({scale[log_y]})")
    lines.append(f"series: {len(table.series)}")
    for name, pts in table.series:
        xs = [x for x, _ in pts]
        ys = [y for _, y in pts]
        lines.append(f"- {name}: {len(pts)} points, "
                     f"x {_fmt(min(xs))}..{_fmt(max(xs))}, "
                     f"y {_fmt(min(ys))}..{_fmt(max(ys))}")
    if spec.kind == "sweep_d":
        lines.append("guide: d^(-1/2) reference slope")
    elif spec.kind == "sweep_gamma":
        lines.append(f"guide: vertical line at gamma = 2/3 ({GAMMA_LABEL})")
    return "\n".join(lines) + "\n"


def build_figure(table, spec):
    """The matplotlib figure for a parsed table. Legend entries are the
    series; guides are labeled on the axes, not the legend, except the
    reference slope which reads best as a legend line."""
    log_x, log_y = spec.axes()
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name, pts in table.series:
        xs = [x for x, _ in pts]
        ys = [y for _, y in pts]
        ax.plot(xs, ys, marker="o", label=name)

    if spec.kind == "sweep_d":
        x0, y0 = table.series[0][1][0]
        xs = sorted({x for _, pts in table.series for x, _ in pts})
        ax.plot(xs, [y0 * (x / x0) ** -0.5 for x in xs], linestyle="--",
                color="0.5", label=SLOPE_LABEL)
    elif spec.kind == "sweep_gamma":
        ax.axvline(GAMMA_STAR, linestyle="--", color="0.5")
        ax.text(GAMMA_STAR, 0.96, GAMMA_LABEL,
                transform=blended_transform_factory(ax.transData,
                                                    ax.transAxes),
                ha="center", va="top", fontsize=9, color="0.3")

    if log_x:
        ax.set_xscale("log")
    if log_y:
        ax.set_yscale("log")
    ax.set_xlabel(_x_label(spec.kind))
    ax.set_ylabel(table.metric)
    if spec.title:
        ax.set_title(spec.title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return fig


def render(spec):
    """Read, build, and write the image; the format follows the output
    suffix (SVG keeps text as text so diffs stay readable)."""
    if spec.out is None:
        raise ParseError("an output path is required unless --describe "
                         "is given")
    table = read_table(spec.input, spec.kind)
    out = Path(spec.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.fonttype": "none"}):
        fig = build_figure(table, spec)
        try:
            if out.suffix == ".svg":
                # drop the embedded timestamp so reruns diff clean
                fig.savefig(out, metadata={"Date": None})
            else:
                fig.savefig(out, dpi=150)
        finally:
            plt.close(fig)
    return out
