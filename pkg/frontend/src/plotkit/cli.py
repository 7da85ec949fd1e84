"""Command line: one figure per invocation.

Either positional (plotkit KIND INPUT OUT) or via a spec file
(plotkit --spec PATH) holding key = value lines. --describe prints the
text summary and writes nothing.
"""
import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ParseError, PlotkitError
from .plots import PlotSpec, describe, render
from .tables import KINDS

SPEC_KEYS = ("kind", "input", "out", "title", "log_x", "log_y")
BOOL_WORDS = {"true": True, "yes": True, "on": True, "1": True,
              "false": False, "no": False, "off": False, "0": False}


def _bool(value, key, line):
    try:
        return BOOL_WORDS[value.lower()]
    except KeyError:
        raise ParseError(f"line {line}: {key} must be a boolean, "
                         f"got {value!r}") from None


def parse_spec(path):
    """Flat key = value file; blank lines, # comments, and a [plot]
    section header are tolerated. Paths resolve relative to the file."""
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"spec file {path} does not exist")
    vals = {}
    lineno = {}
    for i, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            continue
        if "=" not in line:
            raise ParseError(f"line {i}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in SPEC_KEYS:
            raise ParseError(f"line {i}: unknown key {key!r}")
        if key in vals:
            raise ParseError(f"line {i}: duplicate key {key!r} "
                             f"(first on line {lineno[key]})")
        vals[key] = value
        lineno[key] = i
    for key in ("kind", "input"):
        if key not in vals:
            raise ParseError(f"spec file needs a {key!r} entry")

    def _path(value):
        p = Path(value)
        return p if p.is_absolute() else path.parent / p

    return PlotSpec(
        input=_path(vals["input"]),
        kind=vals["kind"],
        out=_path(vals["out"]) if "out" in vals else None,
        title=vals.get("title", ""),
        log_x=_bool(vals["log_x"], "log_x", lineno["log_x"])
        if "log_x" in vals else None,
        log_y=_bool(vals["log_y"], "log_y", lineno["log_y"])
        if "log_y" in vals else None,
    )


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="plotkit",
        description="render experiment aggregate CSVs as figures")
    ap.add_argument("kind", nargs="?",
                    help=f"plot kind: {', '.join(KINDS)}")
    ap.add_argument("input", nargs="?", help="aggregate or curves CSV")
    ap.add_argument("out", nargs="?", help="image path (.svg default, "
                    ".png works too)")
    ap.add_argument("--spec", help="spec file with key = value lines "
                    "instead of positional arguments")
    ap.add_argument("--title", default="", help="figure title")
    ap.add_argument("--describe", action="store_true",
                    help="print a text summary, write no image")
    return ap


def _resolve(args):
    if args.spec is not None:
        if args.kind is not None:
            raise ParseError("give either --spec or KIND INPUT OUT, "
                             "not both")
        spec = parse_spec(args.spec)
    else:
        if args.kind is None or args.input is None:
            raise ParseError("usage: plotkit KIND INPUT OUT "
                             "(or plotkit --spec PATH)")
        spec = PlotSpec(input=Path(args.input), kind=args.kind,
                        out=Path(args.out) if args.out else None)
    if args.title:
        spec = replace(spec, title=args.title)
    return spec


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        spec = _resolve(args)
        if args.describe:
            sys.stdout.write(describe(spec))
        else:
            render(spec)
    except PlotkitError as exc:
        print(f"plotkit: {exc}", file=sys.stderr)
        return 2
    return 0


def run():
    sys.exit(main())
