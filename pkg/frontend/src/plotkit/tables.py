"""Readers for the two CSV shapes the experiment harness publishes.

Aggregate tables (one row per grid point: task,method,d,k_hat,gamma,
metric,n,median,mean,sd) feed the sweep plots; curve tables (a t column
plus one loss column per method) feed the training-curve plot. Nothing
here imports the experiment code: the CSV schema is the whole contract.
"""
import csv
import math
from pathlib import Path

from .errors import ParseError, SchemaError

KINDS = ("sweep_d", "sweep_gamma", "curves")

# x column of each aggregate kind
AXIS_COLUMN = {"sweep_d": "d", "sweep_gamma": "gamma"}


class Table:
    """Parsed plot input: named series of (x, y) points plus the metric
    label. Series keep first-appearance order; points are sorted by x."""

    def __init__(self, kind, metric, series):
        self.kind = kind
        self.metric = metric
        self.series = series  # list of (name, [(x, y), ...])

    @property
    def names(self):
        return [name for name, _ in self.series]


def _float(value, column, line):
    try:
        return float(value)
    except ValueError:
        raise SchemaError(f"bad number {value!r} in column {column!r} "
                          f"on line {line}") from None


def _rows(path):
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"input {path} does not exist")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"input {path} is empty") from None
        return [c.strip() for c in header], list(reader)


def read_table(path, kind):
    if kind not in KINDS:
        raise ParseError(f"unknown plot kind {kind!r}; expected one of "
                         f"{', '.join(KINDS)}")
    header, rows = _rows(path)
    if kind == "curves":
        return _read_curves(header, rows)
    return _read_aggregate(header, rows, kind)


def _read_aggregate(header, rows, kind):
    axis = AXIS_COLUMN[kind]
    for col in ("method", "metric", axis, "median"):
        if col not in header:
            raise SchemaError(f"{kind} input is missing column {col!r}")
    idx = {c: header.index(c) for c in header}
    metric = None
    series = {}
    for i, row in enumerate(rows, start=2):
        if not row or not any(cell.strip() for cell in row):
            continue
        name = row[idx["method"]]
        x = _float(row[idx[axis]], axis, i)
        y = _float(row[idx["median"]], "median", i)
        if metric is None:
            metric = row[idx["metric"]]
        series.setdefault(name, []).append((x, y))
    if not series:
        raise SchemaError(f"{kind} input has no data rows")
    ordered = [(name, sorted(pts)) for name, pts in series.items()]
    return Table(kind, f"median {metric}", ordered)


def _read_curves(header, rows):
    if "t" not in header:
        raise SchemaError("curves input is missing column 't'")
    methods = [c for c in header if c != "t"]
    if not methods:
        raise SchemaError("curves input has no method columns besides 't'")
    idx = {c: header.index(c) for c in header}
    series = {name: [] for name in methods}
    for i, row in enumerate(rows, start=2):
        if not row or not any(cell.strip() for cell in row):
            continue
        t = _float(row[idx["t"]], "t", i)
        for name in methods:
            cell = row[idx[name]].strip()
            if not cell:
                continue
            y = _float(cell, name, i)
            if math.isfinite(y):
                series[name].append((t, y))
    ordered = [(name, sorted(series[name])) for name in methods
               if series[name]]
    if not ordered:
        raise SchemaError("curves input has no data rows")
    return Table("curves", "train_loss", ordered)
