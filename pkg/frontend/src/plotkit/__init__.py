"""Figure rendering for the streaming factor regression aggregates."""
from .errors import ParseError, PlotkitError, SchemaError
from .plots import PlotSpec, build_figure, describe, render
from .tables import Table, read_table

__all__ = [
    "ParseError", "PlotkitError", "SchemaError",
    "PlotSpec", "build_figure", "describe", "render",
    "Table", "read_table",
]
