"""Error types for the plot tool."""


class PlotkitError(Exception):
    """Base for everything this package raises on purpose."""


class ParseError(PlotkitError):
    """A spec file or command line that cannot be understood."""


class SchemaError(PlotkitError):
    """An input CSV whose columns do not match the requested plot kind."""
