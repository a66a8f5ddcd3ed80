"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, SchemaError and
DataError -> 3, NumericalError -> 4.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ToolkitError):
    """Invalid configuration: unknown variable names, bad thresholds, malformed config files."""


class SchemaError(ToolkitError):
    """Input file does not match the expected schema (missing file, missing column)."""


class DataError(ToolkitError):
    """A data value violates an invariant; carries row/column context where known."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class NumericalError(ToolkitError):
    """Numerical failure: rank deficiency, non-convergence, leverage of one."""
