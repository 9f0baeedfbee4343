"""Exception taxonomy shared by the library and the CLI.

Every PalmgridError carries a short machine-readable ``category`` that the CLI
prints in its single-line error format. Plain ValueError maps to "argument" and
OSError to "io" at the CLI boundary.
"""

from __future__ import annotations


class PalmgridError(Exception):
    """Base class for palmgrid failures with a stable error category."""

    category = "error"


class GridFormatError(PalmgridError):
    """Malformed grid file: bad magic, unparseable or invalid header."""

    category = "format"


class TruncationError(PalmgridError):
    """Grid payload length disagrees with the header's declared shape."""

    category = "truncation"


class SchemaError(PalmgridError):
    """Structurally valid input that violates a cross-object contract
    (misaligned grids, missing bands or channels, bad manifest shape)."""

    category = "schema"


class ConfigError(PalmgridError):
    """Invalid run configuration or an option unsupported by the data."""

    category = "config"


class CapacityError(PalmgridError):
    """A sampling request exceeds the number of eligible pixels."""

    category = "capacity"


class ParseError(PalmgridError):
    """Malformed text input (sample CSV rows, scores files, manifests)."""

    category = "parse"


class DivergenceError(PalmgridError):
    """Training produced a non-finite loss."""

    category = "divergence"


class DegenerateInputError(PalmgridError):
    """Input admits no meaningful answer (e.g. a histogram with no valid cut)."""

    category = "degenerate"


class UndefinedMetricError(PalmgridError):
    """A requested metric has no defined value on this input."""

    category = "undefined-metric"
