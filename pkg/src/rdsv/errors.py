"""Exception taxonomy shared across the pipeline.

Two broad families matter to callers (and to the CLI exit codes):
data/format problems in files we read, and constraint violations in
configuration or invariants.
"""


class RdsvError(Exception):
    """Base class for all pipeline errors."""


class FormatError(RdsvError):
    """Malformed or unreadable input data (RTTM, WAV, DVEC1, RAL1)."""


class ConstraintError(RdsvError):
    """Violated precondition, configuration invariant, or value range."""
