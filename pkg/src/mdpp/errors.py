"""Exception hierarchy shared by all mdpp modules.

The CLI maps these onto exit codes: NumericError exits 2, every other
MdppError exits 1.
"""


class MdppError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(MdppError):
    """A file does not conform to its declared on-disk format."""


class DataError(MdppError):
    """Well-formed input carrying unusable values (non-finite, degenerate)."""


class ValidationError(MdppError):
    """Indices, duplicates, or cross-field consistency checks failed."""


class ShapeError(MdppError):
    """Array dimensions do not match what an operation requires."""


class ConfigError(MdppError):
    """Configuration or hyperparameter values outside their legal range."""


class NumericError(MdppError):
    """A numerical routine failed (factorization breakdown, non-finite loss)."""
