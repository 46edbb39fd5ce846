"""Exception hierarchy for ivcate."""


class IvCateError(Exception):
    """Base class for all ivcate errors."""


class SchemaError(IvCateError):
    """A required column or declared level is missing from the input."""


class ParseError(IvCateError):
    """A cell could not be parsed as a finite number."""


class ValidationError(IvCateError):
    """Input data violates a declared invariant (e.g. a binary flag)."""


class ConfigurationError(IvCateError):
    """A required piece of configuration or precomputed input is missing."""


class WeakInstrumentError(IvCateError):
    """The instrument carries no usable first-stage signal."""


class NoIdentificationError(IvCateError):
    """All sample weights vanished; the effect is not identified in-sample."""


class CollinearityError(IvCateError):
    """The design matrix is rank deficient."""

    def __init__(self, message, columns=None):
        super().__init__(message)
        self.columns = list(columns) if columns is not None else []


class NumericalError(IvCateError):
    """A numerical solve failed (singular system, non-convergence)."""
