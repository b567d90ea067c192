"""Exception hierarchy. The CLI maps these onto exit codes."""


class WebBiasError(Exception):
    """Base class for all package errors."""


class InputFormatError(WebBiasError, ValueError):
    """Input cannot be parsed or violates its schema (exit code 1)."""


class InsufficientDataError(WebBiasError, ValueError):
    """Not enough data to produce the requested estimate (exit code 2)."""


class EmptyGraphError(InputFormatError):
    pass


class ClickLogFormatError(InputFormatError):
    pass


class NoCurveError(InsufficientDataError):
    """No target of a sample has a known popularity percentile."""


class UndefinedCorrelationError(InsufficientDataError):
    pass


class ExcludedApplicationWarning(UserWarning):
    """An application was dropped for having too few eligible users."""
