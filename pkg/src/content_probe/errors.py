"""Exception types shared across the toolkit.

All toolkit errors derive from :class:`ToolkitError` so callers can catch
broadly; the subclasses separate malformed input files from contract
violations and bad parameters.
"""


class ToolkitError(Exception):
    """Base class for every error raised by this package."""


class ParseError(ToolkitError):
    """A text input (manifest, table, config) could not be parsed.

    Carries the offending line number when one is known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(ToolkitError):
    """A binary payload or image file is not in the supported format."""


class ValidationError(ToolkitError):
    """Structurally valid input violates a documented invariant."""


class ParameterError(ToolkitError):
    """An operation was called with an out-of-range parameter."""


class EmptyRegionError(ToolkitError):
    """A selection resolved to an empty (or too small) pixel region."""


class DivergenceError(ToolkitError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
