"""Exception hierarchy shared across the package."""


class AfscreenError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(AfscreenError):
    """Malformed file content; carries the byte offset where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TruncationError(AfscreenError):
    """File shorter than its header declares."""

    def __init__(self, expected, actual, what="payload"):
        super().__init__(
            f"truncated {what}: expected {expected} bytes, found {actual}"
        )
        self.expected = expected
        self.actual = actual


class ChannelNotFoundError(AfscreenError):
    """No signal matched the requested channel label."""


class UnsupportedFormatError(AfscreenError):
    """File declares a storage format this reader does not handle."""


class OrderingError(AfscreenError):
    """Timestamps that must be strictly increasing are not."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class UnsupportedRateError(AfscreenError):
    """Sampling rate below what a detector supports."""


class ContractViolationError(AfscreenError):
    """Caller broke a documented precondition."""


class DegenerateModelError(AfscreenError):
    """Training data cannot produce a usable classifier."""


class ConfigurationError(AfscreenError):
    """Invalid run configuration (thresholds, fold counts, paths)."""


class CompatibilityError(AfscreenError):
    """Serialized model does not match this package version or feature set."""
