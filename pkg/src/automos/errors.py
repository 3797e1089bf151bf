class AutomosError(Exception):
    pass


class ValidationError(AutomosError, ValueError):
    """Input violates a documented precondition (non-finite point, bad config, ...)."""


class FormatError(AutomosError, ValueError):
    """A file on disk does not follow the expected binary or text layout."""
