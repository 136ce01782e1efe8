"""Exception and warning types shared across the package."""


class NonPositiveHu(ValueError):
    """The unstable component of the bump derivative is not positive somewhere,
    so ``log h_u`` is undefined (amplitude too large)."""


class ChartError(ValueError):
    """An adapted chart is used outside its ball or does not embed in the torus."""


class ConstantsError(ValueError):
    """The cone constant chain cannot be satisfied."""


class NotFound(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class BracketInvalid(RuntimeError):
    pass


class DisagreementWarning(UserWarning):
    """Two independent estimators of the same integral disagree beyond their error bars."""
