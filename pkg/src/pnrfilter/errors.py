"""Exception hierarchy shared by all modules."""


class PNRError(Exception):
    """Base class for every error raised by pnrfilter."""


class ValidationError(PNRError, ValueError):
    """A parameter or config value violates its contract."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class UnknownPhotonNumber(PNRError, KeyError):
    pass


class SampleRateMismatch(PNRError, ValueError):
    pass


class NoCrossing(PNRError, ValueError):
    pass


class PeakNotBracketed(PNRError, ValueError):
    pass


class InvalidComponentCount(PNRError, ValueError):
    pass


class NonConvergence(PNRError, RuntimeError):
    """Raised when an iterative fit stops before meeting its tolerance.

    ``partial`` carries the best estimate available when iteration stopped.
    """

    def __init__(self, message, partial=None):
        self.partial = partial
        super().__init__(message)


class InsufficientData(PNRError, ValueError):
    pass


class Saturated(PNRError, ValueError):
    pass


class InfiniteSNR(PNRError, ArithmeticError):
    pass


class NoValidSize(PNRError, ValueError):
    pass


class BadFormat(PNRError, ValueError):
    """A trace or kernel file could not be parsed."""

    def __init__(self, path, offset, message):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path}: byte offset {offset}: {message}")


class NoInput(PNRError, FileNotFoundError):
    pass
