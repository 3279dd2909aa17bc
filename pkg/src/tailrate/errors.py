"""Exception hierarchy shared by every stage of the pipeline."""


class TailrateError(Exception):
    """Base class for all package errors."""


class InputError(TailrateError):
    """Bad user input: unreadable file, malformed CSV, bad argument."""


class ParseError(InputError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class DataError(InputError):
    """Input parsed but the values are unusable (non-finite, too short)."""


class ArgumentError(InputError, ValueError):
    pass


class NumericalError(TailrateError):
    """A computation could not be completed reliably."""


class DomainError(NumericalError, ValueError):
    """An argument lies outside the domain of a function."""


class FitError(NumericalError):
    pass


class EmptyTailError(NumericalError):
    pass


class TransformError(NumericalError):
    def __init__(self, message, index=None):
        self.index = index
        if index is not None:
            message = f"{message} (index {index})"
        super().__init__(message)


class BootstrapError(NumericalError):
    pass


class IntervalError(NumericalError):
    pass


class GateStop(TailrateError):
    """A pipeline gate refused to continue (non-stationary, independent tails...)."""

    def __init__(self, gate, message):
        self.gate = gate
        super().__init__(f"gate '{gate}' stopped the pipeline: {message}")
