"""Joint lower-tail modeling of two received-power channels and rate
selection for a target error probability."""
from .errors import (DataError, DomainError, FitError, GateStop, InputError, NumericalError, ParseError,
                     TailrateError)

__version__ = "0.1.0"

__all__ = ["DataError", "DomainError", "FitError", "GateStop", "InputError", "NumericalError", "ParseError",
           "TailrateError", "__version__"]
