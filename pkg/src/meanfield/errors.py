"""Exception hierarchy.

Validation problems (bad parameters, malformed configs) derive from
``ValueError``; numerical failures derive from ``ArithmeticError``. The CLI
maps the two families to different exit codes.
"""


class MeanFieldError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(MeanFieldError, ValueError):
    pass


class NumericalError(MeanFieldError, ArithmeticError):
    pass


class ModelEvaluationError(NumericalError):
    """A rate function returned a negative or non-finite value."""


class IntegrationError(NumericalError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class ReducibilityError(NumericalError):
    """The frozen chain has more than one closed communicating class."""


class InconsistencyError(NumericalError):
    pass


class ThinningBoundError(NumericalError):
    pass


class HorizonError(ValidationError):
    pass
