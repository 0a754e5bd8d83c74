"""
Exception hierarchy

Every failure raised by the library derives from PowerMinError so callers
(the CLI, the webhook service) can map them to exit codes in one place.
"""


class PowerMinError(Exception):
    """Base class for all library errors."""


class ConfigurationError(PowerMinError):
    """Invalid scenario or experiment configuration."""


class DimensionError(PowerMinError, ValueError):
    """Array shapes that do not agree with each other."""


class NumericalError(PowerMinError):
    """A matrix that should be positive definite or invertible is not."""


class ContractViolationError(PowerMinError):
    """An input breaks a documented precondition (e.g. unit-norm precoders)."""


class InfeasibleTargetsError(PowerMinError):
    """
    The requested MMSE targets cannot be met.

    Attributes:
        report: FeasibilityReport computed for the filters at hand, or None.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InnerConvergenceError(PowerMinError):
    """
    The inner solver hit its iteration cap.

    Attributes:
        state: best MacState found before giving up.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class DualityError(PowerMinError):
    """MAC to BC conversion produced negative powers."""
