"""Exception hierarchy shared by the singflow modules."""


class SingflowError(Exception):
    """Base class for all toolkit errors."""

    stage = "singflow"


class PreconditionError(SingflowError, ValueError):
    """An operation was called outside its documented domain."""


class DomainError(PreconditionError):
    pass


class ConvergenceError(SingflowError):
    """An iterative procedure failed to converge.

    ``residual`` carries the last residual seen before giving up.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SliceError(SingflowError):
    stage = "slice"


class FitError(SingflowError):
    stage = "fit"


class BlowupError(SingflowError):
    stage = "blowup"


class ChartError(SingflowError):
    stage = "chart"


class ExpansionError(SingflowError):
    stage = "expansion"


class BisectionError(SingflowError):
    stage = "bisection"

    def __init__(self, message, brackets=None):
        super().__init__(message)
        self.brackets = brackets


class ScenarioError(SingflowError):
    """Malformed scenario file. ``field`` names the offending entry."""

    stage = "scenario"

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
