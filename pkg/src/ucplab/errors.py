"""Exception hierarchy shared by all ucplab modules."""


class UcpLabError(Exception):
    """Base class for every error raised by ucplab."""


class DomainError(UcpLabError, ValueError):
    """A region, point or support lies outside the grid it is evaluated on."""


class ValidationError(UcpLabError, ValueError):
    """Coefficients or inputs violate a structural assumption (ellipticity, convexity, ...)."""


class DegenerateInputError(UcpLabError, ValueError):
    """A norm that must be positive vanished (e.g. u vanishes on an open set)."""


class ResolutionError(UcpLabError, ValueError):
    """A feature is narrower than the grid can resolve."""


class CompatibilityError(UcpLabError, ValueError):
    """Traction data is not orthogonal to the rigid motions."""

    def __init__(self, message, defect):
        super().__init__(message)
        self.defect = defect


class NumericalError(UcpLabError, RuntimeError):
    """A numerical procedure broke down (singular operator, non-convergence, ...)."""


class SingularOperatorError(NumericalError):
    """The assembled operator is singular to working precision."""


class ConvergenceError(NumericalError):
    """An iterative method failed to reach its tolerance."""


class ConfigError(UcpLabError, ValueError):
    """An experiment configuration is malformed or incomplete."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
