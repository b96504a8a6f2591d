"""Exception types raised across the package."""


class DSVSError(Exception):
    pass


class NonPositiveDepth(DSVSError, ValueError):
    """A pattern point lies on or behind the camera plane (Z <= 0)."""


class RankDeficientWarning(UserWarning):
    """Pseudoinverse computed from a rank-deficient interaction matrix."""


class Diverged(DSVSError):
    """Closed-loop feature error exceeded the divergence bound.

    The partial trajectory recorded before divergence is kept in
    ``trajectory``.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class ParseError(DSVSError, ValueError):
    pass


class TooShort(DSVSError, ValueError):
    pass


class UnequalLengths(DSVSError, ValueError):
    pass


class DegenerateComponent(DSVSError):
    pass


class OptimizationFailed(DSVSError):
    pass


class VanishingGradient(DSVSError, ArithmeticError):
    pass


class Stalled(DSVSError):
    pass


class InverseDiverged(DSVSError, ArithmeticError):
    pass


class SingularJacobian(DSVSError, ArithmeticError):
    pass


class ConfigError(DSVSError, ValueError):
    pass


class NoReports(DSVSError, ValueError):
    """``report`` was given no evaluation reports."""


class InsufficientData(DSVSError, ValueError):
    """Fewer training samples than mixture components."""
