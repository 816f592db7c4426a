"""Exception types shared across the package."""


class RobustMVError(Exception):
    """Base class for all errors raised by this package."""


class NotPositiveDefinite(RobustMVError):
    """A correlation matrix failed the positive-definiteness test.

    ``pivot_index`` is the 0-based index of the first factorization pivot
    that fell below the tolerance.
    """

    def __init__(self, message, pivot_index=None):
        super().__init__(message)
        self.pivot_index = pivot_index


class ZeroDrift(RobustMVError):
    """All prior expected returns are zero; the only sensible strategy is to never trade."""


class NoMinimum(RobustMVError):
    """The worst-case correlation problem has an infimum that is not attained."""


class BoxNotPositiveDefinite(RobustMVError):
    """A corner of the correlation box is not positive definite."""

    def __init__(self, message, corner=None):
        super().__init__(message)
        self.corner = corner


class NoFeasiblePoint(RobustMVError):
    """No positive-definite point could be located inside the correlation box."""


class SamplingExhausted(RobustMVError):
    """Rejection sampling gave up after too many consecutive infeasible proposals."""


class GridTooLarge(RobustMVError):
    """A brute-force grid would exceed the evaluation budget."""


class SaddleViolated(RobustMVError):
    """A sampled point broke one of the saddle inequalities."""

    def __init__(self, message, theta=None, margin=None, report=None):
        super().__init__(message)
        self.theta = theta
        self.margin = margin
        self.report = report


class PrincipleViolated(RobustMVError):
    """A probe broke one of the optimality-principle conditions beyond tolerance."""

    def __init__(self, message, probe=None, margin=None, report=None):
        super().__init__(message)
        self.probe = probe
        self.margin = margin
        self.report = report


class ConfigError(RobustMVError):
    """The model configuration file is missing, malformed, or inconsistent."""
