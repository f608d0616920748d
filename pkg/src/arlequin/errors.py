"""Exception types shared across the package."""


class ArlequinError(Exception):
    """Base class for all package errors."""


class DegenerateSpec(ArlequinError):
    """Domain lengths violate 0 < L_f < L_c < L, or the refine ratio is invalid."""


class NonDivisibleGeometry(ArlequinError):
    """Mesh size H does not tile the annular bands of the geometry."""


class UnknownTag(ArlequinError):
    """Requested boundary tag is not usable on this mesh."""


class UnknownCoefficient(ArlequinError):
    """Requested coefficient name is not in the zoo."""


class NonSpdCoefficient(ArlequinError):
    """Constant coefficient matrix is not symmetric positive definite."""


class MismatchedRegion(ArlequinError):
    """Spaces passed to a gluing-zone assembly do not share that zone."""


class SingularGram(ArlequinError):
    """Projection Gram matrix could not be factorized."""


class CollinearEnrichment(ArlequinError):
    """Enrichment function is numerically contained in the coarse multiplier space."""


class SingularKkt(ArlequinError):
    """Saddle-point matrix is singular (non-SPD coefficient or broken constraint block)."""


class SolverFailure(ArlequinError):
    """A linear solve did not reach the required residual."""


class NoDescent(ArlequinError):
    """Objective could not be decreased from the initial coefficient.

    Carries the existence-condition report computed at the failure point,
    when the caller was able to produce one.
    """

    def __init__(self, message, condition_report=None):
        super().__init__(message)
        self.condition_report = condition_report


class NonPositiveIterate(ArlequinError):
    """Scalar coefficient iterate or initial guess is not strictly positive."""


class InfeasibleBounds(ArlequinError):
    """Matrix optimization bounds satisfy c_minus >= c_plus."""


class InvalidConfig(ArlequinError):
    """Study configuration failed validation (unknown key, bad value, bad tiling)."""
