"""Exception types shared across the package."""


class GgddError(Exception):
    """Base class for all package errors."""


class GridMismatch(GgddError):
    """Fields live on different grids or have different ranks."""


class BandTooHigh(GgddError):
    """Requested spectral band exceeds n/4 for the grid."""


class NonSkewInput(GgddError):
    """spn_inv received a matrix whose symmetric part is too large."""


class BadSpacePairing(GgddError):
    """Composite operator requested with an invalid space/bc combination."""


class NoAdjoint(GgddError):
    """Operator handle has no adjoint link."""


class UnknownIdentity(GgddError):
    """Identity id not present in the registry."""


class WrongMode(GgddError):
    """Identity requires a grid mode it was not given."""


class ConstraintViolated(GgddError):
    """Tensor field does not satisfy the algebraic constraint of the target space."""


class SolverStall(GgddError):
    """Iterative solve failed to reach its tolerance within the iteration cap."""


class NotInRange(GgddError):
    """Right-hand side is not in the (numerical) range of the operator."""


class NotInKernel(GgddError):
    """Input for a composed potential is not in the required kernel space."""


class GridTooLarge(GgddError):
    """Dense spectral computation requested on a grid above the size cap."""


class NoConvergence(GgddError):
    """Krylov solver exhausted its iteration budget."""

    def __init__(self, message, report=None, stage=None):
        super().__init__(message)
        self.report = report
        self.stage = stage


class NonSymmetricOperator(GgddError):
    """Operator failed the probabilistic symmetry check."""


class UnknownCase(GgddError):
    """Manufactured-solution case name not recognized."""


class BadMagic(GgddError):
    """Field file does not start with the FLD1 magic line."""


class DimMismatch(GgddError):
    """Field file kind or dimensions disagree with what the reader expected."""


class TruncatedPayload(GgddError):
    """Field file payload is shorter than the header promises."""


class ConfigError(GgddError):
    """CLI configuration is invalid."""
