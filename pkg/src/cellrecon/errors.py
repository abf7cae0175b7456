"""Exception types shared across the reconstruction pipeline."""


class ReconstructionError(Exception):
    """Base class for all pipeline failures."""


class NoJumpDetected(ReconstructionError):
    """No neighbor difference exceeded the jump-candidate threshold."""


class PartitionFailure(ReconstructionError):
    """Flood fill did not split the domain into exactly two regions."""

    def __init__(self, message: str, components: int | None = None):
        super().__init__(message)
        self.components = components


class IncompleteWindow(ReconstructionError):
    """A quasi-interpolation window contains missing cell averages."""


class SingularSystem(ReconstructionError):
    """Unregularized least-squares normal matrix is numerically singular."""


class EmptyContour(ReconstructionError):
    """Spline has constant sign on the whole sample grid."""


class NoValidWindow(ReconstructionError):
    """No 3x8 window placement satisfies the clean-row requirements."""


class SingularLinearSystem(ReconstructionError):
    """Linear-piece matching system is singular (should be impossible)."""


class NewtonDivergence(ReconstructionError):
    """Newton iteration failed to converge on the quadratic system."""


class SingularJacobian(ReconstructionError):
    """Quadratic-system Jacobian is numerically singular (vanishing jump)."""


class EmptyChain(ReconstructionError):
    """No local edge arc survived along the detected band."""


class InsufficientValidRun(ReconstructionError):
    """A needed cell has no valid neighbors in any axis direction."""

    def __init__(self, message: str, cell: tuple[int, int] | None = None):
        super().__init__(message)
        self.cell = cell


class OutOfDomain(ReconstructionError):
    """Evaluation point lies outside the unit square."""


class SignAmbiguity(ReconstructionError):
    """A signed-distance sample could not be assigned a side."""
