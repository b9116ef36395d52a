"""Exception types shared across the package."""


class RoughSparseError(Exception):
    """Base class for all package errors."""


class InvalidInputError(RoughSparseError, ValueError):
    pass


class ParameterError(RoughSparseError, ValueError):
    pass


class SingularityError(RoughSparseError, ValueError):
    """Raised when a kernel is evaluated at the origin."""


class AlignmentError(RoughSparseError, ValueError):
    """Raised when a cube does not nest in the cells of a grid."""


class ResolutionError(RoughSparseError, ValueError):
    """Raised when a requested scale is finer than the grid."""


class ConvergenceError(RoughSparseError, RuntimeError):
    pass


class DomainError(RoughSparseError, ValueError):
    pass
