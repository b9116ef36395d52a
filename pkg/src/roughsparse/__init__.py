"""Grid experiments for rough homogeneous singular integrals and sparse bounds."""

from .errors import (
    AlignmentError,
    ConvergenceError,
    DomainError,
    InvalidInputError,
    ParameterError,
    ResolutionError,
    RoughSparseError,
    SingularityError,
)
from .field import Cube, GridFunction
from .kernel import SphereKernel, preset_kernel
from .sio import OperatorHandle

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "ConvergenceError",
    "Cube",
    "DomainError",
    "GridFunction",
    "InvalidInputError",
    "OperatorHandle",
    "ParameterError",
    "ResolutionError",
    "RoughSparseError",
    "SingularityError",
    "SphereKernel",
    "preset_kernel",
]
