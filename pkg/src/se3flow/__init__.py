"""Coarse-to-fine dense SE(3) scene flow estimation core."""

from ._backend import name as backend
from .errors import (
    ConfigError,
    FormatError,
    InvalidArgumentError,
    LogDomainError,
    NumericError,
    PipelineError,
    ProjectionDomainError,
    Se3FlowError,
    SolverError,
)
from .field import ConvexUpsampleMask, FlowField, SE3Field
from .geometry import PinholeCamera, SE3Transform, Twist

__version__ = "0.1.0"
