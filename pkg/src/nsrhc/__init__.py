"""Receding-horizon control of incompressible Navier-Stokes flows with
Taylor-Hood finite elements and POD reduced-order models."""

from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionError,
    MeshParseError,
    NsrhcError,
    OptimizerError,
    ParameterError,
    SolverError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DimensionError",
    "MeshParseError",
    "NsrhcError",
    "OptimizerError",
    "ParameterError",
    "SolverError",
    "__version__",
]
