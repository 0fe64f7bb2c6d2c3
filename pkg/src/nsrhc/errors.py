"""Exception types raised by the library."""


class NsrhcError(Exception):
    """Base class for all library errors."""


class ParameterError(NsrhcError, ValueError):
    """Invalid geometry, layout or configuration parameter."""


class MeshParseError(NsrhcError):
    """Malformed mesh file."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DimensionError(NsrhcError, ValueError):
    """Vector or matrix of the wrong size."""


class SolverError(NsrhcError, RuntimeError):
    """Linear solver failure."""


class ConvergenceError(NsrhcError, RuntimeError):
    """Nonlinear iteration did not converge."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class OptimizerError(NsrhcError, RuntimeError):
    """Line search or optimizer failure."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(NsrhcError, ValueError):
    """Scenario configuration failed validation."""
