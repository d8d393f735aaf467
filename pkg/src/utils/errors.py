"""
Exception hierarchy for the stabilized finite element package
"""


class StabFemError(Exception):
    """Base class for all package errors"""


class MeshFormatError(StabFemError, ValueError):
    """Malformed mesh or velocity text stream"""

    def __init__(self, message: str, line: int = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshValidationError(StabFemError, ValueError):
    """Connectivity that breaks a mesh invariant"""

    def __init__(self, message: str, element: int = None):
        self.element = element
        super().__init__(message)


class TableFormatError(StabFemError, ValueError):
    """Unreadable or inconsistent stabilization table file"""


class ConfigError(StabFemError, ValueError):
    """Invalid run configuration or command-line flags"""


class SolverError(StabFemError, RuntimeError):
    """Linear solve failed or did not reach the requested residual"""

    def __init__(self, message: str, residual: float = None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (relative residual {residual:.3e})"
        super().__init__(message)


class CalibrationError(StabFemError, RuntimeError):
    """Least-squares calibration of a coefficient failed"""

    def __init__(self, message: str, tau: float = None, node: tuple = None):
        self.tau = tau
        self.node = node
        super().__init__(message)
