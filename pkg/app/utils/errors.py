"""
Exception hierarchy for the DWR solver

Exit codes used by the command line:
    ConfigError            -> 2
    SolverError (and kids) -> 3
    OSError                -> 4
"""
from typing import List, Optional


class DwrError(Exception):
    """Base class for every error raised by this package"""


class ConfigError(DwrError, ValueError):
    """Invalid run configuration"""


# ============================================================================
# GEOMETRY & ELEMENTS
# ============================================================================

class MeshError(DwrError):
    """Invalid mesh or mesh operation input"""


class PointOutsideMeshError(MeshError):
    """A point could not be located in any active cell"""

    def __init__(self, point):
        self.point = tuple(float(c) for c in point)
        super().__init__(f"point {self.point} lies outside the mesh")


class ElementError(DwrError, ValueError):
    """Unsupported degree, quadrature order or node index"""


class DegenerateCellError(ElementError):
    """Bilinear map with non-positive Jacobian determinant"""


class IncompatibleSystemsError(DwrError, ValueError):
    """Two finite element systems that cannot be related as required"""


# ============================================================================
# SOLVERS
# ============================================================================

class SolverError(DwrError):
    """Base class for numerical solver failures"""


class LinearSolveError(SolverError):
    """Singular or structurally deficient linear system"""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        super().__init__(message)


class SystemTooLargeError(LinearSolveError):
    """System exceeds the configured direct-solver size cap"""


class NewtonError(SolverError):
    """Newton iteration failed (iteration cap or non-finite residual)"""


class AdaptiveRunError(SolverError):
    """A solver failure inside the adaptive loop; keeps the records computed so far"""

    def __init__(self, message: str, records: Optional[List] = None):
        self.records = list(records or [])
        super().__init__(message)


# ============================================================================
# REPORTING
# ============================================================================

class ReportError(DwrError):
    """Missing or inconsistent data for report emission"""
