# Custom exceptions
class HomogenizationError(Exception):
    """Base exception for the homogenization library"""
    kind = "error"


class ConfigError(HomogenizationError):
    """Invalid or incomplete run configuration"""
    kind = "config"


class GridError(HomogenizationError, ValueError):
    """Invalid grid or mismatched field shapes"""
    kind = "grid"


class ProjectionError(HomogenizationError):
    """Degenerate derivative operator or unsupported scheme"""
    kind = "projection"


class MaterialError(HomogenizationError, ValueError):
    """Invalid material parameters or non-finite constitutive input"""
    kind = "material"


class KrylovError(HomogenizationError):
    """Failure inside the trust-region subproblem solver"""
    kind = "krylov"


class OperatorInconsistencyError(HomogenizationError):
    """Predicted model reduction is negative beyond round-off"""
    kind = "operator"


class SolverDivergence(HomogenizationError):
    """Nonlinear solver failed to converge"""
    kind = "divergence"

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class MicrostructureError(HomogenizationError):
    """Microstructure generation could not reach its targets"""
    kind = "microstructure"

    def __init__(self, message: str, achieved_fraction: float = None):
        super().__init__(message)
        self.achieved_fraction = achieved_fraction


class PlotInputError(HomogenizationError):
    """Run directory misses files needed for plotting"""
    kind = "plot"

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing required files: " + ", ".join(self.missing))
