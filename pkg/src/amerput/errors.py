"""Exception types raised across the package."""


class AmerputError(Exception):
    """Base class for all package errors."""


class ConfigError(AmerputError, ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DiagonalDominanceViolated(AmerputError, ValueError):
    """Half the diffusion matrix is not diagonally dominant at ``(t, x)``."""

    def __init__(self, t, x, margin=None):
        self.t = float(t)
        self.x = tuple(float(v) for v in x)
        self.margin = margin
        msg = f"diagonal dominance fails at t={self.t}, x={self.x}"
        if margin is not None:
            msg += f" (worst row margin {margin:.3e})"
        super().__init__(msg)


class GridTooLarge(AmerputError, MemoryError):
    def __init__(self, n_nodes, cap):
        self.n_nodes = int(n_nodes)
        self.cap = int(cap)
        super().__init__(f"lattice would hold {self.n_nodes} nodes, cap is {self.cap}")


class NeighborOutsideEnumeration(AmerputError, LookupError):
    """A stencil step left the enumerated node set (lattice construction bug)."""


class InnerSolveDiverged(AmerputError, RuntimeError):
    def __init__(self, level, residual, iterations=None):
        self.level = int(level)
        self.residual = float(residual)
        self.iterations = iterations
        super().__init__(
            f"inner LCP solve at time level {self.level} stopped with residual "
            f"{self.residual:.3e} after {iterations} iterations"
        )


class NotConverged(AmerputError, RuntimeError):
    def __init__(self, iterations, residual):
        self.iterations = int(iterations)
        self.residual = float(residual)
        super().__init__(
            f"fixed-point iteration did not converge: residual {self.residual:.3e} "
            f"after {self.iterations} iterations"
        )


class StudyAborted(AmerputError, RuntimeError):
    """A solve inside a study failed; ``report`` holds the rows finished so far."""

    def __init__(self, report, cause):
        self.report = report
        self.cause = cause
        super().__init__(f"study aborted after {len(report.rows)} completed runs: {cause}")


class ReportIOError(AmerputError, OSError):
    def __init__(self, path, cause):
        self.path = str(path)
        self.cause = cause
        super().__init__(f"cannot write or read report {self.path}: {cause}")
