"""
Exception hierarchy for the geometry kernel, the flow engines and model ingestion.
"""

from typing import Optional


class GeometryError(Exception):
    """Base class for every failure raised by the kernel."""


class DegreeError(GeometryError):
    """Form degree out of range for the requested operation."""


class SingularSymplectic(GeometryError):
    """The symplectic matrix is not invertible."""


class MetricError(GeometryError):
    """The metric is not symmetric positive definite."""


class HitchinGateError(GeometryError):
    """A 3-form failed one of the gates of the Hitchin construction."""


class NotPrimitive(HitchinGateError):
    pass


class NotStable(HitchinGateError):
    pass


class NotPositive(HitchinGateError):
    pass


class ZeroCovector(GeometryError):
    pass


class PositivityLoss(GeometryError):
    """The torus fields left the region ab - c^2 > 0."""

    def __init__(self, message: str, t: float, worst_node: int, margin: float):
        super().__init__(message)
        self.t = t
        self.worst_node = worst_node
        self.margin = margin


class StepUnderflow(GeometryError):
    """Step halving reached the floor; the flow is treated as blowing up."""

    def __init__(self, message: str, t: float, dt: float, bracket: Optional[tuple[float, float]] = None):
        super().__init__(message)
        self.t = t
        self.dt = dt
        self.bracket = bracket


class FlowBlowup(GeometryError):
    """Raised by drivers that require a run to reach t_max."""

    def __init__(self, message: str, bracket: tuple[float, float]):
        super().__init__(message)
        self.bracket = bracket


class UnknownOracle(GeometryError):
    pass


class ModelError(GeometryError):
    """Structure constants violate Jacobi or leave omega non-closed."""


class ModelFileError(GeometryError):
    """Malformed model-definition file."""

    def __init__(self, message: str, line: int, source: str = "<model>"):
        super().__init__(f"{source}:{line}: {message}")
        self.line = line
        self.source = source


class AnsatzLeak(GeometryError):
    """A velocity or state left the linear span of its ansatz."""
