"""Exception hierarchy for geonav."""

from typing import Dict, List, Optional


class GeonavError(Exception):
    """Base class for every error raised by geonav."""


class ConfigError(GeonavError):
    """Invalid or missing run-config entry."""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class GridParseError(GeonavError):
    """A field grid file could not be parsed."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class GridGeometryError(GeonavError):
    """A parsed field grid violates a geometry invariant."""

    def __init__(self, invariant: str):
        self.invariant = invariant
        super().__init__(f"grid geometry violated: {invariant}")


class OutOfCoverageError(GeonavError):
    """A point lies outside the coverage of a field provider."""

    def __init__(self, lon_deg: float, lat_deg: float, axis: str):
        self.lon_deg = lon_deg
        self.lat_deg = lat_deg
        self.axis = axis
        super().__init__(f"point (lon={lon_deg:.6f}, lat={lat_deg:.6f}) outside coverage in {axis}")


class DegenerateTaskError(GeonavError):
    """Origin and destination share an element value, so the objective is undefined."""


class SamplingExhaustedError(GeonavError):
    """Rejection sampling gave up before producing the requested tasks."""


class IndeterminateHeadingError(GeonavError):
    """The parallel-approach heading is undefined (at goal or zero gradients)."""


class ShapeMismatchError(GeonavError):
    """Array shapes do not match a network's layer dimensions."""


class ArchitectureMismatchError(GeonavError):
    """Two networks that must share an architecture do not."""

    def __init__(self, left: List[int], right: List[int]):
        self.left = list(left)
        self.right = list(right)
        super().__init__(f"architecture mismatch: {self.left} vs {self.right}")


class NonFiniteError(GeonavError):
    """A gradient, loss or objective became NaN or infinite."""

    def __init__(self, what: str, diagnostics: Optional[Dict[str, float]] = None):
        self.what = what
        self.diagnostics = dict(diagnostics or {})
        details = ", ".join(f"{k}={v}" for k, v in sorted(self.diagnostics.items()))
        super().__init__(f"non-finite {what}" + (f" ({details})" if details else ""))


class ScenarioFailure(GeonavError):
    """One or more scenario assertions did not hold."""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class EmptyBatteryError(GeonavError):
    """Metrics were requested over zero episodes."""


class RegistryError(GeonavError):
    """The run registry could not be read or written."""
