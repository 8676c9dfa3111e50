"""Data models for geonav."""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np


# Order of the observed elements in every observation half.
OBSERVED_ELEMENTS = ("D", "I", "BH")


@dataclass(frozen=True)
class GeoPoint:
    """A surface point in geographic degrees."""

    lon_deg: float
    lat_deg: float

    def __post_init__(self):
        if not (-180.0 <= self.lon_deg <= 180.0):
            raise ValueError(f"lon_deg out of range: {self.lon_deg}")
        if not (-90.0 <= self.lat_deg <= 90.0):
            raise ValueError(f"lat_deg out of range: {self.lat_deg}")

    def __str__(self) -> str:
        return f"({self.lon_deg:.4f}°, {self.lat_deg:.4f}°)"


@dataclass(frozen=True)
class GeoBox:
    """A lon/lat aligned box, used for coverage, regions and the super-region."""

    lon_min: float
    lon_max: float
    lat_min: float
    lat_max: float

    def __post_init__(self):
        if not (self.lon_min < self.lon_max and self.lat_min < self.lat_max):
            raise ValueError(f"empty box: {self}")

    @property
    def mid_lat(self) -> float:
        return 0.5 * (self.lat_min + self.lat_max)

    @property
    def southwest(self) -> GeoPoint:
        return GeoPoint(self.lon_min, self.lat_min)

    def contains(self, p: GeoPoint) -> bool:
        return self.lon_min <= p.lon_deg <= self.lon_max and self.lat_min <= p.lat_deg <= self.lat_max

    def contains_box(self, other: "GeoBox") -> bool:
        return (
            self.lon_min <= other.lon_min and other.lon_max <= self.lon_max
            and self.lat_min <= other.lat_min and other.lat_max <= self.lat_max
        )


@dataclass(frozen=True)
class FieldVector:
    """Field components in nT: north, east, down."""

    bx: float
    by: float
    bz: float


@dataclass(frozen=True)
class FieldSample:
    """The seven geomagnetic elements at a point. Angles in radians."""

    bf: float
    bh: float
    bx: float
    by: float
    bz: float
    decl_d: float
    incl_i: float
    degenerate: bool = False

    def element(self, name: str) -> float:
        """Return an observed element by its short name (D, I or BH)."""
        if name == "D":
            return self.decl_d
        if name == "I":
            return self.incl_i
        if name == "BH":
            return self.bh
        raise KeyError(f"unknown element: {name}")

    def observed(self) -> np.ndarray:
        """The (D, I, BH) triple fed to policies and the objective."""
        return np.array([self.decl_d, self.incl_i, self.bh], dtype=np.float64)


@dataclass(frozen=True)
class NavTask:
    """One navigation task: reach a destination from an origin."""

    origin: GeoPoint
    destination: GeoPoint
    zeta: float = 0.05
    max_steps: int = 250
    task_id: int = 0

    def __post_init__(self):
        if self.origin == self.destination:
            raise ValueError("origin and destination coincide")
        if self.zeta <= 0:
            raise ValueError(f"zeta must be positive: {self.zeta}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be positive: {self.max_steps}")


@dataclass(frozen=True)
class VehicleState:
    """Planar vehicle state relative to the frame origin."""

    x_km: float
    y_km: float
    heading_phi: float
    step_j: int = 0


@dataclass(frozen=True)
class Action:
    """A turn increment (radians) and a travel distance (km)."""

    psi: float
    dist_l: float

    def as_array(self) -> np.ndarray:
        return np.array([self.psi, self.dist_l], dtype=np.float64)


class TerminationReason(str, Enum):
    GOAL = "goal"
    STEP_BUDGET = "step_budget"
    OUT_OF_COVERAGE = "out_of_coverage"


@dataclass
class StepOutcome:
    """Result of one environment step."""

    obs: np.ndarray
    reward_total: float
    reward_extrinsic: float
    reward_intrinsic: float
    objective: float
    termination_reason: Optional[TerminationReason] = None
    # Diagnostics only; never fed to policies.
    true_position: Optional[GeoPoint] = None

    @property
    def done(self) -> bool:
        return self.termination_reason is not None


@dataclass
class EpisodeRecord:
    """Everything the metrics need from one finished episode."""

    task: NavTask
    success: bool
    path_length_km: float
    straight_line_km: float
    steps: int
    final_distance_km: float
    termination_reason: str
    headings: List[float] = field(default_factory=list)
    bearings: List[float] = field(default_factory=list)

    @property
    def heading_deviations(self) -> List[float]:
        return [abs(wrap_angle(h - b)) for h, b in zip(self.headings, self.bearings)]


@dataclass
class MetricsReport:
    """Aggregate metrics over a task battery."""

    sr_permille: float
    spl_permille: float
    heading_mae_rad: float
    heading_rmse_rad: float
    ne_km: float
    ne_success_km: float
    tnt_steps: float
    tnt_success_steps: float
    n_tasks: int

    def as_row(self) -> dict:
        return {
            "sr_permille": self.sr_permille,
            "spl_permille": self.spl_permille,
            "heading_mae_rad": self.heading_mae_rad,
            "heading_rmse_rad": self.heading_rmse_rad,
            "ne_km": self.ne_km,
            "ne_success_km": self.ne_success_km,
            "tnt_steps": self.tnt_steps,
            "tnt_success_steps": self.tnt_success_steps,
            "n_tasks": self.n_tasks,
        }


def wrap_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def wrap_angles(angles: np.ndarray) -> np.ndarray:
    """Vectorized wrap into (-pi, pi]."""
    out = np.remainder(np.asarray(angles, dtype=np.float64) + math.pi, 2.0 * math.pi) - math.pi
    return np.where(out <= -math.pi, out + 2.0 * math.pi, out)


def angular_distance(a: float, b: float) -> float:
    """Unsigned wrapped difference between two angles, in [0, pi]."""
    return abs(wrap_angle(a - b))


def bearing(dx_km: float, dy_km: float) -> float:
    """Planar course angle of a displacement, measured from east, counter-clockwise."""
    return math.atan2(dy_km, dx_km)


def planar_distance(a: Tuple[float, float], b: Tuple[float, float]) -> float:
    return math.hypot(b[0] - a[0], b[1] - a[1])
