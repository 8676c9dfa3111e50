"""Goal-conditioned geomagnetic navigation environment."""

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import gymnasium as gym
import numpy as np
import pandas as pd
from gymnasium import spaces

from ..core.exceptions import DegenerateTaskError, IndeterminateHeadingError, OutOfCoverageError, SamplingExhaustedError
from ..core.models import (
    Action, FieldSample, GeoBox, GeoPoint, NavTask, StepOutcome, TerminationReason, VehicleState,
    bearing, wrap_angle, wrap_angles,
)
from ..core.seeding import derive_seed, substream
from .field_model import FieldProvider, element_gradients, lattice_elements, sample
from .geo import GeoFrame
from .reward import RewardConfig, predicted_heading, total_reward

logger = logging.getLogger(__name__)

OBS_DIM = 6
ACT_DIM = 2
DENOMINATOR_FLOOR = 1e-18
TRAJECTORY_COLUMNS = [
    "step", "x_km", "y_km", "lon_deg", "lat_deg", "heading_rad", "psi_rad",
    "dist_km", "F", "reward_ext", "reward_int",
]


@dataclass(frozen=True)
class ActionBounds:
    """Physical action limits; policies work in [-1, 1] per dimension."""

    psi_max: float = math.pi / 2.0
    dist_max_km: float = 50.0

    def clip(self, a: Action) -> Action:
        return Action(
            float(np.clip(a.psi, -self.psi_max, self.psi_max)),
            float(np.clip(a.dist_l, 0.0, self.dist_max_km)),
        )

    def denormalize(self, u: np.ndarray) -> Action:
        u = np.clip(np.asarray(u, dtype=np.float64), -1.0, 1.0)
        return Action(float(u[0] * self.psi_max), float((u[1] + 1.0) * 0.5 * self.dist_max_km))

    def normalize(self, a: Action) -> np.ndarray:
        a = self.clip(a)
        return np.array([a.psi / self.psi_max, 2.0 * a.dist_l / self.dist_max_km - 1.0])


@dataclass(frozen=True)
class ObservationNormalizer:
    """Affine min-max map of (D, I, BH) onto [-1, 1], fixed per super-region."""

    lo: Tuple[float, float, float]
    hi: Tuple[float, float, float]

    @classmethod
    def from_provider(cls, provider: FieldProvider, box: GeoBox,
                      nlon: int = 46, nlat: int = 26) -> "ObservationNormalizer":
        values = lattice_elements(provider, box, nlon, nlat)
        lo = tuple(float(np.min(values[k])) for k in ("D", "I", "BH"))
        hi = tuple(float(np.max(values[k])) for k in ("D", "I", "BH"))
        return cls(lo, hi)

    def _scale(self) -> np.ndarray:
        span = np.array(self.hi) - np.array(self.lo)
        return np.where(span > 0, span, 1.0)

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        lo = np.tile(np.array(self.lo), 2)
        return 2.0 * (np.asarray(raw, dtype=np.float64) - lo) / np.tile(self._scale(), 2) - 1.0

    def denormalize(self, obs: np.ndarray) -> np.ndarray:
        lo = np.tile(np.array(self.lo), 2)
        return (np.asarray(obs, dtype=np.float64) + 1.0) * 0.5 * np.tile(self._scale(), 2) + lo

    def to_dict(self) -> Dict[str, List[float]]:
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[float]]) -> "ObservationNormalizer":
        return cls(tuple(float(x) for x in data["lo"]), tuple(float(x) for x in data["hi"]))


def _deficits(observed: np.ndarray, dest: np.ndarray) -> np.ndarray:
    diff = dest - np.asarray(observed, dtype=np.float64)
    diff[..., 0] = wrap_angles(diff[..., 0])
    return diff


def objective_values(observed: np.ndarray, dest: FieldSample, origin: FieldSample) -> np.ndarray:
    """Objective over an (..., 3) array of observed (D, I, BH) triples."""
    denominators = _deficits(origin.observed(), dest.observed()) ** 2
    if np.any(denominators < DENOMINATOR_FLOOR):
        raise DegenerateTaskError(f"element deficit underflows between origin and destination: {denominators}")
    return np.sum(_deficits(observed, dest.observed()) ** 2 / denominators, axis=-1)


def objective_f(current: FieldSample, dest: FieldSample, origin: FieldSample) -> float:
    """Normalized sum of squared element deficits over (D, I, BH).

    Equals 3 at the origin and 0 at the destination.
    """
    return float(objective_values(current.observed(), dest, origin))


def move(state: VehicleState, a: Action) -> VehicleState:
    """Turn by ``a.psi`` then travel ``a.dist_l`` km along the new course."""
    phi = wrap_angle(state.heading_phi + a.psi)
    return VehicleState(
        x_km=state.x_km + a.dist_l * math.cos(phi),
        y_km=state.y_km + a.dist_l * math.sin(phi),
        heading_phi=phi,
        step_j=state.step_j + 1,
    )


class NavEnv(gym.Env):
    """Navigation environment over one region of a shared field provider.

    The core API is ``begin(task)`` / ``advance(action)`` over value
    types; ``reset``/``step`` wrap it with the gymnasium signatures and accept
    normalized actions in [-1, 1]^2.
    """

    metadata = {"render_modes": []}

    def __init__(
        self,
        provider: FieldProvider,
        region: GeoBox,
        normalizer: ObservationNormalizer,
        reward_cfg: RewardConfig = RewardConfig(),
        bounds: ActionBounds = ActionBounds(),
        gradient_step_km: float = 1.0,
        record_trajectory: bool = False,
    ):
        super().__init__()
        self.provider = provider
        self.region = region
        self.frame = GeoFrame.for_region(region)
        self.normalizer = normalizer
        self.reward_cfg = reward_cfg
        self.bounds = bounds
        self.gradient_step_km = gradient_step_km
        self.record_trajectory = record_trajectory
        self.observation_space = spaces.Box(low=-np.inf, high=np.inf, shape=(OBS_DIM,), dtype=np.float64)
        self.action_space = spaces.Box(low=-1.0, high=1.0, shape=(ACT_DIM,), dtype=np.float64)

        self.task: Optional[NavTask] = None
        self.state: Optional[VehicleState] = None
        self.done = True
        self.trajectory: List[dict] = []
        self._origin_sample: Optional[FieldSample] = None
        self._dest_sample: Optional[FieldSample] = None
        self._current: Optional[FieldSample] = None
        self._obs: Optional[np.ndarray] = None
        self._f_prev = 3.0
        self._dest_xy = (0.0, 0.0)

    # -- value-type API -------------------------------------------------------

    def observe(self, current: FieldSample) -> np.ndarray:
        raw = np.concatenate([current.observed(), self._dest_sample.observed()])
        return self.normalizer.normalize(raw)

    def begin(self, task: NavTask) -> Tuple[VehicleState, np.ndarray]:
        """Place the vehicle at the task origin, heading east."""
        self.task = task
        self._origin_sample = sample(self.provider, task.origin)
        self._dest_sample = sample(self.provider, task.destination)
        self._f_prev = objective_f(self._origin_sample, self._dest_sample, self._origin_sample)
        x0, y0 = self.frame.to_km(task.origin)
        self._dest_xy = self.frame.to_km(task.destination)
        self.state = VehicleState(x0, y0, 0.0, 0)
        self._current = self._origin_sample
        self._obs = self.observe(self._current)
        self.done = False
        self.trajectory = []
        if self.record_trajectory:
            self._record(self.state, 0.0, 0.0, self._f_prev, 0.0, 0.0)
        return self.state, self._obs.copy()

    def objective(self, current: FieldSample) -> float:
        return objective_f(current, self._dest_sample, self._origin_sample)

    def objective_at(self, lon: float, lat: float) -> float:
        """Objective at an arbitrary covered point; +inf outside coverage."""
        if not self.provider.covers(lon, lat):
            return math.inf
        return self.objective(self.provider.sample_lonlat(lon, lat))

    def predicted_heading_here(self) -> Optional[float]:
        """Parallel-approach heading at the current position, or None when undefined."""
        p = self.current_position()
        try:
            grads = element_gradients(
                self.provider, p, self.frame, self.reward_cfg.heading_pair,
                self.gradient_step_km, one_sided_fallback=True,
            )
            return predicted_heading(self._current, self._dest_sample, grads, self.reward_cfg.heading_pair)
        except IndeterminateHeadingError:
            return None

    def advance(self, a: Action) -> Tuple[VehicleState, StepOutcome]:
        """Apply one action; rewards come from the reward module."""
        if self.done:
            raise RuntimeError("episode is done; call begin() first")
        a = self.bounds.clip(a)
        lam_pred = self.predicted_heading_here() if self.reward_cfg.uses_intrinsic else None
        new_state = move(self.state, a)
        lon, lat = self.frame.to_lonlat(new_state.x_km, new_state.y_km)

        reason = None
        if self.provider.covers(lon, lat):
            current = self.provider.sample_lonlat(lon, lat)
            f_now = self.objective(current)
            obs = self.observe(current)
            position = GeoPoint(lon, lat)
            if f_now < self.task.zeta:
                reason = TerminationReason.GOAL
        else:
            current = self._current
            f_now = self._f_prev
            obs = self._obs
            position = None
            reason = TerminationReason.OUT_OF_COVERAGE
        if reason is None and new_state.step_j >= self.task.max_steps:
            reason = TerminationReason.STEP_BUDGET

        total, extrinsic, intrinsic = total_reward(
            f_now, self._f_prev, self.reward_cfg, new_state.heading_phi, lam_pred,
        )
        outcome = StepOutcome(
            obs=obs.copy(), reward_total=total, reward_extrinsic=extrinsic,
            reward_intrinsic=intrinsic, objective=f_now,
            termination_reason=reason, true_position=position,
        )
        self.state = new_state
        self._current = current
        self._obs = obs
        self._f_prev = f_now
        self.done = reason is not None
        if self.record_trajectory:
            self._record(new_state, a.psi, a.dist_l, f_now, extrinsic, intrinsic)
        return new_state, outcome

    def current_position(self) -> GeoPoint:
        lon, lat = self.frame.to_lonlat(self.state.x_km, self.state.y_km)
        return GeoPoint(lon, lat)

    @property
    def current_sample(self) -> FieldSample:
        return self._current

    @property
    def origin_sample(self) -> FieldSample:
        return self._origin_sample

    @property
    def destination_sample(self) -> FieldSample:
        return self._dest_sample

    @property
    def destination_xy(self) -> Tuple[float, float]:
        return self._dest_xy

    def distance_to_destination(self) -> float:
        return math.hypot(self._dest_xy[0] - self.state.x_km, self._dest_xy[1] - self.state.y_km)

    def bearing_to_destination(self) -> float:
        return bearing(self._dest_xy[0] - self.state.x_km, self._dest_xy[1] - self.state.y_km)

    def _record(self, s: VehicleState, psi: float, dist: float, f: float, r_ext: float, r_int: float):
        lon, lat = self.frame.to_lonlat(s.x_km, s.y_km)
        self.trajectory.append({
            "step": s.step_j, "x_km": s.x_km, "y_km": s.y_km, "lon_deg": lon, "lat_deg": lat,
            "heading_rad": s.heading_phi, "psi_rad": psi, "dist_km": dist, "F": f,
            "reward_ext": r_ext, "reward_int": r_int,
        })

    # -- gymnasium API ------------------------------------------------------

    def reset(self, *, seed: Optional[int] = None, options: Optional[dict] = None):
        super().reset(seed=seed)
        if not options or "task" not in options:
            raise ValueError("reset() needs options={'task': NavTask}")
        state, obs = self.begin(options["task"])
        return obs, {"state": state}

    def step(self, action: Union[np.ndarray, Action]):
        a = action if isinstance(action, Action) else self.bounds.denormalize(action)
        state, outcome = self.advance(a)
        terminated = outcome.termination_reason in (TerminationReason.GOAL, TerminationReason.OUT_OF_COVERAGE)
        truncated = outcome.termination_reason is TerminationReason.STEP_BUDGET
        return outcome.obs, outcome.reward_total, terminated, truncated, {"outcome": outcome, "state": state}


def write_trajectory(rows: List[dict], path: Union[str, Path]) -> Path:
    """Write one episode's trajectory CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS).to_csv(path, index=False, float_format="%.10g")
    return path


def generate_tasks(
    provider: FieldProvider,
    region: GeoBox,
    n: int,
    d_min_km: float = 30.0,
    d_max_km: float = 50.0,
    seed: int = 0,
    zeta: float = 0.05,
    max_steps: int = 250,
    attempts_per_task: int = 2000,
) -> List[NavTask]:
    """Rejection-sample ``n`` tasks with both endpoints uniform in ``region``.

    Endpoint distance (in the region's planar frame) lies in
    [d_min_km, d_max_km] and every task has non-degenerate objective
    denominators.
    """
    if d_min_km > d_max_km:
        raise ValueError(f"d_min_km > d_max_km: {d_min_km} > {d_max_km}")
    if not provider.coverage.contains_box(region):
        raise OutOfCoverageError(region.lon_min, region.lat_min, "region")
    rng = substream(seed, "tasks")
    frame = GeoFrame.for_region(region)
    tasks: List[NavTask] = []
    budget = attempts_per_task * max(n, 1)
    attempts = 0
    while len(tasks) < n:
        if attempts >= budget:
            raise SamplingExhaustedError(
                f"only {len(tasks)} of {n} tasks after {attempts} attempts "
                f"(distance [{d_min_km}, {d_max_km}] km in {region})"
            )
        attempts += 1
        lons = rng.uniform(region.lon_min, region.lon_max, size=2)
        lats = rng.uniform(region.lat_min, region.lat_max, size=2)
        origin = GeoPoint(float(lons[0]), float(lats[0]))
        dest = GeoPoint(float(lons[1]), float(lats[1]))
        ox, oy = frame.to_km(origin)
        dx, dy = frame.to_km(dest)
        dist = math.hypot(dx - ox, dy - oy)
        if not (d_min_km <= dist <= d_max_km):
            continue
        o_sample, d_sample = sample(provider, origin), sample(provider, dest)
        try:
            objective_f(o_sample, d_sample, o_sample)
        except DegenerateTaskError:
            continue
        tasks.append(NavTask(origin, dest, zeta=zeta, max_steps=max_steps, task_id=len(tasks)))
    logger.debug("generated %d tasks in %d attempts", n, attempts)
    return tasks


def calibrate_goal_radius(
    provider: FieldProvider,
    region: GeoBox,
    tasks: Sequence[NavTask],
    n_headings: int = 72,
    r_max_km: float = 50.0,
    scan_km: float = 0.25,
    margin: float = 1.05,
) -> float:
    """Largest planar distance from a destination at which F < zeta, over ``tasks``.

    For each destination and each of ``n_headings`` directions the F = zeta
    boundary is located by an outward scan followed by bisection. The bound
    is the maximum over all rays, widened by ``margin``.
    """
    frame = GeoFrame.for_region(region)
    worst = 0.0
    for task in tasks:
        o = sample(provider, task.origin)
        d = sample(provider, task.destination)
        dx, dy = frame.to_km(task.destination)

        def f_at(r: float, theta: float) -> float:
            lon, lat = frame.to_lonlat(dx + r * math.cos(theta), dy + r * math.sin(theta))
            if not provider.covers(lon, lat):
                return math.inf
            return objective_f(provider.sample_lonlat(lon, lat), d, o)

        for k in range(n_headings):
            theta = 2.0 * math.pi * k / n_headings
            inside, r = 0.0, scan_km
            while r <= r_max_km and f_at(r, theta) < task.zeta:
                inside, r = r, r + scan_km
            outside = min(r, r_max_km)
            for _ in range(40):
                mid = 0.5 * (inside + outside)
                if f_at(mid, theta) < task.zeta:
                    inside = mid
                else:
                    outside = mid
            worst = max(worst, inside)
    return worst * margin


@dataclass(frozen=True)
class TaskSpec:
    """How tasks are drawn for one region: distance band and episode limits."""

    d_min_km: float = 30.0
    d_max_km: float = 50.0
    zeta: float = 0.05
    max_steps: int = 250


def task_at(provider: FieldProvider, region: GeoBox, spec: TaskSpec, seed: int, stream: str, index: int) -> NavTask:
    """The ``index``-th task of a named stream, independent of every other index."""
    task = generate_tasks(
        provider, region, 1, spec.d_min_km, spec.d_max_km,
        seed=derive_seed(seed, stream, index), zeta=spec.zeta, max_steps=spec.max_steps,
    )[0]
    return replace(task, task_id=index)
