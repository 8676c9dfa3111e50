"""Run task batteries through any policy and collect episode records."""

import concurrent.futures
import copy
import logging
import math
from pathlib import Path
from typing import Callable, List, Optional, Protocol, Sequence, Tuple, Union, runtime_checkable

import numpy as np

from ..core.exceptions import GeonavError
from ..core.models import Action, EpisodeRecord, MetricsReport, NavTask, TerminationReason, wrap_angle
from ..learn.artifacts import ActorBundle
from ..learn.neural import forward
from ..sim.nav_env import NavEnv, write_trajectory
from .metrics import summarize

logger = logging.getLogger(__name__)

EnvFactory = Callable[[], NavEnv]


@runtime_checkable
class Policy(Protocol):
    """Anything that can drive NavEnv one action at a time."""

    name: str

    def reset(self, env: NavEnv, task: NavTask) -> None:
        ...

    def act(self, obs: np.ndarray) -> Action:
        ...


class ActorPolicy:
    """Noiseless learned actor (teacher or student)."""

    def __init__(self, bundle: ActorBundle, name: Optional[str] = None):
        self.bundle = bundle
        self.name = name or bundle.name

    def reset(self, env: NavEnv, task: NavTask) -> None:
        if not np.allclose(env.normalizer.lo, self.bundle.normalizer.lo) or \
                not np.allclose(env.normalizer.hi, self.bundle.normalizer.hi):
            logger.warning("%s was trained with a different observation normalizer", self.name)

    def act(self, obs: np.ndarray) -> Action:
        return self.bundle.bounds.denormalize(forward(self.bundle.actor, obs))


class NullPolicy:
    """Never turns, never moves."""

    name = "null"

    def reset(self, env: NavEnv, task: NavTask) -> None:
        pass

    def act(self, obs: np.ndarray) -> Action:
        return Action(0.0, 0.0)


class OraclePolicy:
    """Steers along the true bearing to the destination and stops on it.

    Reads the vehicle's true position, so it is a reference, not a navigator.
    """

    name = "oracle"

    def __init__(self):
        self.env: Optional[NavEnv] = None

    def reset(self, env: NavEnv, task: NavTask) -> None:
        self.env = env

    def act(self, obs: np.ndarray) -> Action:
        env = self.env
        turn = wrap_angle(env.bearing_to_destination() - env.state.heading_phi)
        turn = max(-env.bounds.psi_max, min(env.bounds.psi_max, turn))
        aligned = abs(wrap_angle(env.state.heading_phi + turn - env.bearing_to_destination())) < 1e-12
        dist = min(env.bounds.dist_max_km, env.distance_to_destination()) if aligned else 0.0
        return Action(turn, dist)


def run_episode(env: NavEnv, policy: Policy, task: NavTask) -> EpisodeRecord:
    """Fly one task to termination and record what the metrics need."""
    state, obs = env.begin(task)
    policy.reset(env, task)
    start = (state.x_km, state.y_km)
    dest = env.destination_xy
    straight = math.hypot(dest[0] - start[0], dest[1] - start[1])
    headings: List[float] = []
    bearings: List[float] = []
    path = 0.0
    reason = None
    while reason is None:
        to_goal = env.bearing_to_destination()
        a = env.bounds.clip(policy.act(obs))
        state, outcome = env.advance(a)
        # a turn on the spot flies no heading
        if a.dist_l > 0.0:
            headings.append(state.heading_phi)
            bearings.append(to_goal)
        path += a.dist_l
        obs = outcome.obs
        reason = outcome.termination_reason
    return EpisodeRecord(
        task=task,
        success=reason is TerminationReason.GOAL,
        path_length_km=path,
        straight_line_km=straight,
        steps=state.step_j,
        final_distance_km=env.distance_to_destination(),
        termination_reason=reason.value,
        headings=headings,
        bearings=bearings,
    )


def _failed_record(task: NavTask, env: NavEnv, error: Exception) -> EpisodeRecord:
    ox, oy = env.frame.to_km(task.origin)
    dx, dy = env.frame.to_km(task.destination)
    straight = math.hypot(dx - ox, dy - oy)
    return EpisodeRecord(
        task=task, success=False, path_length_km=0.0, straight_line_km=straight, steps=0,
        final_distance_km=straight, termination_reason=f"error:{type(error).__name__}",
    )


def _run_task(
    policy: Policy,
    task: NavTask,
    env_factory: EnvFactory,
    trajectory_dir: Optional[Union[str, Path]],
) -> EpisodeRecord:
    env = env_factory()
    env.record_trajectory = trajectory_dir is not None
    try:
        record = run_episode(env, policy, task)
    except GeonavError as e:
        logger.warning("task %d failed in %s: %s", task.task_id, policy.name, e)
        record = _failed_record(task, env, e)
    if trajectory_dir is not None and env.trajectory:
        write_trajectory(env.trajectory, Path(trajectory_dir) / f"task_{task.task_id:04d}.csv")
    return record


def run_battery(
    policy: Policy,
    tasks: Sequence[NavTask],
    env_factory: EnvFactory,
    trajectory_dir: Optional[Union[str, Path]] = None,
    on_episode: Optional[Callable[[EpisodeRecord], None]] = None,
    workers: int = 1,
) -> Tuple[List[EpisodeRecord], MetricsReport]:
    """Run every task through ``policy`` on a fresh environment.

    An episode that raises a geonav error is recorded as a failure and the
    battery continues. With ``trajectory_dir`` each episode's trajectory is
    written to ``<dir>/task_<id>.csv``.

    With ``workers > 1`` tasks run on a thread pool, each on its own shallow
    copy of ``policy``. Records come back in task order and ``on_episode``
    sees them in that order, so the output does not depend on scheduling.
    """
    if workers < 1:
        raise ValueError(f"workers must be at least 1, got {workers}")
    records: List[EpisodeRecord] = []
    if workers == 1:
        for task in tasks:
            record = _run_task(policy, task, env_factory, trajectory_dir)
            records.append(record)
            if on_episode is not None:
                on_episode(record)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
            futures = [
                executor.submit(_run_task, copy.copy(policy), task, env_factory, trajectory_dir)
                for task in tasks
            ]
            for future in futures:
                record = future.result()
                records.append(record)
                if on_episode is not None:
                    on_episode(record)
    report = summarize(records)
    logger.info("%s: SR %.1f SPL %.1f over %d tasks", policy.name, report.sr_permille,
                report.spl_permille, report.n_tasks)
    return records, report
