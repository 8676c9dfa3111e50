"""Drive NavEnv with a per-step metaheuristic heading search."""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np

from ..core.models import Action, EpisodeRecord, NavTask, wrap_angle
from ..core.seeding import substream
from ..eval.battery import run_episode
from ..sim.nav_env import NavEnv
from .metaheuristics import MetaConfig, SearchResult, evaluate_candidate, probe_fitness, search_heading

logger = logging.getLogger(__name__)

MIN_STEP_FRACTION = 0.05


def line_search_distance(env: NavEnv, heading: float, probe_dist_km: float) -> float:
    """Vertex of the parabola through F at 0, p/2 and p along ``heading``, clipped to [0.05 p, p]."""
    p = probe_dist_km
    pos = (env.state.x_km, env.state.y_km)
    f0 = env.objective(env.current_sample)
    f1 = evaluate_candidate(env.provider, env.frame, pos, heading, 0.5 * p, env.destination_sample, env.origin_sample)
    f2 = evaluate_candidate(env.provider, env.frame, pos, heading, p, env.destination_sample, env.origin_sample)
    curvature = f0 - 2.0 * f1 + f2
    if not (math.isfinite(f1) and math.isfinite(f2)) or curvature <= 0.0:
        return p if f2 < f0 else MIN_STEP_FRACTION * p
    t = 0.5 * p * (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * curvature)
    return min(p, max(MIN_STEP_FRACTION * p, t))


def metaheuristic_search(
    env: NavEnv,
    cfg: MetaConfig,
    rng: np.random.Generator,
    init: Optional[np.ndarray] = None,
) -> Tuple[Action, SearchResult]:
    """One search over absolute headings, converted to a clipped turn and a step distance."""
    if init is None:
        init = rng.uniform(-math.pi, math.pi, size=cfg.population)
    fitness = probe_fitness(
        env.provider, env.frame, (env.state.x_km, env.state.y_km), cfg.probe_dist_km,
        env.destination_sample, env.origin_sample,
    )
    result = search_heading(fitness, init, cfg, rng)
    turn = wrap_angle(result.best.heading - env.state.heading_phi)
    turn = max(-env.bounds.psi_max, min(env.bounds.psi_max, turn))
    executed = wrap_angle(env.state.heading_phi + turn)
    dist = cfg.probe_dist_km
    if cfg.line_search:
        dist = line_search_distance(env, executed, cfg.probe_dist_km)
    return Action(turn, min(dist, env.bounds.dist_max_km)), result


def metaheuristic_step(env: NavEnv, cfg: MetaConfig, rng: np.random.Generator) -> Action:
    return metaheuristic_search(env, cfg, rng)[0]


class MetaheuristicPolicy:
    """Policy adapter; each task gets its own stream so batteries are order-independent."""

    def __init__(self, cfg: MetaConfig):
        self.cfg = cfg
        self.name = f"baseline:{cfg.method.value}"
        self.env: Optional[NavEnv] = None
        self.rng: Optional[np.random.Generator] = None
        self.results: List[SearchResult] = []

    def reset(self, env: NavEnv, task: NavTask) -> None:
        self.env = env
        self.rng = substream(self.cfg.seed, "baseline", self.cfg.method.value, task.task_id)
        self.results = []

    def act(self, obs: np.ndarray) -> Action:
        action, result = metaheuristic_search(self.env, self.cfg, self.rng)
        self.results.append(result)
        return action


def navigate_metaheuristic(env: NavEnv, task: NavTask, cfg: MetaConfig) -> Tuple[EpisodeRecord, List[dict]]:
    """Fly one task with the configured method; returns the record and the trajectory rows."""
    env.record_trajectory = True
    record = run_episode(env, MetaheuristicPolicy(cfg), task)
    logger.debug("%s task %d: %s after %d steps", cfg.method.value, task.task_id,
                 record.termination_reason, record.steps)
    return record, list(env.trajectory)
