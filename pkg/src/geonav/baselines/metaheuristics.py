"""Population search over absolute headings: PSO, DE, GA and AFSA.

Every method minimizes a vectorized fitness ``f(headings) -> values`` and
keeps the best heading seen so far, so the per-iteration best fitness never
increases. Headings live on the circle; differences are wrapped into
(-pi, pi] before any arithmetic.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Tuple

import numpy as np

from ..core.exceptions import ConfigError
from ..core.models import FieldSample, wrap_angles
from ..sim.field_model import FieldProvider, derive_elements_array
from ..sim.geo import GeoFrame
from ..sim.nav_env import objective_f, objective_values

Fitness = Callable[[np.ndarray], np.ndarray]


class Method(str, Enum):
    PSO = "PSO"
    DE = "DE"
    GA = "GA"
    AFSA = "AFSA"


@dataclass(frozen=True)
class MetaConfig:
    """Search settings for one baseline method.

    ``de_cr`` is validated but has no effect: a heading is a single variable,
    so binomial crossover always takes the mutant's one gene.
    """

    method: Method = Method.PSO
    population: int = 30
    iterations_per_step: int = 20
    probe_dist_km: float = 5.0
    seed: int = 0
    pso_inertia: float = 0.72
    pso_cognitive: float = 1.49
    pso_social: float = 1.49
    de_f: float = 0.5
    de_cr: float = 0.9
    ga_crossover: float = 0.9
    ga_mutation: float = 0.1
    ga_mutation_std: float = math.pi / 8.0
    afsa_visual: float = math.pi / 4.0
    afsa_step: float = math.pi / 16.0
    afsa_crowding: float = 0.618
    afsa_try_number: int = 5
    line_search: bool = True

    def __post_init__(self):
        if not isinstance(self.method, Method):
            try:
                object.__setattr__(self, "method", Method(str(self.method).upper()))
            except ValueError:
                raise ConfigError("baselines.method", f"unknown method {self.method!r}")
        if self.population < 4:
            raise ConfigError("baselines.population", f"must be >= 4, got {self.population}")
        if self.iterations_per_step < 1:
            raise ConfigError("baselines.iterations_per_step", "must be positive")
        if self.probe_dist_km <= 0:
            raise ConfigError("baselines.probe_dist_km", "must be positive")
        for name in ("de_cr", "ga_crossover", "ga_mutation"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"baselines.{name}", "must lie in [0, 1]")
        if not 0.0 < self.de_f <= 2.0:
            raise ConfigError("baselines.de_f", "must lie in (0, 2]")
        if not 0.0 < self.afsa_crowding <= 1.0:
            raise ConfigError("baselines.afsa_crowding", "must lie in (0, 1]")
        if self.afsa_visual <= 0 or self.afsa_step <= 0 or self.afsa_try_number < 1:
            raise ConfigError("baselines.afsa", "visual, step and try_number must be positive")


@dataclass(frozen=True)
class Candidate:
    heading: float
    fitness: float


@dataclass
class SearchResult:
    best: Candidate
    history: List[float] = field(default_factory=list)
    evaluations: int = 0


wrap = wrap_angles


def evaluate_candidate(
    provider: FieldProvider,
    frame: GeoFrame,
    pos_xy: Tuple[float, float],
    heading: float,
    probe_dist_km: float,
    dest: FieldSample,
    origin: FieldSample,
) -> float:
    """Objective at the probe point ``probe_dist_km`` along ``heading``; +inf outside coverage."""
    lon, lat = frame.to_lonlat(pos_xy[0] + probe_dist_km * math.cos(heading),
                               pos_xy[1] + probe_dist_km * math.sin(heading))
    if not provider.covers(lon, lat):
        return math.inf
    return objective_f(provider.sample_lonlat(lon, lat), dest, origin)


def probe_fitness(
    provider: FieldProvider,
    frame: GeoFrame,
    pos_xy: Tuple[float, float],
    probe_dist_km: float,
    dest: FieldSample,
    origin: FieldSample,
) -> Fitness:
    """Vectorized ``evaluate_candidate`` over arrays of headings."""

    def fitness(headings: np.ndarray) -> np.ndarray:
        headings = np.atleast_1d(np.asarray(headings, dtype=np.float64))
        lons, lats = frame.to_lonlat(pos_xy[0] + probe_dist_km * np.cos(headings),
                                     pos_xy[1] + probe_dist_km * np.sin(headings))
        values = np.full(headings.shape, np.inf)
        inside = provider.covers_many(lons, lats)
        if np.any(inside):
            el = derive_elements_array(provider.vectors(lons[inside], lats[inside]))
            observed = np.stack([el["D"], el["I"], el["BH"]], axis=-1)
            values[inside] = objective_values(observed, dest, origin)
        return values

    return fitness


class _Tracker:
    """Elitist best-so-far bookkeeping shared by all methods."""

    def __init__(self, fitness: Fitness):
        self.fitness = fitness
        self.best: Candidate = None
        self.history: List[float] = []
        self.evaluations = 0

    def __call__(self, headings: np.ndarray) -> np.ndarray:
        values = np.asarray(self.fitness(headings), dtype=np.float64)
        self.evaluations += values.size
        k = int(np.argmin(values))
        if self.best is None or values[k] < self.best.fitness:
            self.best = Candidate(float(headings[k]), float(values[k]))
        return values

    def close_iteration(self) -> None:
        self.history.append(self.best.fitness)

    def result(self) -> SearchResult:
        return SearchResult(self.best, self.history, self.evaluations)


def pso(fitness: Fitness, init: np.ndarray, iterations: int, cfg: MetaConfig, rng: np.random.Generator) -> SearchResult:
    """Global-best particle swarm with inertia weight."""
    track = _Tracker(fitness)
    x = wrap(init)
    v = np.zeros_like(x)
    f = track(x)
    pbest, pbest_f = x.copy(), f.copy()
    for _ in range(iterations):
        r1 = rng.random(x.size)
        r2 = rng.random(x.size)
        g = track.best.heading
        v = cfg.pso_inertia * v + cfg.pso_cognitive * r1 * wrap(pbest - x) + cfg.pso_social * r2 * wrap(g - x)
        x = wrap(x + v)
        f = track(x)
        better = f < pbest_f
        pbest[better], pbest_f[better] = x[better], f[better]
        track.close_iteration()
    return track.result()


def differential_evolution(fitness: Fitness, init: np.ndarray, iterations: int, cfg: MetaConfig,
                           rng: np.random.Generator) -> SearchResult:
    """DE/rand/1/bin with greedy one-to-one replacement."""
    track = _Tracker(fitness)
    x = wrap(init)
    f = track(x)
    n = x.size
    for _ in range(iterations):
        if n >= 4:
            trial = x.copy()
            for i in range(n):
                r1, r2, r3 = rng.choice([j for j in range(n) if j != i], size=3, replace=False)
                mutant = x[r1] + cfg.de_f * wrap(x[r2] - x[r3])
                trial[i] = mutant
            trial = wrap(trial)
            ft = track(trial)
            better = ft < f
            x[better], f[better] = trial[better], ft[better]
        track.close_iteration()
    return track.result()


def genetic_algorithm(fitness: Fitness, init: np.ndarray, iterations: int, cfg: MetaConfig,
                      rng: np.random.Generator) -> SearchResult:
    """Tournament-2 selection, blend crossover, Gaussian mutation, one elite."""
    track = _Tracker(fitness)
    x = wrap(init)
    f = track(x)
    n = x.size
    for _ in range(iterations):
        elite = int(np.argmin(f))
        children = np.empty_like(x)
        children[0] = x[elite]
        for k in range(1, n):
            a, b = rng.integers(0, n, size=2), rng.integers(0, n, size=2)
            p1 = a[0] if f[a[0]] <= f[a[1]] else a[1]
            p2 = b[0] if f[b[0]] <= f[b[1]] else b[1]
            child = x[p1]
            if rng.random() < cfg.ga_crossover:
                child = x[p1] + rng.random() * wrap(x[p2] - x[p1])
            if rng.random() < cfg.ga_mutation:
                child = child + rng.normal(0.0, cfg.ga_mutation_std)
            children[k] = child
        x = wrap(children)
        f_elite = f[elite]
        f = np.empty(n)
        f[0] = f_elite
        if n > 1:
            f[1:] = track(x[1:])
        track.close_iteration()
    return track.result()


def fitness_single(track: _Tracker, heading: float) -> float:
    return float(track(np.array([heading]))[0])


def afsa(fitness: Fitness, init: np.ndarray, iterations: int, cfg: MetaConfig, rng: np.random.Generator) -> SearchResult:
    """Artificial fish swarm: follow, swarm, then prey, with a bulletin-board best."""
    track = _Tracker(fitness)
    x = wrap(init)
    f = track(x)
    n = x.size
    for _ in range(iterations):
        for i in range(n):
            dist = np.abs(wrap(x - x[i]))
            mates = np.flatnonzero((dist <= cfg.afsa_visual) & (np.arange(n) != i))
            uncrowded = mates.size > 0 and mates.size / n < cfg.afsa_crowding
            moves: List[Tuple[float, float]] = []
            if uncrowded:
                centre = x[i] + float(np.mean(wrap(x[mates] - x[i])))
                fc = fitness_single(track, centre)
                if fc < f[i]:
                    moves.append((_toward(x[i], centre, cfg, rng), fc))
                j = mates[int(np.argmin(f[mates]))]
                if f[j] < f[i]:
                    moves.append((_toward(x[i], x[j], cfg, rng), f[j]))
            if moves:
                target = min(moves, key=lambda m: m[1])[0]
            else:
                target = None
                for _ in range(cfg.afsa_try_number):
                    probe = x[i] + cfg.afsa_visual * rng.uniform(-1.0, 1.0)
                    if fitness_single(track, probe) < f[i]:
                        target = _toward(x[i], probe, cfg, rng)
                        break
                if target is None:
                    target = x[i] + cfg.afsa_step * rng.uniform(-1.0, 1.0)
            x[i] = wrap(np.array([target]))[0]
            f[i] = fitness_single(track, x[i])
        track.close_iteration()
    return track.result()


def _toward(current: float, goal: float, cfg: MetaConfig, rng: np.random.Generator) -> float:
    delta = float(wrap(np.array([goal - current]))[0])
    if delta == 0.0:
        return current
    return current + math.copysign(min(abs(delta), cfg.afsa_step * rng.random()), delta)


SEARCHES = {
    Method.PSO: pso,
    Method.DE: differential_evolution,
    Method.GA: genetic_algorithm,
    Method.AFSA: afsa,
}


def search_heading(fitness: Fitness, init: np.ndarray, cfg: MetaConfig, rng: np.random.Generator,
                   iterations: int = None) -> SearchResult:
    """Run the configured method from the initial headings ``init``."""
    iterations = cfg.iterations_per_step if iterations is None else iterations
    return SEARCHES[cfg.method](fitness, np.asarray(init, dtype=np.float64), iterations, cfg, rng)

