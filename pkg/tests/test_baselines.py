"""Tests for the metaheuristic heading-search baselines."""

import math
from dataclasses import replace

import numpy as np
import pytest

from geonav.baselines.metaheuristics import (
    MetaConfig,
    Method,
    evaluate_candidate,
    probe_fitness,
    search_heading,
)
from geonav.baselines.navigator import (
    MetaheuristicPolicy,
    line_search_distance,
    metaheuristic_search,
    navigate_metaheuristic,
)
from geonav.core.exceptions import ConfigError
from geonav.core.models import GeoPoint, NavTask, angular_distance

BEST_HEADING = 2.0


def cosine_bowl(center):
    def fitness(headings):
        return 1.0 - np.cos(np.asarray(headings) - center)
    return fitness


class TestMetaConfig:
    """Test cases for MetaConfig validation."""

    def test_method_from_string(self):
        assert MetaConfig(method="de").method is Method.DE

    @pytest.mark.parametrize("kwargs", [
        {"method": "simplex"},
        {"population": 3},
        {"iterations_per_step": 0},
        {"probe_dist_km": 0.0},
        {"de_cr": 1.5},
        {"de_f": 0.0},
        {"afsa_crowding": 0.0},
        {"afsa_try_number": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            MetaConfig(**kwargs)


class TestProbeFitness:
    """Test cases for probe-point fitness."""

    def test_probe_on_destination(self, env, task_a):
        env.begin(task_a)
        pos = (env.state.x_km, env.state.y_km)
        dist = env.distance_to_destination()
        toward = env.bearing_to_destination()
        args = (env.provider, env.frame, pos)
        ends = (env.destination_sample, env.origin_sample)
        assert evaluate_candidate(*args, toward, dist, *ends) == pytest.approx(0.0, abs=1e-9)
        assert evaluate_candidate(*args, toward + math.pi, dist, *ends) > 1.0

    def test_vectorized_matches_scalar(self, env, task_a):
        env.begin(task_a)
        pos = (env.state.x_km, env.state.y_km)
        ends = (env.destination_sample, env.origin_sample)
        headings = np.linspace(-3.0, 3.0, 7)
        values = probe_fitness(env.provider, env.frame, pos, 5.0, *ends)(headings)
        expected = [evaluate_candidate(env.provider, env.frame, pos, h, 5.0, *ends) for h in headings]
        assert values == pytest.approx(expected, rel=1e-9)

    def test_outside_coverage_is_infinite(self, env):
        env.begin(NavTask(GeoPoint(90.2, -10.3), GeoPoint(90.5, -10.6)))
        pos = (env.state.x_km, env.state.y_km)
        fitness = probe_fitness(env.provider, env.frame, pos, 50.0, env.destination_sample, env.origin_sample)
        values = fitness(np.array([math.pi / 2, -math.pi / 2]))
        assert math.isinf(values[0])
        assert math.isfinite(values[1])


class TestSearches:
    """Test cases shared by all four methods."""

    @pytest.mark.parametrize("method", list(Method))
    def test_keeps_seeded_optimum(self, method):
        init = np.random.default_rng(0).uniform(-math.pi, math.pi, size=8)
        init[3] = BEST_HEADING
        cfg = MetaConfig(method=method, population=8)
        result = search_heading(cosine_bowl(BEST_HEADING), init, cfg, np.random.default_rng(1), iterations=5)
        assert result.best.heading == pytest.approx(BEST_HEADING, abs=1e-12)
        assert result.best.fitness == 0.0

    @pytest.mark.parametrize("method", list(Method))
    def test_best_never_worsens(self, method):
        init = np.random.default_rng(2).uniform(-math.pi, math.pi, size=10)
        cfg = MetaConfig(method=method, population=10)
        result = search_heading(cosine_bowl(BEST_HEADING), init, cfg, np.random.default_rng(3), iterations=12)
        assert len(result.history) == 12
        assert all(b <= a for a, b in zip(result.history, result.history[1:]))
        assert result.evaluations >= 10

    @pytest.mark.parametrize("method", list(Method))
    @pytest.mark.parametrize("center", [BEST_HEADING, 3.05])
    def test_finds_the_minimum(self, method, center):
        grid = np.linspace(-math.pi, math.pi, 3600, endpoint=False)
        reference = grid[int(np.argmin(cosine_bowl(center)(grid)))]
        init = np.random.default_rng(4).uniform(-math.pi, math.pi, size=20)
        cfg = MetaConfig(method=method, population=20)
        result = search_heading(cosine_bowl(center), init, cfg, np.random.default_rng(5), iterations=30)
        assert angular_distance(result.best.heading, reference) < math.pi / 18
        assert -math.pi < result.best.heading <= math.pi

    @pytest.mark.parametrize("method", list(Method))
    def test_same_seed_same_result(self, method):
        init = np.linspace(-3.0, 3.0, 6)
        cfg = MetaConfig(method=method, population=6)
        first = search_heading(cosine_bowl(1.0), init, cfg, np.random.default_rng(9), iterations=4)
        second = search_heading(cosine_bowl(1.0), init, cfg, np.random.default_rng(9), iterations=4)
        assert first.best == second.best
        assert first.history == second.history

    @pytest.mark.parametrize("method, rates", [
        (Method.PSO, {"pso_inertia": 0.0, "pso_cognitive": 0.0, "pso_social": 0.0}),
        (Method.GA, {"ga_crossover": 0.0, "ga_mutation": 0.0}),
        (Method.DE, {"de_f": 1e-9, "de_cr": 0.0}),
    ])
    def test_single_heading_is_only_evaluated(self, method, rates):
        """A one-member population without variation never leaves its heading."""
        start = 1.25
        cfg = MetaConfig(method=method, **rates)
        result = search_heading(cosine_bowl(BEST_HEADING), np.array([start]), cfg, np.random.default_rng(0),
                                iterations=6)
        assert result.best.heading == pytest.approx(start, abs=1e-12)
        assert result.best.fitness == pytest.approx(1.0 - math.cos(start - BEST_HEADING), abs=1e-12)
        assert result.history == [result.best.fitness] * 6

    def test_de_crossover_rate_has_no_effect(self):
        init = np.linspace(-3.0, 3.0, 8)
        runs = [
            search_heading(cosine_bowl(1.0), init, MetaConfig(method=Method.DE, population=8, de_cr=cr),
                           np.random.default_rng(11), iterations=5)
            for cr in (0.0, 0.9, 1.0)
        ]
        assert runs[0].best == runs[1].best == runs[2].best
        assert runs[0].history == runs[1].history == runs[2].history


class TestNavigator:
    """Test cases for driving NavEnv with a heading search."""

    def test_line_search_distance_is_bounded(self, env, task_a):
        env.begin(task_a)
        for heading in (0.0, env.bearing_to_destination(), math.pi):
            dist = line_search_distance(env, heading, 5.0)
            assert 0.25 <= dist <= 5.0

    def test_action_respects_bounds(self, env, task_a):
        env.begin(task_a)
        action, result = metaheuristic_search(env, MetaConfig(population=6, iterations_per_step=3), np.random.default_rng(0))
        assert abs(action.psi) <= env.bounds.psi_max
        assert 0.0 <= action.dist_l <= 5.0
        assert len(result.history) == 3

    def test_same_seed_same_action(self, env, task_a):
        cfg = MetaConfig(method=Method.DE, population=6, iterations_per_step=3)
        env.begin(task_a)
        first, _ = metaheuristic_search(env, cfg, np.random.default_rng(4))
        env.begin(task_a)
        second, _ = metaheuristic_search(env, cfg, np.random.default_rng(4))
        assert first == second

    def test_policy_streams_per_task(self, env, task_a):
        policy = MetaheuristicPolicy(MetaConfig(method="GA", population=6, iterations_per_step=2))
        assert policy.name == "baseline:GA"
        actions = []
        for _ in range(2):
            _, obs = env.begin(task_a)
            policy.reset(env, task_a)
            actions.append(policy.act(obs))
        assert actions[0] == actions[1]
        assert len(policy.results) == 1

    def test_single_step_budget(self, env, task_a):
        task = replace(task_a, max_steps=1)
        record, rows = navigate_metaheuristic(env, task, MetaConfig(population=6, iterations_per_step=2))
        assert not record.success
        assert record.termination_reason == "step_budget"
        assert len(rows) == 2

    @pytest.mark.slow
    def test_approaches_destination(self, env, task_a):
        cfg = MetaConfig(method=Method.PSO, population=12, iterations_per_step=8)
        record, _ = navigate_metaheuristic(env, replace(task_a, max_steps=15), cfg)
        assert record.final_distance_km < record.straight_line_km
