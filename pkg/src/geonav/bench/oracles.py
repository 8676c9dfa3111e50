"""Self-contained correctness checks backing the fast reproduction scenarios.

Each check returns a flat dict of observed values that scenario assertions
can reference by name.
"""

import math
import time
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ..core.models import EpisodeRecord, FieldSample, GeoPoint, NavTask
from ..eval.metrics import heading_deviation, spl, success_rate
from ..learn.neural import Mlp, backward, forward
from ..sim.field_model import FieldProvider, GradientSet, derive_elements_array, sample
from ..sim.nav_env import objective_f
from ..sim.reward import predicted_heading


def element_identities(n: int, rng: np.random.Generator, scale_nt: float = 50_000.0) -> Dict[str, float]:
    """Round-trip components -> elements -> components over ``n`` random vectors.

    A handful of vertical and near-vertical vectors are appended to exercise
    the degenerate-declination flag.
    """
    started = time.perf_counter()
    vectors = rng.normal(0.0, scale_nt, size=(n, 3))
    vertical = np.array([
        [0.0, 0.0, 45_000.0], [0.0, 0.0, -45_000.0], [1e-12, -1e-12, 30_000.0], [0.0, 0.0, 0.0],
    ])
    elements = derive_elements_array(np.vstack([vectors, vertical]))
    bh, d, incl, bf = elements["BH"], elements["D"], elements["I"], elements["BF"]
    rebuilt = np.stack([bh * np.cos(d), bh * np.sin(d), bf * np.sin(incl)], axis=-1)
    original = np.vstack([vectors, vertical])
    norm = np.linalg.norm(original, axis=-1)
    rel = np.linalg.norm(rebuilt - original, axis=-1) / np.where(norm > 0.0, norm, 1.0)
    stacked = np.stack([elements[k] for k in ("BF", "BH", "D", "I")], axis=-1)
    return {
        "max_rel_error": float(rel.max()),
        "nan_count": float(np.isnan(stacked).sum()),
        "degenerate_cases": float(len(vertical)),
        "degenerate_flagged": float(elements["degenerate"][n:].sum()),
        "spurious_degenerate": float(elements["degenerate"][:n].sum()),
        "elapsed_s": time.perf_counter() - started,
    }


def finite_difference_error(
    net: Mlp,
    x: np.ndarray,
    upstream: np.ndarray,
    rng: np.random.Generator,
    n_coords: int = 40,
    h: float = 1e-5,
) -> float:
    """Max relative error between backprop and central differences of sum(upstream * net(x)).

    ``n_coords`` parameter coordinates are checked, drawn uniformly over all
    weight and bias entries, plus every input coordinate.
    """
    grads, input_grad = backward(net, x, upstream)
    params = net.params()
    analytic = grads.params()

    def loss() -> float:
        return float(np.sum(upstream * forward(net, x)))

    def rel(a: float, b: float) -> float:
        return abs(a - b) / max(abs(a), abs(b), 1e-6)

    sizes = np.array([p.size for p in params])
    worst = 0.0
    for flat_index in rng.choice(int(sizes.sum()), size=min(n_coords, int(sizes.sum())), replace=False):
        k = int(np.searchsorted(np.cumsum(sizes), flat_index, side="right"))
        local = flat_index - (int(sizes[:k].sum()) if k else 0)
        idx = np.unravel_index(local, params[k].shape)
        saved = params[k][idx]
        params[k][idx] = saved + h
        up = loss()
        params[k][idx] = saved - h
        down = loss()
        params[k][idx] = saved
        worst = max(worst, rel(analytic[k][idx], (up - down) / (2.0 * h)))
    for idx in np.ndindex(*x.shape):
        saved = x[idx]
        x[idx] = saved + h
        up = loss()
        x[idx] = saved - h
        down = loss()
        x[idx] = saved
        worst = max(worst, rel(input_grad[idx], (up - down) / (2.0 * h)))
    return worst


def gradient_check(
    architectures: Sequence[Tuple[Sequence[int], str]],
    n_params: int,
    rng: np.random.Generator,
    batch: int = 4,
) -> Dict[str, float]:
    """Backprop against finite differences over ``n_params`` random initializations per architecture."""
    started = time.perf_counter()
    worst = 0.0
    for dims, activation in architectures:
        for _ in range(n_params):
            net = Mlp(dims, activation, rng=rng)
            x = rng.uniform(-1.0, 1.0, size=(batch, dims[0]))
            upstream = rng.normal(size=(batch, dims[-1]))
            worst = max(worst, finite_difference_error(net, x, upstream, rng))
    return {
        "max_rel_error": worst,
        "architectures": float(len(architectures)),
        "elapsed_s": time.perf_counter() - started,
    }


def _linear_sample(d: float, bh: float) -> FieldSample:
    return FieldSample(bf=bh, bh=bh, bx=bh * math.cos(d), by=bh * math.sin(d), bz=0.0, decl_d=d, incl_i=0.0)


def _pair_objective(values: np.ndarray, target: np.ndarray, origin: np.ndarray) -> np.ndarray:
    return np.sum(((values - target) / (origin - target)) ** 2, axis=-1)


def heading_oracle(
    n_states: int,
    rng: np.random.Generator,
    n_headings: int = 3600,
    zeta: float = 0.05,
    step_km: float = 5.0,
    max_steps: int = 500,
) -> Dict[str, float]:
    """Parallel-approach heading against an exhaustive heading scan in a linear field.

    D and BH vary linearly with position through random, well-conditioned
    gradients. With the probe distance equal to the distance to the point
    where both deficits vanish, the exhaustive argmin of next-step F is the
    heading toward that point. Each state is then flown along the predicted
    heading with fixed steps to check that F decreases monotonically.
    """
    started = time.perf_counter()
    angles = 2.0 * math.pi * np.arange(n_headings) / n_headings
    circle = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    worst_heading, violations, unconverged = 0.0, 0, 0
    for _ in range(n_states):
        while True:
            g = rng.uniform(-1.0, 1.0, size=(2, 2)) * np.array([[1e-3], [20.0]])
            if abs(np.linalg.det(g / np.linalg.norm(g, axis=1, keepdims=True))) > 0.2:
                break
        goal_xy = rng.uniform(-40.0, 40.0, size=2)
        theta = rng.uniform(-math.pi, math.pi)
        pos = goal_xy + rng.uniform(10.0, 60.0) * np.array([math.cos(theta), math.sin(theta)])
        base = np.array([rng.uniform(-0.3, 0.3), rng.uniform(20_000.0, 40_000.0)])

        def values(xy: np.ndarray) -> np.ndarray:
            return base + (np.asarray(xy) - goal_xy) @ g.T

        target = values(goal_xy)
        origin = values(pos)
        grads = GradientSet({"D": (g[0, 0], g[0, 1]), "BH": (g[1, 0], g[1, 1])})
        here = values(pos)
        lam = predicted_heading(_linear_sample(*here), _linear_sample(*target), grads)

        radius = float(np.linalg.norm(goal_xy - pos))
        scan = _pair_objective(values(pos + radius * circle), target, origin)
        best = angles[int(np.argmin(scan))]
        worst_heading = max(worst_heading, abs(math.remainder(lam - best, 2.0 * math.pi)))

        f_prev = float(_pair_objective(here, target, origin))
        for _ in range(max_steps):
            if f_prev < zeta:
                break
            cur = values(pos)
            lam = predicted_heading(_linear_sample(*cur), _linear_sample(*target), grads)
            step = min(step_km, float(np.linalg.norm(goal_xy - pos)))
            pos = pos + step * np.array([math.cos(lam), math.sin(lam)])
            f_now = float(_pair_objective(values(pos), target, origin))
            if not f_now < f_prev:
                violations += 1
                break
            f_prev = f_now
        else:
            unconverged += 1
    return {
        "max_heading_error_rad": worst_heading,
        "monotone_violations": float(violations),
        "unconverged": float(unconverged),
        "n_states": float(n_states),
        "elapsed_s": time.perf_counter() - started,
    }


def objective_fixed_points(provider: FieldProvider, tasks: Sequence[NavTask]) -> Dict[str, float]:
    """F at every task's origin (expected 3) and destination (expected 0)."""
    started = time.perf_counter()
    origin_err, dest_val = 0.0, 0.0
    for task in tasks:
        o = sample(provider, task.origin)
        d = sample(provider, task.destination)
        origin_err = max(origin_err, abs(objective_f(o, d, o) - 3.0))
        dest_val = max(dest_val, abs(objective_f(d, d, o)))
    return {
        "max_origin_error": origin_err,
        "max_destination_value": dest_val,
        "n_tasks": float(len(tasks)),
        "elapsed_s": time.perf_counter() - started,
    }


def _record(straight: float, path: float, success: bool, headings: List[float], bearings: List[float]) -> EpisodeRecord:
    task = NavTask(GeoPoint(100.0, -20.0), GeoPoint(100.4, -20.0))
    return EpisodeRecord(
        task=task, success=success, path_length_km=path, straight_line_km=straight, steps=len(headings),
        final_distance_km=0.0 if success else straight, termination_reason="goal" if success else "step_budget",
        headings=headings, bearings=bearings,
    )


def metric_unit_cases() -> Dict[str, float]:
    """Hand-computed metric cases; every ``*_error`` field is expected to be exactly 0."""
    started = time.perf_counter()
    optimal = [_record(40.0, 40.0, True, [0.0], [0.0]) for _ in range(5)]
    mixed = optimal[:2] + [_record(40.0, 80.0, True, [0.0], [0.0]), _record(40.0, 10.0, False, [0.0], [0.0])]
    hand = [_record(10.0, 10.0, True, [0.5, -0.25, 0.0], [0.0, 0.0, 0.0])]
    mae, rmse = heading_deviation(hand)
    spl_all = spl(optimal)
    return {
        "spl_all_optimal_permille": spl_all,
        "spl_all_optimal_error": abs(spl_all - 1000.0),
        "spl_mixed_error": abs(spl(mixed) - 625.0),
        "spl_minus_sr_mixed": spl(mixed) - success_rate(mixed),
        "heading_mae_error": abs(mae - 0.75 / 3.0),
        "heading_rmse_error": abs(rmse - math.sqrt(0.3125 / 3.0)),
        "elapsed_s": time.perf_counter() - started,
    }
