"""Battery metrics: SR, SPL, heading MAE/RMSE, NE and TNT.

Sums use ``math.fsum`` so every aggregate is independent of task order.
"""

import math
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from ..core.exceptions import EmptyBatteryError
from ..core.models import EpisodeRecord, MetricsReport

BOX_METRICS = ("heading_mae_rad", "heading_rmse_rad", "ne_km", "tnt_steps")


def _require(records: Sequence[EpisodeRecord]) -> None:
    if not records:
        raise EmptyBatteryError("metrics need at least one episode")


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values) if values else math.nan


def success_rate(records: Sequence[EpisodeRecord]) -> float:
    """Successes per thousand episodes."""
    _require(records)
    return 1000.0 * sum(1 for r in records if r.success) / len(records)


def spl(records: Sequence[EpisodeRecord]) -> float:
    """Success weighted by path length, per mille.

    Each success contributes l / max(p, l); failures contribute 0.
    """
    _require(records)
    terms = [
        r.straight_line_km / max(r.path_length_km, r.straight_line_km) if r.success else 0.0
        for r in records
    ]
    return 1000.0 * math.fsum(terms) / len(records)


def heading_deviation(records: Sequence[EpisodeRecord]) -> Tuple[float, float]:
    """(MAE, RMSE) in radians of executed heading against bearing-to-goal, over all steps."""
    deviations = [d for r in records for d in r.heading_deviations]
    if not deviations:
        return 0.0, 0.0
    mae = math.fsum(deviations) / len(deviations)
    rmse = math.sqrt(math.fsum(d * d for d in deviations) / len(deviations))
    return mae, rmse


def episode_heading_deviation(record: EpisodeRecord) -> Tuple[float, float]:
    return heading_deviation([record])


def navigation_error(records: Sequence[EpisodeRecord], success_only: bool = False) -> float:
    """Mean final planar distance to the destination (km); NaN when nothing qualifies."""
    return _mean([r.final_distance_km for r in records if r.success or not success_only])


def navigation_time(records: Sequence[EpisodeRecord], success_only: bool = False) -> float:
    """Mean steps to termination; NaN when nothing qualifies."""
    return _mean([float(r.steps) for r in records if r.success or not success_only])


def summarize(records: Sequence[EpisodeRecord]) -> MetricsReport:
    _require(records)
    mae, rmse = heading_deviation(records)
    return MetricsReport(
        sr_permille=success_rate(records),
        spl_permille=spl(records),
        heading_mae_rad=mae,
        heading_rmse_rad=rmse,
        ne_km=navigation_error(records),
        ne_success_km=navigation_error(records, success_only=True),
        tnt_steps=navigation_time(records),
        tnt_success_steps=navigation_time(records, success_only=True),
        n_tasks=len(records),
    )


def box_stats(values: Sequence[float]) -> Dict[str, float]:
    """Quartiles, 1.5 IQR whiskers and outlier count of one sample."""
    x = np.sort(np.asarray([v for v in values if math.isfinite(v)], dtype=np.float64))
    if x.size == 0:
        return {k: math.nan for k in ("q1", "median", "q3", "whisker_low", "whisker_high")} | {"n_outliers": 0, "n": 0}
    q1, median, q3 = np.percentile(x, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    inside = x[(x >= q1 - 1.5 * iqr) & (x <= q3 + 1.5 * iqr)]
    return {
        "q1": float(q1),
        "median": float(median),
        "q3": float(q3),
        "whisker_low": float(inside.min()),
        "whisker_high": float(inside.max()),
        "n_outliers": int(x.size - inside.size),
        "n": int(x.size),
    }


def per_episode_frame(records: Sequence[EpisodeRecord]) -> pd.DataFrame:
    rows: List[dict] = []
    for r in records:
        mae, rmse = episode_heading_deviation(r)
        rows.append({
            "task_id": r.task.task_id,
            "success": int(r.success),
            "termination": r.termination_reason,
            "steps": r.steps,
            "path_length_km": r.path_length_km,
            "straight_line_km": r.straight_line_km,
            "final_distance_km": r.final_distance_km,
            "heading_mae_rad": mae,
            "heading_rmse_rad": rmse,
        })
    return pd.DataFrame(rows)


def box_plot_frame(records: Sequence[EpisodeRecord]) -> pd.DataFrame:
    """Box-plot source data for per-episode heading MAE, heading RMSE, NE and TNT."""
    frame = per_episode_frame(records)
    sources = {
        "heading_mae_rad": frame["heading_mae_rad"],
        "heading_rmse_rad": frame["heading_rmse_rad"],
        "ne_km": frame["final_distance_km"],
        "tnt_steps": frame["steps"].astype(float),
    }
    return pd.DataFrame([{"metric": name, **box_stats(list(sources[name]))} for name in BOX_METRICS])
