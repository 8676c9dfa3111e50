"""Report files for evaluated batteries."""

from pathlib import Path
from typing import Dict, List, Sequence, Union

import pandas as pd

from ..core.models import EpisodeRecord, MetricsReport
from .metrics import box_plot_frame, per_episode_frame

FLOAT_FORMAT = "%.10g"
COMPARISON_COLUMNS = [
    "policy", "region", "battery", "sr_permille", "spl_permille", "heading_mae_rad",
    "heading_rmse_rad", "ne_km", "ne_success_km", "tnt_steps", "tnt_success_steps", "n_tasks",
]


def _write(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_episode_records(records: Sequence[EpisodeRecord], path: Union[str, Path]) -> Path:
    return _write(per_episode_frame(records), path)


def write_metrics(report: MetricsReport, policy: str, region: str, battery: str, path: Union[str, Path]) -> Path:
    row = {"policy": policy, "region": region, "battery": battery, **report.as_row()}
    return _write(pd.DataFrame([row], columns=COMPARISON_COLUMNS), path)


def write_box_stats(records: Sequence[EpisodeRecord], path: Union[str, Path]) -> Path:
    return _write(box_plot_frame(records), path)


def comparison_frame(rows: List[Dict]) -> pd.DataFrame:
    """Policies as rows, metric columns in table order."""
    return pd.DataFrame(rows, columns=COMPARISON_COLUMNS)


def write_comparison(rows: List[Dict], path: Union[str, Path]) -> Path:
    return _write(comparison_frame(rows), path)


def read_metrics(path: Union[str, Path]) -> Dict:
    """The single metrics row written by ``write_metrics``."""
    frame = pd.read_csv(path)
    return frame.iloc[0].to_dict()
