"""Shaped navigation reward: goal bonus, objective trend and parallel-approach heading."""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

from ..core.exceptions import IndeterminateHeadingError
from ..core.models import FieldSample, angular_distance
from .field_model import GradientSet


class RewardVariant(str, Enum):
    SR = "SR"  # goal bonus only
    ER = "ER"  # goal bonus plus objective trend
    ST = "ST"  # extrinsic plus intrinsic heading term


@dataclass(frozen=True)
class RewardConfig:
    r_goal: float = 200.0
    alpha: float = 10.0
    beta: float = 1.0
    variant: RewardVariant = RewardVariant.ST
    zeta: float = 0.05
    heading_pair: Tuple[str, str] = ("D", "BH")
    literal_trend_sign: bool = False

    def __post_init__(self):
        if self.r_goal <= 0:
            raise ValueError(f"r_goal must be positive: {self.r_goal}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if len(set(self.heading_pair)) != 2 or not set(self.heading_pair) <= {"D", "I", "BH"}:
            raise ValueError(f"heading_pair must name two of D, I, BH: {self.heading_pair}")

    @property
    def uses_intrinsic(self) -> bool:
        return self.variant is RewardVariant.ST and self.beta > 0


def extrinsic_reward(f_now: float, f_prev: float, cfg: RewardConfig) -> float:
    """Goal bonus below the threshold, otherwise the weighted objective trend.

    Approaching the destination (F decreasing) is rewarded. With
    ``literal_trend_sign`` the trend is taken as F(t) - F(t-1) instead.
    """
    if f_now < cfg.zeta:
        return cfg.r_goal
    if cfg.literal_trend_sign:
        return cfg.alpha * (f_now - f_prev)
    return cfg.alpha * (f_prev - f_now)


def predicted_heading(current: FieldSample, dest: FieldSample, grads: GradientSet,
                      pair: Tuple[str, str] = ("D", "BH")) -> float:
    """Heading along which both elements of ``pair`` close their deficits at the same rate.

    Numerator and denominator follow the parallel-approach relation; both are
    multiplied by the sign of the gradient determinant so that atan2 returns
    the approaching heading rather than its opposite.
    """
    e1, e2 = pair
    d1 = current.element(e1) - dest.element(e1)
    d2 = current.element(e2) - dest.element(e2)
    if e1 == "D":
        d1 = math.remainder(d1, 2.0 * math.pi)
    if e2 == "D":
        d2 = math.remainder(d2, 2.0 * math.pi)
    g1x, g1y = grads[e1]
    g2x, g2y = grads[e2]
    num = d1 * g2x - d2 * g1x
    den = d2 * g1y - d1 * g2y
    det = g1x * g2y - g1y * g2x
    if det < 0:
        num, den = -num, -den
    if num == 0.0 and den == 0.0:
        raise IndeterminateHeadingError("parallel-approach heading undefined")
    return math.atan2(num, den)


def intrinsic_reward(lambda_actual: float, lambda_pred: float, cfg: RewardConfig) -> float:
    """beta * (pi/4 - |wrapped heading error|)."""
    return cfg.beta * (math.pi / 4.0 - angular_distance(lambda_actual, lambda_pred))


def total_reward(f_now: float, f_prev: float, cfg: RewardConfig,
                 lambda_actual: Optional[float] = None,
                 lambda_pred: Optional[float] = None) -> Tuple[float, float, float]:
    """(total, extrinsic, intrinsic) for one transition under ``cfg.variant``.

    A missing predicted heading (indeterminate) contributes 0 intrinsic reward.
    """
    at_goal = f_now < cfg.zeta
    if cfg.variant is RewardVariant.SR:
        extrinsic = cfg.r_goal if at_goal else 0.0
        return extrinsic, extrinsic, 0.0
    extrinsic = extrinsic_reward(f_now, f_prev, cfg)
    intrinsic = 0.0
    if cfg.variant is RewardVariant.ST and lambda_actual is not None and lambda_pred is not None:
        intrinsic = intrinsic_reward(lambda_actual, lambda_pred, cfg)
    return extrinsic + intrinsic, extrinsic, intrinsic
