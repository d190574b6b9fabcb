"""Pure-pursuit path tracker used as the (black-box) operating controller.

Deliberately oblivious to obstacles: it sees only the plant state and its
own reference path. Scenario variants differ purely in which path it gets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .paths import PathExtentError, ReferencePath
from .vehicle import PlantState, RateInput


@dataclass(frozen=True)
class PursuitConfig:
    lookahead_time: float = 0.5  # s
    wheelbase: float = 3.0       # m
    speed_gain: float = 1.0      # 1/s on (v_ref - v_x)

    def __post_init__(self):
        if not self.lookahead_time > 0.0:
            raise ValueError("lookahead_time must be positive")


def pursuit_control(plant: PlantState, path: ReferencePath, cfg: PursuitConfig,
                    ts: float, ddelta_limits, daccel_limits,
                    accel_limits=(-6.0, 2.0)) -> RateInput:
    """Rate input steering toward the lookahead goal point.

    Falls back to straight-line braking when the path is exhausted or the
    goal point degenerates (behind the vehicle).
    """
    try:
        station, _, _ = path.project(plant.x, plant.y)
    except PathExtentError:
        return _braking(plant, cfg, ts, ddelta_limits, daccel_limits,
                        accel_limits)
    l_d = max(plant.vx * cfg.lookahead_time, 1e-3)
    goal_s = station + l_d
    if goal_s > path.length:
        return _braking(plant, cfg, ts, ddelta_limits, daccel_limits,
                        accel_limits)
    gx, gy = path.point_at(goal_s)
    alpha = np.arctan2(gy - plant.y, gx - plant.x) - plant.yaw
    alpha = (alpha + np.pi) % (2 * np.pi) - np.pi
    if abs(alpha) > np.pi / 2:
        return _braking(plant, cfg, ts, ddelta_limits, daccel_limits,
                        accel_limits)
    dist = np.hypot(gx - plant.x, gy - plant.y)
    kappa = 2.0 * np.sin(alpha) / max(dist, 1e-6)
    delta_des = np.arctan(cfg.wheelbase * kappa)
    accel_des = cfg.speed_gain * (path.speed - plant.vx)
    accel_des = np.clip(accel_des, *accel_limits)
    return RateInput(
        float(np.clip((delta_des - plant.delta) / ts, *ddelta_limits)),
        float(np.clip((accel_des - plant.accel) / ts, *daccel_limits)),
    )


def _braking(plant, cfg, ts, ddelta_limits, daccel_limits, accel_limits):
    want = (accel_limits[0] - plant.accel) / ts
    return RateInput(0.0, float(np.clip(want, *daccel_limits)))
