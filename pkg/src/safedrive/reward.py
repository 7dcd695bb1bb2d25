"""Shaped driving reward: speed tracking, lane keeping and headway."""

from __future__ import annotations

import math

import numpy as np

from .affordance import CENTER_FRONT, extract_affordance, slot_index
from .config import RewardParams, SimConfig
from .sim import WorldState, lane_center, lane_of


def reward_speed(v_ex: float, v_des: float) -> float:
    return math.exp(-((v_ex - v_des) ** 2) / 10.0) - 1.0


def reward_lane(d_ey: float, y_des: float) -> float:
    return math.exp(-((d_ey - y_des) ** 2) / 10.0) - 1.0


def reward_headway(d_lead: float, d_safe: float) -> float:
    if d_lead < d_safe:
        return math.exp(-((d_lead - d_safe) ** 2) / (10.0 * d_safe)) - 1.0
    return 0.0


def safe_distance(v_ex: float, p: RewardParams) -> float:
    return max(p.d_min, p.headway_time * v_ex)


def desired_lateral(w: WorldState, p: RewardParams, sim: SimConfig) -> float:
    if p.lane_policy == "fixed":
        return lane_center(p.fixed_lane, sim)
    return lane_center(lane_of(w.ego.y, sim), sim)


def reward_components(
    w: WorldState, p: RewardParams, sim: SimConfig, affordance: np.ndarray | None = None
) -> tuple[float, float, float]:
    """Weighted (speed, lane, headway) terms for the current world."""
    if affordance is None:
        affordance = extract_affordance(w, sim)
    v_ex = w.ego.vx
    d_lead = float(affordance[slot_index(CENTER_FRONT, 0)])
    r_v = p.w_speed * reward_speed(v_ex, p.v_des)
    r_y = p.w_lane * reward_lane(w.ego.y, desired_lateral(w, p, sim))
    r_x = p.w_headway * reward_headway(d_lead, safe_distance(v_ex, p))
    return r_v, r_y, r_x


def total_reward(
    w: WorldState, p: RewardParams, sim: SimConfig, affordance: np.ndarray | None = None
) -> float:
    return sum(reward_components(w, p, sim, affordance))
