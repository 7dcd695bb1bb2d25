"""Action filter built on the handcrafted safety rules."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .actions import Action, Lateral
from .config import SafetyParams, SimConfig
from .safety import gap_rule, safe_fallback, time_to_collision
from .sim import VehicleState, WorldState, lane_of, nearest_in_lane, occupied_lanes


@dataclass(frozen=True)
class FilterOutcome:
    executed: Action
    violated: bool
    original: Action


def relevant_checks(
    w: WorldState, proposed: Action, sim: SimConfig
) -> list[tuple[float, float]]:
    """(gap, closing speed) pairs the proposed action must respect.

    Always the lead in every lane the ego occupies; for a lane change that
    can start this step, also the front and rear vehicle in the target lane.
    Gaps are bumper-to-bumper and clamped at zero.
    """
    ego = w.ego
    others = [tv.state for tv in w.traffic]
    checks = []

    def add(o: VehicleState | None, front: bool) -> None:
        if o is None or abs(o.x - ego.x) > sim.sensing_range:
            return
        gap = max(abs(o.x - ego.x) - sim.car_length, 0.0)
        closing = ego.vx - o.vx if front else o.vx - ego.vx
        checks.append((gap, closing))

    for lane in occupied_lanes(ego, sim):
        add(nearest_in_lane(ego, others, lane, sim, ahead=True), front=True)
    if ego.lane_change is None and proposed.lateral != Lateral.KEEP:
        target = lane_of(ego.y, sim) + int(proposed.lateral)
        if 0 <= target < sim.n_lanes:
            add(nearest_in_lane(ego, others, target, sim, ahead=True), front=True)
            add(nearest_in_lane(ego, others, target, sim, ahead=False), front=False)
    return checks


def filter_action(
    w: WorldState, proposed: Action, p: SafetyParams, sim: SimConfig
) -> FilterOutcome:
    proposed = Action(proposed)
    checks = relevant_checks(w, proposed, sim)
    if all(gap_rule(gap, closing, p) for gap, closing in checks):
        return FilterOutcome(executed=proposed, violated=False, original=proposed)
    ttc = min((time_to_collision(g, c) for g, c in checks), default=math.inf)
    return FilterOutcome(executed=safe_fallback(ttc, p), violated=True, original=proposed)
