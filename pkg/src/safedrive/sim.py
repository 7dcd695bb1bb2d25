"""Three-lane highway world: point-mass dynamics, actions, traffic, collisions.

Lanes are indexed 0, 1, 2 with centres at ``lane * lane_width``; lane 0 is
the rightmost lane and "left" means increasing ``y``.
Action ids are listed in :mod:`safedrive.actions`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .actions import N_ACTIONS, Action, Lateral, Longitudinal  # noqa: F401
from .config import SimConfig, TrafficConfig
from .safety import gap_rule, safe_fallback, time_to_collision


def longitudinal_accel(lon: Longitudinal, cfg: SimConfig) -> float:
    return (0.0, cfg.accel, cfg.brake, cfg.hard_brake)[lon]


@dataclass(frozen=True)
class LaneChange:
    target_lane: int
    steps_remaining: int


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    vx: float
    vy: float = 0.0
    ax: float = 0.0
    lane_change: LaneChange | None = None


@dataclass(frozen=True)
class TrafficVehicle:
    state: VehicleState
    desired_speed: float


@dataclass(frozen=True)
class StepEvents:
    collided: bool = False
    static_violation: bool = False
    proposed_action_replaced: bool = False
    episode_done: bool = False
    lane_change_rejected: bool = False


class EpisodeDone(RuntimeError):
    """Raised when stepping a world whose episode already finished."""


@dataclass(frozen=True)
class WorldState:
    """Immutable snapshot of one episode.

    ``noise`` holds the traffic controller's random draws for the whole
    episode, ``(episode_length, n_traffic, 2)`` uniforms taken from the spawn
    generator, so stepping is a pure function of the snapshot and the ego
    action. ``rng_state`` records the spawn generator's state after drawing.
    """

    ego: VehicleState
    traffic: tuple[TrafficVehicle, ...]
    t: int
    noise: np.ndarray = field(compare=False, repr=False)
    rng_state: dict = field(default_factory=dict, compare=False, repr=False)
    done: bool = False
    spawn_reduced: bool = False


def lane_center(lane: int, cfg: SimConfig) -> float:
    return lane * cfg.lane_width


def lane_of(y: float, cfg: SimConfig) -> int:
    """Index of the lane whose centre is nearest to ``y``."""
    lane = math.floor(y / cfg.lane_width + 0.5)
    return min(max(lane, 0), cfg.n_lanes - 1)


def occupied_lanes(s: VehicleState, cfg: SimConfig) -> tuple[int, ...]:
    """Lanes a vehicle blocks: its nearest lane plus any lane-change target."""
    lane = lane_of(s.y, cfg)
    if s.lane_change is not None and s.lane_change.target_lane != lane:
        return (lane, s.lane_change.target_lane)
    return (lane,)


def step_longitudinal(s: VehicleState, ax: float, dt: float, v_max: float) -> VehicleState:
    # position advances with the pre-update velocity
    x = s.x + s.vx * dt
    vx = min(max(s.vx + ax * dt, 0.0), v_max)
    return VehicleState(x, s.y, vx, s.vy, ax, s.lane_change)


def step_lateral(s: VehicleState, vy: float, dt: float, cfg: SimConfig) -> VehicleState:
    """Advance ``y`` by ``vy*dt``; finish a latched maneuver at the lane centre.

    The maneuver completes (``y`` snapped, ``vy`` zeroed) when the new
    position is within ``snap_tol`` of the target centre, has crossed it,
    or the latched step budget runs out.
    """
    y = s.y + vy * dt
    lc = s.lane_change
    if lc is None:
        return VehicleState(s.x, y, s.vx, vy, s.ax, None)
    center = lane_center(lc.target_lane, cfg)
    remaining = lc.steps_remaining - 1
    crossed = (center - s.y) * (center - y) < 0
    if abs(y - center) < cfg.snap_tol or crossed or remaining <= 0:
        return VehicleState(s.x, center, s.vx, 0.0, s.ax, None)
    return VehicleState(s.x, y, s.vx, vy, s.ax, LaneChange(lc.target_lane, remaining))


def apply_action(
    s: VehicleState, a: Action, cfg: SimConfig, v_max: float | None = None
) -> tuple[VehicleState, bool]:
    """Execute one action for one step of ``cfg.dt``.

    Returns the new state and whether a requested lane change was rejected
    because the target lane does not exist. A rejected lane change keeps the
    longitudinal component. Lateral commands are ignored while a maneuver is
    latched.
    """
    a = Action(a)
    v_cap = cfg.v_max if v_max is None else v_max
    rejected = False
    if s.lane_change is None and a.lateral != Lateral.KEEP:
        target = lane_of(s.y, cfg) + int(a.lateral)
        if 0 <= target < cfg.n_lanes:
            vy = int(a.lateral) * cfg.lane_width / cfg.lane_change_time
            s = VehicleState(s.x, s.y, s.vx, vy, s.ax, LaneChange(target, cfg.lane_change_steps))
        else:
            rejected = True
    vy = s.vy if s.lane_change is not None else 0.0
    s = step_longitudinal(s, longitudinal_accel(a.longitudinal, cfg), cfg.dt, v_cap)
    s = step_lateral(s, vy, cfg.dt, cfg)
    return s, rejected


def detect_collision(a: VehicleState, b: VehicleState, cfg: SimConfig) -> bool:
    return abs(a.x - b.x) < cfg.car_length and abs(a.y - b.y) < cfg.car_width


def nearest_in_lane(
    me: VehicleState, others: list[VehicleState], lane: int, cfg: SimConfig, ahead: bool
) -> VehicleState | None:
    best = None
    best_d = math.inf
    for o in others:
        if lane not in occupied_lanes(o, cfg):
            continue
        dx = o.x - me.x
        if (dx > 0) if ahead else (dx <= 0):
            if abs(dx) < best_d:
                best, best_d = o, abs(dx)
    return best


def _gap_ok(front: VehicleState | None, rear: VehicleState | None, params, cfg: SimConfig) -> bool:
    if front is None or rear is None:
        return True
    gap = front.x - rear.x - cfg.car_length
    return gap >= 0 and gap_rule(gap, rear.vx - front.vx, params)


def traffic_policy(
    v: TrafficVehicle,
    neighbors: list[VehicleState],
    draws: tuple[float, float],
    sim: SimConfig,
    traffic: TrafficConfig,
) -> Action:
    """Rule-based traffic driver.

    Longitudinal: if the minimum-gap rule fails against the lead in any
    occupied lane, take the TTC-ladder fallback with the driver's own
    thresholds; otherwise accelerate toward the desired speed, else maintain.
    Lateral: with probability ``p_lc * dt`` per step propose a lane change to
    a random existing adjacent lane; keep it only if the gap rule holds to
    both the target-lane front and rear vehicles. ``draws`` are two uniforms
    in [0, 1): the proposal draw and the direction draw.
    """
    s = v.state
    params = traffic.safety
    lon = None
    min_ttc = math.inf
    for lane in occupied_lanes(s, sim):
        lead = nearest_in_lane(s, neighbors, lane, sim, ahead=True)
        if lead is None:
            continue
        gap = max(lead.x - s.x - sim.car_length, 0.0)
        closing = s.vx - lead.vx
        if not gap_rule(gap, closing, params):
            min_ttc = min(min_ttc, time_to_collision(gap, closing))
            lon = Longitudinal.HARD_BRAKE
    if lon is not None:
        lon = safe_fallback(min_ttc, params).longitudinal
    elif s.vx < v.desired_speed - traffic.speed_tolerance:
        lon = Longitudinal.ACCELERATE
    else:
        lon = Longitudinal.MAINTAIN

    u, side = draws
    lat = Lateral.KEEP
    if s.lane_change is None and u < traffic.p_lc * sim.dt and lon != Longitudinal.HARD_BRAKE:
        lane = lane_of(s.y, sim)
        options = [d for d in (Lateral.LEFT, Lateral.RIGHT) if 0 <= lane + int(d) < sim.n_lanes]
        if options:
            direction = options[int(side * len(options))]
            target = lane + int(direction)
            front = nearest_in_lane(s, neighbors, target, sim, ahead=True)
            rear = nearest_in_lane(s, neighbors, target, sim, ahead=False)
            if _gap_ok(front, s, params, sim) and _gap_ok(s, rear, params, sim):
                lat = direction
    if lat != Lateral.KEEP and lon == Longitudinal.ACCELERATE:
        lon = Longitudinal.MAINTAIN
    return Action.compose(lon, lat)


def spawn_episode(
    sim: SimConfig,
    traffic: TrafficConfig,
    rng: np.random.Generator,
    traffic_range: tuple[int, int] | None = None,
) -> WorldState:
    """Ego at the centre lane plus a random subset of the six neighbour slots.

    Slots are (lane 0/1/2) x (front/rear); each chosen slot gets a vehicle at
    ``spawn_gap_min..spawn_gap_max`` metres ahead/behind, at its lane centre,
    driving at its desired speed. Placements overlapping an existing vehicle
    are retried; a slot that stays infeasible is dropped and flagged.
    """
    lo, hi = traffic_range if traffic_range is not None else (sim.traffic_min, sim.traffic_max)
    if not 0 <= lo <= hi <= 6:
        raise ValueError(f"traffic range must lie within [0, 6], got {(lo, hi)}")
    ego_lane = min(1, sim.n_lanes - 1)
    ego = VehicleState(x=0.0, y=lane_center(ego_lane, sim), vx=sim.ego_initial_speed)
    n = int(rng.integers(lo, hi + 1))
    slots = [(lane, side) for lane in range(3) for side in (1, -1)]
    chosen = rng.choice(len(slots), size=n, replace=False) if n else []
    placed: list[TrafficVehicle] = []
    reduced = False
    for idx in sorted(int(i) for i in chosen):
        lane, side = slots[idx]
        lane = ego_lane + (lane - 1)
        speed = float(rng.uniform(traffic.desired_speed_min, traffic.desired_speed_max))
        for _ in range(sim.spawn_retries):
            dx = side * float(rng.uniform(sim.spawn_gap_min, sim.spawn_gap_max))
            cand = VehicleState(x=dx, y=lane_center(lane, sim), vx=speed)
            if 0 <= lane < sim.n_lanes and not any(
                detect_collision(cand, o, sim) for o in [ego] + [p.state for p in placed]
            ):
                placed.append(TrafficVehicle(cand, speed))
                break
        else:
            reduced = True
    noise = rng.random((sim.episode_length, len(placed), 2))
    noise.flags.writeable = False
    return WorldState(
        ego=ego,
        traffic=tuple(placed),
        t=0,
        noise=noise,
        rng_state=rng.bit_generator.state,
        spawn_reduced=reduced,
    )


def step_world(
    w: WorldState, ego_action: Action, sim: SimConfig, traffic: TrafficConfig
) -> tuple[WorldState, StepEvents]:
    """Advance every vehicle one ``dt``; traffic decisions use the pre-step world."""
    if w.done:
        raise EpisodeDone("cannot step a finished episode")
    everyone = [w.ego] + [tv.state for tv in w.traffic]
    actions = []
    for i, tv in enumerate(w.traffic):
        others = everyone[: i + 1] + everyone[i + 2 :]
        u, side = w.noise[w.t, i]
        actions.append(traffic_policy(tv, others, (float(u), float(side)), sim, traffic))
    ego, rejected = apply_action(w.ego, ego_action, sim)
    moved = tuple(
        TrafficVehicle(apply_action(tv.state, a, sim, v_max=tv.desired_speed)[0], tv.desired_speed)
        for tv, a in zip(w.traffic, actions)
    )
    collided = any(detect_collision(ego, tv.state, sim) for tv in moved)
    t = w.t + 1
    done = collided or t >= sim.episode_length
    nw = WorldState(ego, moved, t, w.noise, w.rng_state, done, w.spawn_reduced)
    return nw, StepEvents(collided=collided, episode_done=done, lane_change_rejected=rejected)
