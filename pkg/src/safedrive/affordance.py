"""The 20-dimensional affordance state seen by the agent.

Layout (index: meaning)::

    0-2    left-lane front:   dx, dv, dy
    3-5    centre-lane front: dx, dv, dy
    6-8    right-lane front:  dx, dv, dy
    9-11   left-lane rear:    dx, dv, dy
    12-14  centre-lane rear:  dx, dv, dy
    15-17  right-lane rear:   dx, dv, dy
    18     ego longitudinal velocity
    19     ego lateral position

Lanes are relative to the ego's lane (nearest lane centre). ``dx`` and ``dv``
are signed other-minus-ego centre distance and longitudinal velocity, ``dy``
is the other vehicle's lateral offset from the ego. An empty slot reads
``(+d_max, 0, lane offset)`` in front and ``(-d_max, 0, lane offset)``
behind, where the lane offset is the nominal ``dy`` of that lane.

Normalisation divides distances by ``d_max``, velocities by ``v_max`` and
lateral quantities by the road width (``n_lanes * lane_width``).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .config import SimConfig
from .sim import VehicleState, WorldState, lane_of

AFFORDANCE_DIM = 20

# slot order: (lane offset, side); side +1 front, -1 rear
SLOTS = ((1, 1), (0, 1), (-1, 1), (1, -1), (0, -1), (-1, -1))
SLOT_NAMES = ("left_front", "center_front", "right_front", "left_rear", "center_rear", "right_rear")
CENTER_FRONT = 1
CENTER_REAR = 4
EGO_VX = 18
EGO_Y = 19

FEATURE_NAMES = tuple(
    f"{slot}_{q}" for slot in SLOT_NAMES for q in ("dx", "dv", "dy")
) + ("ego_vx", "ego_y")


def slot_index(slot: int, quantity: int) -> int:
    """Vector index of ``quantity`` (0=dx, 1=dv, 2=dy) in ``slot``."""
    return 3 * slot + quantity


def nearest_neighbors(w: WorldState, cfg: SimConfig) -> list[VehicleState | None]:
    ego = w.ego
    ego_lane = lane_of(ego.y, cfg)
    slots: list[VehicleState | None] = [None] * 6
    best = [np.inf] * 6
    for tv in w.traffic:
        o = tv.state
        dx = o.x - ego.x
        if abs(dx) > cfg.sensing_range:
            continue
        rel_lane = lane_of(o.y, cfg) - ego_lane
        if rel_lane not in (-1, 0, 1):
            continue
        k = SLOTS.index((rel_lane, 1 if dx >= 0 else -1))
        if abs(dx) < best[k]:
            best[k] = abs(dx)
            slots[k] = o
    return slots


def extract_affordance(w: WorldState, cfg: SimConfig) -> np.ndarray:
    ego = w.ego
    out = np.empty(AFFORDANCE_DIM)
    for k, o in enumerate(nearest_neighbors(w, cfg)):
        lane_off, side = SLOTS[k]
        if o is None:
            out[3 * k : 3 * k + 3] = (side * cfg.sensing_range, 0.0, lane_off * cfg.lane_width)
        else:
            out[3 * k : 3 * k + 3] = (o.x - ego.x, o.vx - ego.vx, o.y - ego.y)
    out[EGO_VX] = ego.vx
    out[EGO_Y] = ego.y
    return out


@lru_cache(maxsize=16)
def _scale(cfg: SimConfig) -> np.ndarray:
    s = np.tile([cfg.sensing_range, cfg.v_max, cfg.road_width], 6)
    s = np.concatenate([s, [cfg.v_max, cfg.road_width]])
    s.flags.writeable = False
    return s


def normalize(v: np.ndarray, cfg: SimConfig) -> np.ndarray:
    return np.asarray(v, dtype=float) / _scale(cfg)


def denormalize(v: np.ndarray, cfg: SimConfig) -> np.ndarray:
    return np.asarray(v, dtype=float) * _scale(cfg)
