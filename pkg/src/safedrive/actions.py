"""The eight discrete driving actions.

Action ids are fixed::

    id  longitudinal  lateral
    0   maintain      keep
    1   accelerate    keep
    2   brake         keep
    3   hard_brake    keep
    4   maintain      left
    5   brake         left
    6   maintain      right
    7   brake         right
"""

from __future__ import annotations

import enum


class Longitudinal(enum.IntEnum):
    MAINTAIN = 0
    ACCELERATE = 1
    BRAKE = 2
    HARD_BRAKE = 3


class Lateral(enum.IntEnum):
    KEEP = 0
    LEFT = 1
    RIGHT = -1


class Action(enum.IntEnum):
    MAINTAIN = 0
    ACCELERATE = 1
    BRAKE = 2
    HARD_BRAKE = 3
    LEFT = 4
    BRAKE_LEFT = 5
    RIGHT = 6
    BRAKE_RIGHT = 7

    @property
    def longitudinal(self) -> Longitudinal:
        return _DECOMPOSE[self][0]

    @property
    def lateral(self) -> Lateral:
        return _DECOMPOSE[self][1]

    @classmethod
    def compose(cls, longitudinal: Longitudinal, lateral: Lateral) -> "Action":
        try:
            return _COMPOSE[(Longitudinal(longitudinal), Lateral(lateral))]
        except KeyError:
            raise ValueError(f"no action for ({longitudinal!r}, {lateral!r})") from None


N_ACTIONS = 8

_DECOMPOSE = {
    Action.MAINTAIN: (Longitudinal.MAINTAIN, Lateral.KEEP),
    Action.ACCELERATE: (Longitudinal.ACCELERATE, Lateral.KEEP),
    Action.BRAKE: (Longitudinal.BRAKE, Lateral.KEEP),
    Action.HARD_BRAKE: (Longitudinal.HARD_BRAKE, Lateral.KEEP),
    Action.LEFT: (Longitudinal.MAINTAIN, Lateral.LEFT),
    Action.BRAKE_LEFT: (Longitudinal.BRAKE, Lateral.LEFT),
    Action.RIGHT: (Longitudinal.MAINTAIN, Lateral.RIGHT),
    Action.BRAKE_RIGHT: (Longitudinal.BRAKE, Lateral.RIGHT),
}
_COMPOSE = {v: k for k, v in _DECOMPOSE.items()}
