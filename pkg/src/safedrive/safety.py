"""Handcrafted safety rules: minimum-gap predicate, TTC and the fallback ladder."""

from __future__ import annotations

import math

from .actions import Action
from .config import SafetyParams


def gap_rule(d_tv: float, v_tv: float, p: SafetyParams) -> bool:
    """True when the gap to a traffic vehicle is safe.

    ``d_tv`` is the bumper-to-bumper gap in metres and ``v_tv`` the closing
    speed, positive when the gap is shrinking. A receding vehicle (negative
    ``v_tv``) enlarges the margin.
    """
    return d_tv - p.T_min * v_tv > p.d_min


def time_to_collision(d: float, v_closing: float) -> float:
    if v_closing > 0:
        return d / v_closing
    return math.inf


def safe_fallback(ttc: float, p: SafetyParams) -> Action:
    if ttc <= p.T_hb:
        return Action.HARD_BRAKE
    if ttc <= p.T_b:
        return Action.BRAKE
    return Action.MAINTAIN
