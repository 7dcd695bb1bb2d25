import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_world
from safedrive.actions import N_ACTIONS, Action, Lateral, Longitudinal
from safedrive.config import SimConfig, TrafficConfig
from safedrive.sim import (
    EpisodeDone,
    LaneChange,
    TrafficVehicle,
    VehicleState,
    apply_action,
    detect_collision,
    lane_center,
    spawn_episode,
    step_lateral,
    step_longitudinal,
    step_world,
    traffic_policy,
)

SIM = SimConfig()
TRAFFIC = TrafficConfig()


# ------------------------------------------------------------------ actions


def test_action_table_is_a_bijection():
    pairs = {(a.longitudinal, a.lateral) for a in Action}
    assert len(Action) == N_ACTIONS == len(pairs) == 8
    for a in Action:
        assert Action.compose(a.longitudinal, a.lateral) is a
    assert Action.compose(Longitudinal.BRAKE, Lateral.RIGHT) == 7


def test_excluded_pairs_do_not_compose():
    with pytest.raises(ValueError):
        Action.compose(Longitudinal.ACCELERATE, Lateral.LEFT)
    with pytest.raises(ValueError):
        Action.compose(Longitudinal.HARD_BRAKE, Lateral.RIGHT)


# ------------------------------------------------------------- longitudinal


def test_step_longitudinal_zero_accel():
    s = step_longitudinal(VehicleState(0.0, 0.0, 20.0), 0.0, 0.1, 40.0)
    assert (s.x, s.vx) == (2.0, 20.0)


def test_step_longitudinal_uses_old_velocity():
    s = step_longitudinal(VehicleState(0.0, 0.0, 20.0), 2.0, 0.1, 40.0)
    assert s.x == pytest.approx(2.0, abs=1e-12)
    assert s.vx == pytest.approx(20.2, abs=1e-12)


def test_step_longitudinal_clips_at_zero():
    s = step_longitudinal(VehicleState(0.0, 0.0, 0.1), -8.0, 0.1, 40.0)
    assert s.x == pytest.approx(0.01, abs=1e-12)
    assert s.vx == 0.0


def test_step_longitudinal_clips_at_cap():
    s = step_longitudinal(VehicleState(0.0, 0.0, 39.9), 2.0, 0.1, 40.0)
    assert s.vx == 40.0


def test_constant_velocity_is_linear_over_1000_steps():
    # dyadic step and speed keep every addition exact
    s = VehicleState(0.0, 0.0, 16.0)
    for n in range(1, 1001):
        s = step_longitudinal(s, 0.0, 0.125, 40.0)
        assert s.vx == 16.0
        assert s.x == 2.0 * n


# ------------------------------------------------------------------ lateral


def test_step_lateral_identity_and_motion():
    assert step_lateral(VehicleState(0.0, 0.0, 20.0), 0.0, 0.1, SIM).y == 0.0
    assert step_lateral(VehicleState(0.0, 0.0, 20.0), 1.85, 0.1, SIM).y == pytest.approx(0.185, abs=1e-12)


def test_step_lateral_snaps_at_target():
    s = VehicleState(0.0, 3.66, 20.0, vy=1.85, lane_change=LaneChange(1, 3))
    out = step_lateral(s, 1.85, 0.1, SIM)
    assert out.y == lane_center(1, SIM) == 3.7
    assert out.vy == 0.0 and out.lane_change is None


def test_apply_action_keep():
    s, rejected = apply_action(VehicleState(0.0, 3.7, 20.0), Action.MAINTAIN, SIM)
    assert (s.ax, s.vy, rejected) == (0.0, 0.0, False)


@pytest.mark.parametrize(
    "action, ax", [(Action.ACCELERATE, 2.0), (Action.BRAKE, -4.0), (Action.HARD_BRAKE, -8.0)]
)
def test_apply_action_magnitudes(action, ax):
    s, _ = apply_action(VehicleState(0.0, 3.7, 20.0), action, SIM)
    assert s.ax == ax


def test_lane_change_latches_for_twenty_steps():
    s, rejected = apply_action(VehicleState(0.0, 3.7, 20.0), Action.LEFT, SIM)
    assert not rejected
    assert s.lane_change == LaneChange(2, 19)
    assert s.vy == pytest.approx(3.7 / 2.0)
    steps = 1
    while s.lane_change is not None:
        # lateral commands are ignored while latched
        s, _ = apply_action(s, Action.RIGHT, SIM)
        steps += 1
    assert steps == 20
    assert s.y == 7.4 and s.vy == 0.0


def test_off_road_lane_change_rejected():
    s, rejected = apply_action(VehicleState(0.0, 7.4, 20.0), Action.BRAKE_LEFT, SIM)
    assert rejected
    assert s.lane_change is None and s.y == 7.4
    assert s.ax == -4.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, N_ACTIONS - 1), min_size=1, max_size=120))
def test_lane_centres_after_every_manoeuvre(actions):
    centres = {lane_center(k, SIM) for k in range(SIM.n_lanes)}
    s = VehicleState(0.0, 3.7, 25.0)
    for a in actions:
        s, _ = apply_action(s, Action(a), SIM)
        lo, hi = -SIM.lane_width / 2, (SIM.n_lanes - 0.5) * SIM.lane_width
        assert lo <= s.y <= hi
        assert 0.0 <= s.vx <= SIM.v_max
        if s.lane_change is None:
            assert s.y in centres
            assert s.vy == 0.0


# ---------------------------------------------------------------- collision


def test_detect_collision_examples():
    a = VehicleState(0.0, 0.0, 20.0)
    assert detect_collision(a, a, SIM)
    assert not detect_collision(a, VehicleState(10.0, 0.0, 20.0), SIM)
    assert not detect_collision(a, VehicleState(5.0, 0.0, 20.0), SIM)
    assert not detect_collision(a, VehicleState(0.0, 2.0, 20.0), SIM)
    assert detect_collision(a, VehicleState(4.99, 1.99, 0.0), SIM)


@given(st.floats(-20, 20), st.floats(-8, 8), st.floats(-20, 20), st.floats(-8, 8))
def test_detect_collision_symmetric(x1, y1, x2, y2):
    a, b = VehicleState(x1, y1, 0.0), VehicleState(x2, y2, 0.0)
    assert detect_collision(a, b, SIM) == detect_collision(b, a, SIM)


# ------------------------------------------------------------------ traffic


def _tv(x, lane, v, desired=None):
    return TrafficVehicle(VehicleState(x, lane * SIM.lane_width, v), desired if desired is not None else v)


def test_traffic_free_road_accelerates():
    assert traffic_policy(_tv(0.0, 1, 20.0, 30.0), [], (0.9, 0.5), SIM, TRAFFIC) == Action.ACCELERATE


def test_traffic_at_desired_speed_maintains():
    assert traffic_policy(_tv(0.0, 1, 30.0, 30.0), [], (0.9, 0.5), SIM, TRAFFIC) == Action.MAINTAIN


@pytest.mark.parametrize(
    "closing, expected",
    [
        # bumper gap 8 m: ttc 8/5 = 1.6 s lies in (1.5, 3.0]
        (5.0, Action.BRAKE),
        # ttc 8/6 = 1.33 s is at most 1.5 s
        (6.0, Action.HARD_BRAKE),
    ],
)
def test_traffic_closing_on_lead_follows_its_ladder(closing, expected):
    lead = VehicleState(13.0, 3.7, 20.0)
    me = _tv(0.0, 1, 20.0 + closing, 35.0)
    assert traffic_policy(me, [lead], (0.9, 0.5), SIM, TRAFFIC) == expected


def test_traffic_lane_change_needs_both_target_gaps():
    me = _tv(0.0, 1, 25.0)
    # proposal draw 0 forces a proposal; direction draw 0 picks the first option (left)
    assert traffic_policy(me, [], (0.0, 0.0), SIM, TRAFFIC) == Action.LEFT
    blocked_front = [VehicleState(6.0, 7.4, 25.0)]
    assert traffic_policy(me, blocked_front, (0.0, 0.0), SIM, TRAFFIC) == Action.MAINTAIN
    blocked_rear = [VehicleState(-8.0, 7.4, 30.0)]
    assert traffic_policy(me, blocked_rear, (0.0, 0.0), SIM, TRAFFIC) == Action.MAINTAIN
    assert traffic_policy(me, [], (0.0, 0.99), SIM, TRAFFIC) == Action.RIGHT


# ------------------------------------------------------------------- spawning


def test_spawn_empty_range():
    w = spawn_episode(SIM, TRAFFIC, np.random.default_rng(0), (0, 0))
    assert w.traffic == ()
    assert w.ego == VehicleState(0.0, 3.7, SIM.ego_initial_speed)


@pytest.mark.parametrize("seed", range(20))
def test_spawn_six_is_collision_free(seed):
    w = spawn_episode(SIM, TRAFFIC, np.random.default_rng(seed), (6, 6))
    vehicles = [w.ego] + [tv.state for tv in w.traffic]
    assert len(w.traffic) == 6 or w.spawn_reduced
    for i in range(len(vehicles)):
        for j in range(i + 1, len(vehicles)):
            assert not detect_collision(vehicles[i], vehicles[j], SIM)
    for tv in w.traffic:
        assert TRAFFIC.desired_speed_min <= tv.desired_speed <= TRAFFIC.desired_speed_max
        assert abs(tv.state.x) <= SIM.sensing_range


def test_spawn_is_deterministic():
    a = spawn_episode(SIM, TRAFFIC, np.random.default_rng(7))
    b = spawn_episode(SIM, TRAFFIC, np.random.default_rng(7))
    assert a == b
    assert np.array_equal(a.noise, b.noise)
    assert a.rng_state == b.rng_state


def test_spawn_rejects_bad_range():
    with pytest.raises(ValueError):
        spawn_episode(SIM, TRAFFIC, np.random.default_rng(0), (2, 7))


# ----------------------------------------------------------------- stepping


def test_step_world_ego_alone(cfg):
    w = make_world(cfg)
    nw, ev = step_world(w, Action.MAINTAIN, cfg.sim, cfg.traffic)
    assert nw.ego.x == pytest.approx(2.5)
    assert nw.t == 1
    assert not (ev.collided or ev.episode_done or ev.lane_change_rejected)


def test_step_world_collision_ends_episode(cfg):
    w = make_world(cfg, traffic=[(1.0, 1, 25.0)])
    nw, ev = step_world(w, Action.MAINTAIN, cfg.sim, cfg.traffic)
    assert ev.collided and ev.episode_done and nw.done


def test_last_step_ends_episode(cfg):
    w = make_world(cfg, t=cfg.sim.episode_length - 1)
    nw, ev = step_world(w, Action.MAINTAIN, cfg.sim, cfg.traffic)
    assert ev.episode_done and not ev.collided and nw.t == 200
    with pytest.raises(EpisodeDone):
        step_world(nw, Action.MAINTAIN, cfg.sim, cfg.traffic)


def test_step_world_does_not_mutate_input(cfg):
    w = make_world(cfg, traffic=[(30.0, 1, 20.0), (-30.0, 0, 28.0)])
    before = (w.ego, w.traffic, w.t)
    step_world(w, Action.LEFT, cfg.sim, cfg.traffic)
    assert (w.ego, w.traffic, w.t) == before


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.lists(st.integers(0, N_ACTIONS - 1), min_size=200, max_size=200))
def test_rollouts_are_deterministic_and_bounded(seed, actions):
    def rollout():
        w = spawn_episode(SIM, TRAFFIC, np.random.default_rng(seed))
        states = [w]
        for a in actions:
            if w.done:
                break
            w, _ = step_world(w, Action(a), SIM, TRAFFIC)
            states.append(w)
        return states

    first, second = rollout(), rollout()
    assert first == second
    lo, hi = -SIM.lane_width / 2, (SIM.n_lanes - 0.5) * SIM.lane_width
    for w in first:
        for tv in w.traffic:
            assert lo <= tv.state.y <= hi
            assert 0.0 <= tv.state.vx <= tv.desired_speed
            assert math.isfinite(tv.state.x)
