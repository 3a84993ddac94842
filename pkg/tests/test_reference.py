"""Reference generator: command integration, footholds, swing curves."""

import numpy as np
import pytest

from quadlab.gait import GaitSchedule
from quadlab.kinematics import forward_kinematics
from quadlab.mpc.reference import (
    APEX_FRACTION,
    H_APEX,
    TOUCHDOWN_DEPTH,
    SwingCurve,
    build_reference,
)
from quadlab.mpc.srb import MPC_DT, MPC_HORIZON, EulerSingularityError, MpcState


def rest_state(model, yaw=0.0):
    return MpcState(
        euler_zyx=np.array([0.0, 0.0, yaw]),
        position=np.array([0.0, 0.0, model.stand_height]),
        angular_velocity=np.zeros(3),
        linear_velocity=np.zeros(3),
    )


def standing_feet(model):
    feet = np.zeros((4, 3))
    for leg in range(4):
        p = forward_kinematics(model.stand_pose[3 * leg : 3 * leg + 3], leg, model)
        feet[leg] = p + np.array([0.0, 0.0, model.stand_height])
    return feet


def build(model, state, command, t=0.0, feet=None):
    sched = GaitSchedule()
    feet = standing_feet(model) if feet is None else feet
    return build_reference(
        state, np.asarray(command, dtype=float), sched, t, feet, feet.copy(), model
    )


def test_zero_command_footholds_under_hips(model):
    ref = build(model, rest_state(model), [0.0, 0.0, 0.0])
    for leg in range(4):
        hip = model.hip_offsets[leg]
        assert ref.footholds[leg, 0] == pytest.approx(hip[0], abs=1e-12)
        assert ref.footholds[leg, 1] == pytest.approx(hip[1], abs=1e-12)
    # reference holds position and height
    assert np.allclose(ref.states[:, 3:5], 0.0, atol=1e-12)
    assert np.allclose(ref.states[:, 5], model.stand_height, atol=1e-12)


def test_raibert_half_stance_offset(model):
    # steady 0.5 m/s: offset from the projected hip is stance/2 * v = 0.0325
    state = rest_state(model)
    state.linear_velocity = np.array([0.5, 0.0, 0.0])
    sched = GaitSchedule()
    feet = standing_feet(model)
    ref = build_reference(
        state, np.array([0.5, 0.0, 0.0]), sched, 0.0, feet, feet.copy(), model
    )
    prog = sched.swing_progress(0.0)
    stance_left = sched.stance_time_remaining(0.0)
    in_stance = sched.contact_at(0.0)
    for leg in range(4):
        if in_stance[leg]:
            dt_td = stance_left[leg] + sched.swing_duration
        else:
            dt_td = (1.0 - prog[leg]) * sched.swing_duration
        hip_at_td = model.hip_offsets[leg, 0] + 0.5 * dt_td
        offset = ref.footholds[leg, 0] - hip_at_td
        assert offset == pytest.approx(0.5 * 0.13 * 0.5, abs=1e-12)


def test_yaw_only_heading_integration(model):
    wz = 0.6
    ref = build(model, rest_state(model), [0.0, 0.0, wz])
    ks = np.arange(MPC_HORIZON + 1)
    assert np.allclose(ref.states[:, 2], wz * MPC_DT * ks, atol=1e-12)
    assert np.allclose(ref.states[:, 8], wz, atol=1e-12)
    # no translation commanded: the reference stays put
    assert np.allclose(ref.states[:, 3:5], 0.0, atol=1e-12)


def test_forward_plus_yaw_traces_circle(model):
    vx, wz = 0.5, 0.5
    ref = build(model, rest_state(model), [vx, 0.0, wz])
    radius = vx / wz
    # the integrated path stays near the circle of radius v/w around (0, r)
    center = np.array([0.0, radius])
    d = np.linalg.norm(ref.states[:, 3:5] - center, axis=1)
    assert np.max(np.abs(d - radius)) < vx * MPC_DT  # discretization bound


def test_velocity_reference_is_yaw_aligned(model):
    yaw = 1.2
    ref = build(model, rest_state(model, yaw=yaw), [0.7, -0.2, 0.0])
    vx_w = 0.7 * np.cos(yaw) + 0.2 * np.sin(yaw)
    vy_w = 0.7 * np.sin(yaw) - 0.2 * np.cos(yaw)
    assert np.allclose(ref.states[:, 9], vx_w, atol=1e-12)
    assert np.allclose(ref.states[:, 10], vy_w, atol=1e-12)


def test_pitch_guard_aborts(model):
    state = rest_state(model)
    state.euler_zyx[1] = 1.5
    with pytest.raises(EulerSingularityError):
        build(model, state, [0.0, 0.0, 0.0])


def test_nonfinite_command_rejected(model):
    with pytest.raises(ValueError):
        build(model, rest_state(model), [np.nan, 0.0, 0.0])


def test_swing_curve_endpoints_and_apex():
    p0 = np.array([0.1, -0.05, 0.0])
    pf = np.array([0.22, 0.0, 0.0])
    curve = SwingCurve(p0.copy(), pf - [0, 0, TOUCHDOWN_DEPTH], H_APEX, 0.13)
    start, v0 = curve.position_velocity(0.0)
    end, _ = curve.position_velocity(1.0)
    assert np.allclose(start, p0, atol=1e-12)
    assert np.allclose(end[:2], pf[:2], atol=1e-12)
    assert end[2] == pytest.approx(-TOUCHDOWN_DEPTH, abs=1e-12)
    # clamped endpoints: zero velocity at both ends
    assert np.allclose(v0, 0.0, atol=1e-12)
    apex_pos, apex_vel = curve.position_velocity(APEX_FRACTION)
    assert apex_pos[2] == pytest.approx(H_APEX, abs=1e-12)
    assert apex_vel[2] == pytest.approx(0.0, abs=1e-12)


def test_swing_velocity_matches_finite_difference():
    curve = SwingCurve(
        np.array([0.0, 0.0, 0.01]),
        np.array([0.15, 0.04, -0.005]),
        0.07,
        0.13,
    )
    h = 1e-7
    for s in [0.1, 0.3, APEX_FRACTION + 1e-3, 0.6, 0.9]:
        p_plus, _ = curve.position_velocity(s + h)
        p_minus, _ = curve.position_velocity(s - h)
        _, vel = curve.position_velocity(s)
        fd = (p_plus - p_minus) / (2 * h) / curve.duration
        assert np.allclose(vel, fd, atol=1e-5)


def test_swing_accel_matches_finite_difference():
    curve = SwingCurve(
        np.array([0.0, 0.0, 0.0]),
        np.array([0.12, -0.03, 0.0]),
        0.06,
        0.13,
    )
    h = 1e-5
    for s in [0.15, 0.35, 0.6, 0.85]:
        _, v_plus, _ = curve.position_velocity_accel(s + h)
        _, v_minus, _ = curve.position_velocity_accel(s - h)
        _, _, acc = curve.position_velocity_accel(s)
        fd = (v_plus - v_minus) / (2 * h) / curve.duration
        assert np.allclose(acc, fd, rtol=1e-4, atol=1e-4)


def test_foot_table_consistent_with_schedule(model):
    state = rest_state(model)
    state.linear_velocity = np.array([0.4, 0.0, 0.0])
    ref = build(model, state, [0.4, 0.0, 0.0], t=0.05)
    sched = GaitSchedule()
    feet = standing_feet(model)
    for k in range(MPC_HORIZON + 1):
        contact = sched.contact_at(0.05 + k * MPC_DT)
        assert np.array_equal(ref.contact_table[k], contact)
        for leg in range(4):
            if contact[leg] and ref.contact_table[0, leg] and k == 0:
                assert np.allclose(ref.foot_table[k, leg], feet[leg])


def test_swing_curves_only_for_swing_legs(model):
    sched = GaitSchedule()
    t = 0.05
    ref = build(model, rest_state(model), [0.0, 0.0, 0.0], t=t)
    stance = sched.contact_at(t)
    for leg in range(4):
        if stance[leg]:
            assert ref.swing_curves[leg] is None
        else:
            assert ref.swing_curves[leg] is not None
