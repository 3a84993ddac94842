"""Metric definitions checked against hand-built synthetic logs."""

import numpy as np
import pytest

from quadlab.metrics import (EvalReport, cost_of_transport, evaluate_log,
                             phase_portrait_index, solve_time_stats,
                             steady_state_mask, survival_and_success,
                             tracking_errors)
from quadlab.terrain import generate
from quadlab.trajlog import TRAJECTORY_COLUMNS


def blank_log(n, dt=0.01):
    log = {c: np.zeros(n) for c in TRAJECTORY_COLUMNS}
    log["time"] = np.arange(n) * dt
    log["qw"] = np.ones(n)
    log["pz"] = np.full(n, 0.28)
    return log


def test_perfect_tracking_gives_zero_error():
    log = blank_log(300)
    log["cmd_vx"][:] = 0.5
    log["vx"][:] = 0.5
    log["cmd_wz"][:] = 0.2
    log["wz"][:] = 0.2
    lin, ang = tracking_errors(log)
    assert lin == 0.0 and ang == 0.0


def test_constant_offset_error():
    log = blank_log(300)
    log["vx"][:] = 0.1
    lin, ang = tracking_errors(log)
    assert lin == pytest.approx(0.1, abs=1e-12)
    assert ang == 0.0


def test_sinusoidal_error_rms():
    n = 1020  # 0.2 s excluded at the start, 1000 included samples
    log = blank_log(n)
    included = np.arange(n) >= 20
    idx = np.arange(1000)
    log["vy"][included] = 0.3 * np.sin(2 * np.pi * 3 * idx / 1000)
    log["vy"][~included] = 999.0  # must be ignored by the transient mask
    lin, _ = tracking_errors(log)
    assert lin == pytest.approx(0.3 / np.sqrt(2), abs=1e-6)


def test_heading_frame_rotation_applied():
    log = blank_log(300)
    # rotated 90 degrees: world +y motion is body +x
    log["qw"][:] = np.cos(np.pi / 4)
    log["qz"][:] = np.sin(np.pi / 4)
    log["vy"][:] = 0.4
    log["cmd_vx"][:] = 0.4
    lin, _ = tracking_errors(log)
    assert lin == pytest.approx(0.0, abs=1e-12)


def test_transient_exclusion_after_switch():
    log = blank_log(1000)
    log["cmd_vx"][500:] = 0.5
    log["vx"][500:] = 0.5
    # wild error inside the 0.2 s transient window only
    log["vx"][500:519] = 5.0
    lin, _ = tracking_errors(log)
    assert lin == 0.0
    mask = steady_state_mask(log)
    assert not mask[0] and not mask[19] and mask[20]
    assert not mask[500] and not mask[519] and mask[520]


def test_error_outside_window_counts():
    log = blank_log(1000)
    log["cmd_vx"][500:] = 0.5
    log["vx"][500:] = 0.5
    log["vx"][540] = 1.5
    lin, _ = tracking_errors(log)
    assert lin > 0.0


def test_cot_zero_torque(model):
    log = blank_log(200)
    log["vx"][:] = 0.5
    assert cost_of_transport(log, model) == 0.0


def test_cot_constant_power_closed_form(model):
    log = blank_log(200)
    log["vx"][:] = 0.5
    log["tau_fr_knee"][:] = 2.0
    log["dq_fr_knee"][:] = 1.5
    expected = 3.0 / (model.base_mass * model.gravity * 0.5)
    assert cost_of_transport(log, model) == pytest.approx(expected)


def test_cot_ignores_negative_power(model):
    log = blank_log(200)
    log["vx"][:] = 0.5
    log["tau_fr_knee"][:] = 2.0
    log["dq_fr_knee"][:] = -1.5
    assert cost_of_transport(log, model) == 0.0


def test_cot_undefined_below_speed_floor(model):
    log = blank_log(200)
    log["vx"][:] = 0.04
    assert np.isnan(cost_of_transport(log, model))


def symmetric_knee_log(n=1000, shift=0.13, amp=0.3, period=0.26):
    log = blank_log(n)
    t = log["time"]
    for pair in ("f", "r"):
        left = f"q_{pair}l_knee"
        right = f"q_{pair}r_knee"
        log[left] = 1.6 + amp * np.sin(2 * np.pi * t / period)
        log[right] = 1.6 + amp * np.sin(2 * np.pi * (t + shift) / period)
        w = 2 * np.pi / period
        log["d" + left] = amp * w * np.cos(2 * np.pi * t / period)
        log["d" + right] = amp * w * np.cos(2 * np.pi * (t + shift) / period)
    return log


def test_ppi_zero_for_half_period_shift():
    log = symmetric_knee_log()
    assert phase_portrait_index(log) == pytest.approx(0.0, abs=1e-9)


def test_ppi_large_for_frozen_knee():
    log = symmetric_knee_log()
    for col in ("q_fr_knee", "q_rr_knee"):
        log[col][:] = 1.6
        log["d" + col][:] = 0.0
    assert phase_portrait_index(log) > 0.5


def test_ppi_scale_invariance():
    base = symmetric_knee_log(shift=0.05)  # deliberately asymmetric phase
    scaled = {k: v.copy() for k, v in base.items()}
    for col in scaled:
        if "knee" in col:
            scaled[col] = scaled[col] * 3.0
    a = phase_portrait_index(base)
    b = phase_portrait_index(scaled)
    assert a > 0.0
    assert b == pytest.approx(a, abs=1e-12)


def test_ppi_detects_amplitude_asymmetry():
    log = symmetric_knee_log()
    log["q_fr_knee"] = 1.6 + 2.0 * (log["q_fr_knee"] - 1.6)
    log["dq_fr_knee"] = 2.0 * log["dq_fr_knee"]
    assert phase_portrait_index(log) > 0.05


def test_ppi_requires_full_cycle():
    log = blank_log(10)
    with pytest.raises(ValueError, match="cycle"):
        phase_portrait_index(log)


def test_survival_full_log(model, flat):
    log = blank_log(500)
    survival, success = survival_and_success(log, model, flat)
    assert survival == pytest.approx(log["time"][-1])
    assert success


def test_survival_detects_tilt(model, flat):
    log = blank_log(500)
    # roll past the termination threshold from row 300 on
    roll = np.radians(80.0)
    log["qw"][300:] = np.cos(roll / 2)
    log["qx"][300:] = np.sin(roll / 2)
    survival, success = survival_and_success(log, model, flat)
    assert survival == pytest.approx(log["time"][300])
    assert not success


def test_survival_detects_low_base(model, flat):
    log = blank_log(500)
    log["pz"][200:] = 0.02
    survival, success = survival_and_success(log, model, flat)
    assert survival == pytest.approx(log["time"][200])
    assert not success


def test_step_success_requires_crossing(model):
    terrain = generate("step", 1.0, seed=0)
    log = blank_log(500)
    log["pz"][:] = 0.6
    log["px"] = np.linspace(0.0, 9.0, 500)
    _, success = survival_and_success(log, model, terrain)
    assert success
    log["px"] = np.linspace(0.0, 5.0, 500)
    _, success = survival_and_success(log, model, terrain)
    assert not success


def test_solve_time_stats():
    stats = solve_time_stats(np.arange(1, 101, dtype=float))
    assert stats["mean"] == pytest.approx(50.5)
    assert stats["p99"] == pytest.approx(np.percentile(np.arange(1, 101), 99))


def test_evaluate_log_end_to_end(model, flat):
    log = symmetric_knee_log()
    log["vx"][:] = 0.5
    log["cmd_vx"][:] = 0.5
    report = evaluate_log(log, model, flat, solve_us=np.full(50, 2000.0))
    assert isinstance(report, EvalReport)
    assert report.tracking_error_linear == pytest.approx(0.0, abs=1e-12)
    assert report.survival_time == pytest.approx(log["time"][-1])
    assert report.success
    assert report.cot == 0.0
    assert report.ppi == pytest.approx(0.0, abs=1e-9)
    assert report.solve_us_mean == 2000.0
    row = report.as_row()
    assert len(row) == 8


def test_evaluate_log_short_gives_nan_ppi(model, flat):
    log = blank_log(10)
    log["vx"][:] = 0.5
    report = evaluate_log(log, model, flat)
    assert np.isnan(report.ppi)
    assert np.isnan(report.solve_us_mean)
