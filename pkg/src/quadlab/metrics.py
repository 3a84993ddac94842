"""Evaluation metrics computed from trajectory logs.

All functions are pure functions of the log dict produced by
`trajlog.read_trajectory`, so recomputation is bit-stable.

The phase-portrait index quantifies left/right gait symmetry: knee
(angle, velocity) curves are cycle-averaged, centered, scaled by a
shared per-axis max-abs, resampled to a fixed number of points, and
compared under the best cyclic phase shift.  Zero means the two
portraits coincide up to phase; the index is invariant to scaling both
sides by a common factor.  This operationalization is ours; only
cross-method orderings should be compared, not absolute values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import TILT_LIMIT
from .gait import GaitSchedule
from .model import RobotModel
from .terrain import Terrain

TRANSIENT_EXCLUSION = 0.2  # s ignored after each command switch
MIN_COT_SPEED = 0.05  # m/s below which CoT is undefined
PPI_POINTS = 200

# (left, right) knee angle/velocity columns per front/rear pair
KNEE_PAIRS = (
    (("q_fl_knee", "dq_fl_knee"), ("q_fr_knee", "dq_fr_knee")),
    (("q_rl_knee", "dq_rl_knee"), ("q_rr_knee", "dq_rr_knee")),
)

REPORT_COLUMNS = ["tracking_error_linear", "tracking_error_angular",
                  "survival_time", "success", "cot", "ppi",
                  "solve_us_mean", "solve_us_p99"]


@dataclass
class EvalReport:
    tracking_error_linear: float
    tracking_error_angular: float
    survival_time: float
    success: bool
    cot: float
    ppi: float
    solve_us_mean: float = float("nan")
    solve_us_p99: float = float("nan")

    def as_row(self) -> list:
        return [self.tracking_error_linear, self.tracking_error_angular,
                self.survival_time, int(self.success), self.cot, self.ppi,
                self.solve_us_mean, self.solve_us_p99]


def _yaw(log: dict) -> np.ndarray:
    qw, qx, qy, qz = log["qw"], log["qx"], log["qy"], log["qz"]
    return np.arctan2(2.0 * (qw * qz + qx * qy),
                      1.0 - 2.0 * (qy * qy + qz * qz))


def heading_velocities(log: dict):
    """(v_x, v_y) rotated into the yaw-aligned frame, per row."""
    yaw = _yaw(log)
    c, s = np.cos(yaw), np.sin(yaw)
    return (c * log["vx"] + s * log["vy"],
            -s * log["vx"] + c * log["vy"])


def steady_state_mask(log: dict,
                      exclusion: float = TRANSIENT_EXCLUSION) -> np.ndarray:
    """True for rows outside the transient window after each command
    switch; the start of the log counts as a switch."""
    time = log["time"]
    cmd = np.stack([log["cmd_vx"], log["cmd_vy"], log["cmd_wz"]], axis=1)
    switched = np.ones(len(time), dtype=bool)
    switched[1:] = np.any(cmd[1:] != cmd[:-1], axis=1)
    mask = np.ones(len(time), dtype=bool)
    for idx in np.flatnonzero(switched):
        mask &= ~((time >= time[idx]) & (time < time[idx] + exclusion))
    return mask


def tracking_errors(log: dict) -> tuple[float, float]:
    """RMS linear (m/s) and angular (rad/s) command-tracking error."""
    vx, vy = heading_velocities(log)
    mask = steady_state_mask(log)
    if not np.any(mask):
        return float("nan"), float("nan")
    err_sq = ((vx - log["cmd_vx"]) ** 2 + (vy - log["cmd_vy"]) ** 2)[mask]
    ang_sq = ((log["wz"] - log["cmd_wz"]) ** 2)[mask]
    return float(np.sqrt(err_sq.mean())), float(np.sqrt(ang_sq.mean()))


def cost_of_transport(log: dict, model: RobotModel) -> float:
    """Positive mechanical power over m*g*v; NaN below MIN_COT_SPEED."""
    power = np.zeros(len(log["time"]))
    for tau_col in (c for c in log if c.startswith("tau_")):
        dq_col = "dq_" + tau_col[4:]
        power += np.maximum(log[tau_col] * log[dq_col], 0.0)
    speed = float(np.hypot(log["vx"], log["vy"]).mean())
    if speed < MIN_COT_SPEED:
        return float("nan")
    return float(power.mean() / (model.base_mass * model.gravity * speed))


def _cycle_average(times: np.ndarray, values: np.ndarray, period: float,
                   points: int) -> np.ndarray:
    span = times[-1] - times[0]
    cycles = int(np.floor(span / period + 1e-9))
    if cycles < 1:
        raise ValueError(
            f"log spans {span:.3f} s, below one {period:.3f} s gait cycle")
    grid = np.linspace(0.0, period, points, endpoint=False)
    acc = np.zeros(points)
    for c in range(cycles):
        acc += np.interp(times[0] + c * period + grid, times, values)
    return acc / cycles


def phase_portrait_index(log: dict, period: float | None = None,
                         points: int = PPI_POINTS) -> float:
    if period is None:
        period = GaitSchedule().period
    times = log["time"]
    pair_scores = []
    for left_cols, right_cols in KNEE_PAIRS:
        curves = []
        for q_col, dq_col in (left_cols, right_cols):
            ang = _cycle_average(times, log[q_col], period, points)
            vel = _cycle_average(times, log[dq_col], period, points)
            curves.append(np.stack([ang - ang.mean(), vel - vel.mean()],
                                   axis=1))
        left, right = curves
        # shared per-axis scale keeps amplitude asymmetry visible
        scale = np.abs(np.concatenate([left, right])).max(axis=0)
        scale = np.maximum(scale, 1e-12)
        left = left / scale
        right = right / scale
        best = min(
            float(np.mean(np.linalg.norm(left - np.roll(right, k, axis=0),
                                         axis=1)))
            for k in range(points))
        pair_scores.append(best)
    return float(np.mean(pair_scores))


def knee_cycle_curves(log: dict, period: float | None = None,
                      points: int = PPI_POINTS):
    """Cycle-averaged knee (angle, velocity) curves, one per leg.

    Yields (pair, side, angle, velocity) with pair in {front, rear} and
    side in {left, right}: the raw material behind the phase portrait
    index, exposed for plotting.
    """
    if period is None:
        period = GaitSchedule().period
    times = log["time"]
    for name, (left_cols, right_cols) in zip(("front", "rear"), KNEE_PAIRS):
        for side, (q_col, dq_col) in (("left", left_cols),
                                      ("right", right_cols)):
            yield (name, side,
                   _cycle_average(times, log[q_col], period, points),
                   _cycle_average(times, log[dq_col], period, points))


def survival_and_success(log: dict, model: RobotModel,
                         terrain: Terrain) -> tuple[float, bool]:
    """First termination time (or episode length) and step-crossing
    success.

    Success means the log never terminates and, on terrains with a
    step region, the base crosses past it.
    """
    time = log["time"]
    quat = np.stack([log["qw"], log["qx"], log["qy"], log["qz"]], axis=1)
    up = 1.0 - 2.0 * (quat[:, 1] ** 2 + quat[:, 2] ** 2)  # R[2,2]
    tilt = np.arccos(np.clip(up, -1.0, 1.0))
    survival = float(time[-1])
    terminated = False
    for i in range(len(time)):
        ground = terrain.sample_height(log["px"][i], log["py"][i])
        if tilt[i] > TILT_LIMIT or log["pz"][i] < ground + model.base_clearance:
            survival = float(time[i])
            terminated = True
            break
    region = terrain.meta.get("step_region")
    if terminated:
        return survival, False
    if region is not None:
        crossed = float(np.max(log["px"])) > region[1]
        return survival, bool(crossed)
    return survival, True


def solve_time_stats(solve_us: np.ndarray) -> dict:
    solve_us = np.asarray(solve_us, dtype=float)
    return {"mean": float(solve_us.mean()),
            "p99": float(np.percentile(solve_us, 99))}


def evaluate_log(log: dict, model: RobotModel, terrain: Terrain,
                 solve_us: np.ndarray | None = None) -> EvalReport:
    lin, ang = tracking_errors(log)
    survival, success = survival_and_success(log, model, terrain)
    try:
        ppi = phase_portrait_index(log)
    except ValueError:
        ppi = float("nan")
    stats = (solve_time_stats(solve_us) if solve_us is not None and
             len(solve_us) else {"mean": float("nan"), "p99": float("nan")})
    return EvalReport(
        tracking_error_linear=lin,
        tracking_error_angular=ang,
        survival_time=survival,
        success=success,
        cot=cost_of_transport(log, model),
        ppi=ppi,
        solve_us_mean=stats["mean"],
        solve_us_p99=stats["p99"],
    )
