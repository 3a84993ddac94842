"""Reference generation for the MPC: command integration, Raibert footholds,
and Bézier swing curves.

The state reference integrates the commanded planar velocity and yaw rate
from the current pose at the desired standing height above terrain. Each
leg's next foothold is the hip ground projection advanced by half a stance
of current velocity plus a velocity-error feedback term. Swing feet follow
a cubic Bézier: the horizontal curve has clamped (zero-velocity) endpoints,
the vertical profile is two cubic segments through an apex above the higher
endpoint.
"""

from dataclasses import dataclass

import numpy as np

from ..gait import GaitSchedule
from ..model import RobotModel
from ..terrain import Terrain, sample_height_batch
from .srb import MPC_DT, MPC_HORIZON, MpcState

# Velocity-error foothold gain, near the capture-point scale sqrt(h/g). Much
# below that, placement barely reacts to velocity error and the MPC sustains
# a steady overshoot rather than stepping out to brake.
K_RAIBERT = 0.15  # s
FOOTHOLD_MAX_OFFSET = 0.12  # m, xy offset clamp about the hip projection
H_APEX = 0.06  # m, swing apex above the higher of liftoff/touchdown
TOUCHDOWN_DEPTH = 0.005  # m the swing curve aims below ground, so the
# penalty contact engages on schedule instead of a few ms late
APEX_FRACTION = 0.45  # swing fraction spent ascending; the longer descent
# roughly halves the speed at which the foot crosses the ground


def _bezier_scalar(z0, z1, s):
    """Cubic Bézier with clamped endpoints (P1=P0, P2=P3): value, d/ds, d2/ds2."""
    b = z0 * ((1 - s) ** 3 + 3 * (1 - s) ** 2 * s) + z1 * (3 * (1 - s) * s**2 + s**3)
    db = 6.0 * (z1 - z0) * (1 - s) * s
    ddb = 6.0 * (z1 - z0) * (1.0 - 2.0 * s)
    return b, db, ddb


@dataclass
class SwingCurve:
    p0: np.ndarray  # liftoff position, world
    pf: np.ndarray  # touchdown target, world
    apex_z: float
    duration: float

    def position_velocity(self, s: float):
        """World foot reference at swing progress s in [0, 1]."""
        pos, vel, _ = self.position_velocity_accel(s)
        return pos, vel

    def position_velocity_accel(self, s: float):
        s = min(max(s, 0.0), 1.0)
        pos = np.empty(3)
        vel = np.empty(3)
        acc = np.empty(3)
        for i in range(2):
            b, db, ddb = _bezier_scalar(self.p0[i], self.pf[i], s)
            pos[i] = b
            vel[i] = db / self.duration
            acc[i] = ddb / self.duration**2
        # two vertical segments: liftoff -> apex, apex -> touchdown
        if s < APEX_FRACTION:
            b, db, ddb = _bezier_scalar(self.p0[2], self.apex_z, s / APEX_FRACTION)
            tseg = APEX_FRACTION * self.duration
        else:
            u = (s - APEX_FRACTION) / (1.0 - APEX_FRACTION)
            b, db, ddb = _bezier_scalar(self.apex_z, self.pf[2], u)
            tseg = (1.0 - APEX_FRACTION) * self.duration
        pos[2] = b
        vel[2] = db / tseg
        acc[2] = ddb / tseg**2
        return pos, vel, acc


@dataclass
class ReferenceTrajectory:
    states: np.ndarray  # (T+1, 12)
    contact_table: np.ndarray  # (T+1, 4) bool
    foot_table: np.ndarray  # (T+1, 4, 3) world stance positions
    footholds: np.ndarray  # (4, 3) next touchdown target per leg
    swing_curves: list  # per leg: SwingCurve or None (stance)


def _terrain_height(terrain: Terrain | None, xs, ys):
    if terrain is None:
        return np.zeros_like(np.asarray(xs, dtype=float))
    return sample_height_batch(
        terrain.height,
        terrain.origin[0],
        terrain.origin[1],
        terrain.cell_size,
        np.ascontiguousarray(xs, dtype=float),
        np.ascontiguousarray(ys, dtype=float),
    )


def build_reference(
    current: MpcState,
    command: np.ndarray,
    schedule: GaitSchedule,
    t: float,
    foot_positions: np.ndarray,
    liftoff_positions: np.ndarray,
    model: RobotModel,
    terrain: Terrain | None = None,
    horizon: int = MPC_HORIZON,
    dt: float = MPC_DT,
    k_raibert: float = K_RAIBERT,
    h_apex: float = H_APEX,
    touchdown_depth: float = TOUCHDOWN_DEPTH,
) -> ReferenceTrajectory:
    """Reference states, stance foot table, footholds, and swing curves.

    foot_positions: (4, 3) measured world foot positions now.
    liftoff_positions: (4, 3) world positions where each swing leg lifted off
    (ignored for stance legs).
    """
    current.check()
    if not np.all(np.isfinite(command)):
        raise ValueError("non-finite command")
    vx_cmd, vy_cmd, wz_cmd = float(command[0]), float(command[1]), float(command[2])
    T = horizon

    # integrate the command from the current pose
    states = np.zeros((T + 1, 12))
    yaw = current.euler_zyx[2]
    px, py = current.position[0], current.position[1]
    xs = np.empty(T + 1)
    ys = np.empty(T + 1)
    yaws = np.empty(T + 1)
    for k in range(T + 1):
        xs[k] = px
        ys[k] = py
        yaws[k] = yaw
        cy, sy = np.cos(yaw), np.sin(yaw)
        px += dt * (cy * vx_cmd - sy * vy_cmd)
        py += dt * (sy * vx_cmd + cy * vy_cmd)
        yaw += dt * wz_cmd
    # desired height: standing height above the mean ground under the hips
    hips = model.hip_offsets
    hx = np.empty(4 * (T + 1))
    hy = np.empty(4 * (T + 1))
    for k in range(T + 1):
        cy, sy = np.cos(yaws[k]), np.sin(yaws[k])
        for leg in range(4):
            hx[4 * k + leg] = xs[k] + cy * hips[leg, 0] - sy * hips[leg, 1]
            hy[4 * k + leg] = ys[k] + sy * hips[leg, 0] + cy * hips[leg, 1]
    ground = _terrain_height(terrain, hx, hy).reshape(T + 1, 4).mean(axis=1)
    for k in range(T + 1):
        cy, sy = np.cos(yaws[k]), np.sin(yaws[k])
        states[k, 2] = yaws[k]
        states[k, 3] = xs[k]
        states[k, 4] = ys[k]
        states[k, 5] = model.stand_height + ground[k]
        states[k, 8] = wz_cmd
        states[k, 9] = cy * vx_cmd - sy * vy_cmd
        states[k, 10] = sy * vx_cmd + cy * vy_cmd

    contact_table = schedule.contact_table(t, T, dt)

    # Raibert foothold per leg at its next touchdown
    v_now = current.linear_velocity[:2]
    in_stance_now = schedule.contact_at(t)
    progress = schedule.swing_progress(t)
    stance_left = schedule.stance_time_remaining(t)
    footholds = np.zeros((4, 3))
    for leg in range(4):
        if in_stance_now[leg]:
            dt_td = stance_left[leg] + schedule.swing_duration
        else:
            dt_td = (1.0 - progress[leg]) * schedule.swing_duration
        ktd = min(int(round(dt_td / dt)), T)
        cy, sy = np.cos(yaws[ktd]), np.sin(yaws[ktd])
        # project the hip to touchdown with the measured velocity, not the
        # command: placing feet where the command says the hip will be feeds
        # velocity overshoot back into support placement
        hip_x = current.position[0] + dt_td * v_now[0] + cy * hips[leg, 0] - sy * hips[leg, 1]
        hip_y = current.position[1] + dt_td * v_now[1] + sy * hips[leg, 0] + cy * hips[leg, 1]
        vbar_x = states[ktd, 9]
        vbar_y = states[ktd, 10]
        off_x = 0.5 * schedule.stance_duration * v_now[0] + k_raibert * (
            v_now[0] - vbar_x
        )
        off_y = 0.5 * schedule.stance_duration * v_now[1] + k_raibert * (
            v_now[1] - vbar_y
        )
        # keep the target inside the leg workspace; a command step would
        # otherwise throw it far outside reach
        off_norm = np.hypot(off_x, off_y)
        if off_norm > FOOTHOLD_MAX_OFFSET:
            scale = FOOTHOLD_MAX_OFFSET / off_norm
            off_x *= scale
            off_y *= scale
        footholds[leg, 0] = hip_x + off_x
        footholds[leg, 1] = hip_y + off_y
    footholds[:, 2] = _terrain_height(terrain, footholds[:, 0], footholds[:, 1])

    # stance position table over the horizon: current stance keeps the
    # measured foot; later stance periods use the planned foothold, shifted
    # by one gait period of commanded travel per revisit
    foot_table = np.zeros((T + 1, 4, 3))
    drift = np.array(
        [states[0, 9] * schedule.period, states[0, 10] * schedule.period, 0.0]
    )
    for leg in range(4):
        segment = 0  # 0 = ongoing stance, 1 = next touchdown, 2 = one after
        prev = bool(contact_table[0, leg])
        if not prev:
            segment = 1
        for k in range(T + 1):
            now = bool(contact_table[k, leg])
            if k > 0:
                if now and not prev:
                    segment += 1
                prev = now
            if now:
                if segment == 0:
                    foot_table[k, leg] = foot_positions[leg]
                else:
                    foot_table[k, leg] = footholds[leg] + (segment - 1) * drift
            else:
                foot_table[k, leg] = footholds[leg]
    swing_curves = []
    for leg in range(4):
        if in_stance_now[leg]:
            swing_curves.append(None)
        else:
            p0 = liftoff_positions[leg]
            pf = footholds[leg].copy()
            apex = max(p0[2], pf[2]) + h_apex
            pf[2] -= touchdown_depth
            swing_curves.append(
                SwingCurve(p0.copy(), pf, apex, schedule.swing_duration)
            )
    return ReferenceTrajectory(states, contact_table, foot_table, footholds, swing_curves)
