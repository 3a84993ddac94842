"""Receding-horizon expert controller.

Each 100 Hz call: convert the robot state to the reduced model, build the
command reference and gait-phased foot table, linearize, solve the
pyramid-constrained DDP (warm-started by shifting the previous solution one
stage), then emit joint PD targets. Stance legs map the first ground
reaction force through the Jacobian transpose; swing legs run task-space
impedance about the Bézier reference. Torques convert to PD targets by
inverting the simulator's PD law, so stepping the sim with these targets
reproduces the intended torques exactly.

If a solve fails (Euler guard, non-finite result, stalled line search with a
useless solution), the previous solution is shifted and reused and the call
is flagged degraded.
"""

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from ..gait import GaitSchedule
from ..kinematics import foot_jacobian, forward_kinematics
from ..model import RobotModel
from ..rotation import quat_to_matrix
from ..sim import RobotState
from ..terrain import Terrain, sample_height_batch, sample_nearest_batch
from .ddp import solve_grf_ddp
from .reference import H_APEX, K_RAIBERT, ReferenceTrajectory, build_reference
from .srb import (
    MPC_DT,
    MPC_HORIZON,
    EulerSingularityError,
    MpcState,
    build_ltv,
    default_weights,
    mpc_state_from_robot,
)

# Task-space swing gains. The reflected-inertia foot weighs ~0.13 kg in task
# space, so Kp=150 gives a 5.5 Hz loop that lags the 7.7 Hz swing and feet
# land short at speed, while Kp=400 chatters against the 58 rad/s joint servo
# that realizes the torques. 250/12 sits between both walls.
SWING_KP = 250.0
SWING_KD = 12.0
F_MAX = 120.0  # N per foot

# Commanded tangential force is cone-limited by how loaded the foot can
# actually be: full authority only once the foot is a few mm into the ground.
# Without this, a barely-touching foot gets swept by braking forces planned
# for a planted one.
STANCE_LOAD_DEPTH = 0.003  # m

# Step commands are slewed before they reach the reference so footholds and
# the velocity plan move continuously. A 1 m/s step applied in one tick asks
# for near cone-limit acceleration during the first stance cycle and the
# transient tips the base before the gait can absorb it.
CMD_SLEW_LIN = 3.0  # m/s^2
CMD_SLEW_ANG = 6.0  # rad/s^2

# Integral trim on the tracked command. The plant is drag-free, so any state
# with zero mean tangential force is an equilibrium and replanning each tick
# discards the braking tail of every plan; small per-cycle disturbances
# (touchdown impulses, attitude corrections spent through tangential force)
# leave a standing velocity bias that nothing inside one horizon removes.
KI_VEL = 0.8  # 1/s
TRIM_MAX = 0.25  # m/s and rad/s
TRIM_DECAY = 0.15  # s, trim bleed-off while a command slew is in motion


DIAGNOSTIC_COLUMNS = [
    "time",
    "iterations",
    "cost",
    "constraint_violation",
    "solve_us",
    "degraded",
]


@dataclass
class ExpertDiagnostics:
    time: float
    iterations: int
    cost: float
    constraint_violation: float
    solve_us: float
    degraded: bool

    def row(self):
        return [
            repr(float(self.time)),
            str(int(self.iterations)),
            repr(float(self.cost)),
            repr(float(self.constraint_violation)),
            repr(float(self.solve_us)),
            str(int(self.degraded)),
        ]


def write_diagnostics(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(DIAGNOSTIC_COLUMNS)
        for r in rows:
            w.writerow(r.row())


def pd_targets_from_torque(tau, q, dq, kp: float, kd: float) -> np.ndarray:
    """Invert the joint PD law: the target that makes PD reproduce tau."""
    return q + (kd * dq + tau) / kp


def swing_torque(
    leg: int,
    q_leg: np.ndarray,
    dq_leg: np.ndarray,
    ref_pos_body: np.ndarray,
    ref_vel_body: np.ndarray,
    model: RobotModel,
    kp: float = SWING_KP,
    kd: float = SWING_KD,
    ref_acc_body: np.ndarray | None = None,
) -> np.ndarray:
    """Task-space impedance toward a body-frame foot reference.

    With a reference acceleration, adds the inverse-dynamics feedforward
    I_refl * J^-1 * a for the reflected-inertia leg. Pure feedback lags the
    swing profile by tens of ms, which lands the foot late and short; the
    feedforward carries the profile so feedback only covers disturbances.
    """
    p = forward_kinematics(q_leg, leg, model)
    J = foot_jacobian(q_leg, leg, model)
    v = J @ dq_leg
    force = kp * (ref_pos_body - p) + kd * (ref_vel_body - v)
    tau = J.T @ force
    if ref_acc_body is not None and abs(np.linalg.det(J)) > 1e-5:
        tau = tau + model.joint_reflected_inertia * np.linalg.solve(J, ref_acc_body)
    return tau


class MpcExpert:
    def __init__(
        self,
        model: RobotModel,
        schedule: GaitSchedule | None = None,
        terrain: Terrain | None = None,
        horizon: int = MPC_HORIZON,
        dt: float = MPC_DT,
        k_raibert: float = K_RAIBERT,
        h_apex: float = H_APEX,
        f_max: float = F_MAX,
        swing_kp: float = SWING_KP,
        swing_kd: float = SWING_KD,
        Q: np.ndarray | None = None,
        R: np.ndarray | None = None,
        friction_fallback: float = 0.6,
        cmd_slew_lin: float = CMD_SLEW_LIN,
        cmd_slew_ang: float = CMD_SLEW_ANG,
    ):
        self.model = model
        self.schedule = schedule or GaitSchedule()
        self.terrain = terrain
        self.horizon = horizon
        self.dt = dt
        self.k_raibert = k_raibert
        self.h_apex = h_apex
        self.f_max = f_max
        self.swing_kp = swing_kp
        self.swing_kd = swing_kd
        dq, dr = default_weights(model)
        self.Q = dq if Q is None else np.asarray(Q, dtype=float)
        self.R = dr if R is None else np.asarray(R, dtype=float)
        self.friction_fallback = friction_fallback
        self.cmd_slew_lin = cmd_slew_lin
        self.cmd_slew_ang = cmd_slew_ang
        self.diagnostics: list[ExpertDiagnostics] = []
        self.reset()

    def reset(self):
        self._warm_us: np.ndarray | None = None
        self._liftoff = np.zeros((4, 3))
        self._liftoff_valid = False
        self._prev_contact = np.ones(4, dtype=bool)
        self._last_grf = np.zeros((4, 3))
        self._cmd: np.ndarray | None = None
        self._cmd_t = 0.0
        self._trim = np.zeros(3)
        self.degraded_count = 0
        self.diagnostics.clear()

    def _slew_command(self, state: RobotState, t: float, command: np.ndarray):
        """Rate-limit the tracked command; integrate out steady velocity bias."""
        R = quat_to_matrix(state.base_orientation)
        v_body = R.T @ state.base_linear_velocity
        measured = np.array([v_body[0], v_body[1], state.base_angular_velocity[2]])
        if self._cmd is None:
            # seed from the measured motion so a moving robot is not yanked
            self._cmd = measured.copy()
            self._cmd_t = t
        dt = min(max(t - self._cmd_t, 0.0), 0.05)
        self._cmd_t = t
        step = np.array([self.cmd_slew_lin, self.cmd_slew_lin, self.cmd_slew_ang])
        delta = np.clip(command - self._cmd, -step * dt, step * dt)
        self._cmd = self._cmd + delta
        if np.all(self._cmd == command):
            self._trim += KI_VEL * dt * (self._cmd - measured)
            np.clip(self._trim, -TRIM_MAX, TRIM_MAX, out=self._trim)
        else:
            # the trim captures the bias of the old operating point; after a
            # large command change it can point the wrong way (a lateral sign
            # flip doubles it as seen by the plant), so bleed it off while the
            # setpoint is still traveling instead of freezing it
            self._trim *= np.exp(-dt / TRIM_DECAY)
        return self._cmd + self._trim

    def set_terrain(self, terrain: Terrain | None):
        self.terrain = terrain

    def _foot_positions(self, state: RobotState) -> np.ndarray:
        R = quat_to_matrix(state.base_orientation)
        out = np.empty((4, 3))
        for leg in range(4):
            q_leg = state.joint_angles[3 * leg : 3 * leg + 3]
            out[leg] = state.base_position + R @ forward_kinematics(
                q_leg, leg, self.model
            )
        return out

    def _friction_table(self, foot_table: np.ndarray) -> np.ndarray:
        T1 = foot_table.shape[0]
        if self.terrain is None:
            return np.full((T1, 4), self.friction_fallback)
        t = self.terrain
        mu = sample_nearest_batch(
            t.friction,
            t.origin[0],
            t.origin[1],
            t.cell_size,
            np.ascontiguousarray(foot_table[:, :, 0].ravel()),
            np.ascontiguousarray(foot_table[:, :, 1].ravel()),
        )
        return mu.reshape(T1, 4)

    def _foot_friction(self, feet: np.ndarray) -> np.ndarray:
        if self.terrain is None:
            return np.full(4, self.friction_fallback)
        t = self.terrain
        return sample_nearest_batch(
            t.friction,
            t.origin[0],
            t.origin[1],
            t.cell_size,
            np.ascontiguousarray(feet[:, 0]),
            np.ascontiguousarray(feet[:, 1]),
        )

    def _load_gate(self, feet: np.ndarray) -> np.ndarray:
        """0..1 per leg: how deep the foot sits relative to STANCE_LOAD_DEPTH."""
        if self.terrain is None:
            return np.ones(4)
        t = self.terrain
        ground = sample_height_batch(
            t.height,
            t.origin[0],
            t.origin[1],
            t.cell_size,
            np.ascontiguousarray(feet[:, 0]),
            np.ascontiguousarray(feet[:, 1]),
        )
        return np.clip((ground - feet[:, 2]) / STANCE_LOAD_DEPTH, 0.0, 1.0)

    def _shift_warm_start(self) -> np.ndarray | None:
        if self._warm_us is None:
            return None
        shifted = np.empty_like(self._warm_us)
        shifted[:-1] = self._warm_us[1:]
        shifted[-1] = self._warm_us[-1]
        return shifted

    def act(self, state: RobotState, t: float, command: np.ndarray):
        """PD targets for one control tick; info dict for logging."""
        command = self._slew_command(state, t, np.asarray(command, dtype=float))
        contact_now = self.schedule.contact_at(t)
        feet = self._foot_positions(state)
        if not self._liftoff_valid:
            self._liftoff = feet.copy()
            self._liftoff_valid = True
        for leg in range(4):
            if self._prev_contact[leg] and not contact_now[leg]:
                self._liftoff[leg] = feet[leg]
        self._prev_contact = contact_now.copy()

        degraded = False
        t0 = time.perf_counter()
        ref = None
        result = None
        try:
            mpc_state = mpc_state_from_robot(state)
            ref = build_reference(
                mpc_state,
                command,
                self.schedule,
                t,
                feet,
                self._liftoff,
                self.model,
                self.terrain,
                horizon=self.horizon,
                dt=self.dt,
                k_raibert=self.k_raibert,
                h_apex=self.h_apex,
            )
            A, B, c = build_ltv(
                ref.states,
                ref.foot_table,
                mpc_state.euler_zyx[2],
                self.model.base_mass,
                self.model.base_inertia,
                self.model.gravity,
                self.dt,
            )
            mu = self._friction_table(ref.foot_table)[:-1]
            fmax = np.where(ref.contact_table[:-1], self.f_max, 0.0)
            result = solve_grf_ddp(
                A,
                B,
                c,
                mpc_state.vector(),
                ref.states,
                self.Q,
                self.R,
                mu,
                fmax,
                u_init=self._shift_warm_start(),
            )
            if not np.all(np.isfinite(result.controls)):
                raise FloatingPointError("non-finite DDP solution")
        except (EulerSingularityError, FloatingPointError, np.linalg.LinAlgError):
            degraded = True
            result = None
        solve_us = (time.perf_counter() - t0) * 1e6

        if result is not None:
            self._warm_us = result.controls.copy()
            grf = result.controls[0].reshape(4, 3).copy()
            diag = ExpertDiagnostics(
                t,
                result.iterations,
                result.cost,
                result.constraint_violation,
                solve_us,
                degraded,
            )
        else:
            # hold the previous solution, shifted one stage
            shifted = self._shift_warm_start()
            if shifted is not None:
                self._warm_us = shifted
                grf = shifted[0].reshape(4, 3).copy()
            else:
                grf = np.zeros((4, 3))
            grf[~contact_now] = 0.0
            self.degraded_count += 1
            diag = ExpertDiagnostics(t, 0, np.nan, np.nan, solve_us, True)
        self.diagnostics.append(diag)
        self._last_grf = grf

        tau = np.zeros(12)
        swing_err = np.full(4, np.nan)
        R = quat_to_matrix(state.base_orientation)
        load_gate = self._load_gate(feet)
        mu_feet = self._foot_friction(feet)
        for leg in range(4):
            q_leg = state.joint_angles[3 * leg : 3 * leg + 3]
            dq_leg = state.joint_velocities[3 * leg : 3 * leg + 3]
            if contact_now[leg]:
                f = grf[leg].copy()
                allowed = load_gate[leg] * mu_feet[leg] * max(f[2], 0.0)
                ft_norm = np.hypot(f[0], f[1])
                if ft_norm > allowed:
                    scale = 0.0 if ft_norm == 0.0 else allowed / ft_norm
                    f[0] *= scale
                    f[1] *= scale
                J = foot_jacobian(q_leg, leg, self.model)
                f_body = R.T @ f
                tau[3 * leg : 3 * leg + 3] = -J.T @ f_body
            else:
                ref_acc_b = None
                if ref is not None and ref.swing_curves[leg] is not None:
                    s = self.schedule.swing_progress(t)[leg]
                    curve = ref.swing_curves[leg]
                    pos_w, vel_w, acc_w = curve.position_velocity_accel(s)
                    swing_err[leg] = np.linalg.norm(pos_w - feet[leg])
                    ref_pos_b = R.T @ (pos_w - state.base_position)
                    ref_vel_b = R.T @ (vel_w - state.base_linear_velocity)
                    ref_acc_b = R.T @ acc_w
                else:
                    # degraded without a reference: hold the leg where it is
                    ref_pos_b = forward_kinematics(q_leg, leg, self.model)
                    ref_vel_b = np.zeros(3)
                tau[3 * leg : 3 * leg + 3] = swing_torque(
                    leg,
                    q_leg,
                    dq_leg,
                    ref_pos_b,
                    ref_vel_b,
                    self.model,
                    self.swing_kp,
                    self.swing_kd,
                    ref_acc_b,
                )
        targets = pd_targets_from_torque(
            tau,
            state.joint_angles,
            state.joint_velocities,
            self.model.kp_joint,
            self.model.kd_joint,
        )
        info = {
            "tau_ff": tau,
            "grf": grf,
            "degraded": degraded,
            "contact_schedule": contact_now,
            "diagnostics": diag,
            "swing_error": swing_err,
            "footholds": None if ref is None else ref.footholds,
        }
        return targets, info
