"""Single-rigid-body model for the MPC: state, conversions, linearization.

State (12): [roll, pitch, yaw, p_x, p_y, p_z, w_x, w_y, w_z, v_x, v_y, v_z]
with Euler rates approximated as Rz(yaw0)^T times the world angular velocity
(valid near level orientation), and moment arms frozen at the reference foot
positions so the dynamics are linear time-varying in the ground reaction
forces. Discretized by forward Euler at the MPC step.
"""

from dataclasses import dataclass

import numpy as np

from ..backend import njit
from ..model import RobotModel
from ..rotation import quat_to_euler_zyx, quat_to_matrix
from ..sim import RobotState

MPC_HORIZON = 26
MPC_DT = 0.01
PITCH_GUARD = 1.2  # rad; Euler-rate approximation breaks near the singularity


class EulerSingularityError(RuntimeError):
    pass


@dataclass
class MpcState:
    euler_zyx: np.ndarray  # (3,) roll, pitch, yaw
    position: np.ndarray  # (3,) m, world
    angular_velocity: np.ndarray  # (3,) rad/s, world
    linear_velocity: np.ndarray  # (3,) m/s, world

    def vector(self) -> np.ndarray:
        return np.concatenate(
            [self.euler_zyx, self.position, self.angular_velocity, self.linear_velocity]
        )

    def check(self):
        if abs(self.euler_zyx[1]) >= PITCH_GUARD:
            raise EulerSingularityError(
                f"pitch {self.euler_zyx[1]:.3f} rad exceeds the Euler guard"
            )


def mpc_state_from_robot(state: RobotState) -> MpcState:
    euler = quat_to_euler_zyx(state.base_orientation)
    R = quat_to_matrix(state.base_orientation)
    return MpcState(
        euler_zyx=np.asarray(euler),
        position=state.base_position.copy(),
        angular_velocity=R @ state.base_angular_velocity,
        linear_velocity=state.base_linear_velocity.copy(),
    )


@njit(cache=True)
def build_ltv(ref_states, foot_table, yaw0, mass, inertia, gravity, dt):
    """(A, B, c) per stage for forward-Euler discrete SRB dynamics."""
    T = foot_table.shape[0] - 1
    A = np.zeros((T, 12, 12))
    B = np.zeros((T, 12, 12))
    c = np.zeros((T, 12))
    cz = np.cos(yaw0)
    sz = np.sin(yaw0)
    # world-frame inertia at the linearization yaw
    Rz = np.zeros((3, 3))
    Rz[0, 0] = cz
    Rz[0, 1] = -sz
    Rz[1, 0] = sz
    Rz[1, 1] = cz
    Rz[2, 2] = 1.0
    Iw = Rz @ inertia @ Rz.T
    Iw_inv = np.linalg.inv(Iw)
    for k in range(T):
        Ak = A[k]
        for i in range(12):
            Ak[i, i] = 1.0
        # euler rates from world angular velocity: Rz^T
        Ak[0, 6] = dt * cz
        Ak[0, 7] = dt * sz
        Ak[1, 6] = -dt * sz
        Ak[1, 7] = dt * cz
        Ak[2, 8] = dt
        Ak[3, 9] = dt
        Ak[4, 10] = dt
        Ak[5, 11] = dt
        Bk = B[k]
        for leg in range(4):
            rx = foot_table[k, leg, 0] - ref_states[k, 3]
            ry = foot_table[k, leg, 1] - ref_states[k, 4]
            rz = foot_table[k, leg, 2] - ref_states[k, 5]
            # d(omega)/df = Iw_inv [r]x
            rcross = np.zeros((3, 3))
            rcross[0, 1] = -rz
            rcross[0, 2] = ry
            rcross[1, 0] = rz
            rcross[1, 2] = -rx
            rcross[2, 0] = -ry
            rcross[2, 1] = rx
            blk = Iw_inv @ rcross
            for r in range(3):
                for cc in range(3):
                    Bk[6 + r, 3 * leg + cc] = dt * blk[r, cc]
            for r in range(3):
                Bk[9 + r, 3 * leg + r] = dt / mass
        c[k, 11] = -dt * gravity
    return A, B, c


def default_weights(model: RobotModel | None = None):
    """Tracking weights: (Q diag 12, R scale). Exposed in config.

    Planar position is unweighted on purpose. The reference re-anchors at the
    current pose every solve, so a planar position term lets the solver defer
    velocity correction past the executed first stage forever (each replan
    forgives the drift); the velocity terms act on the stage that runs.
    """
    q = np.array([10.0, 10.0, 10.0, 0.0, 0.0, 50.0, 1.0, 1.0, 1.0, 5.0, 5.0, 5.0])
    # tangential force is priced well above normal force: attitude correction
    # then prefers redistributing vertical load between feet over thrusting,
    # which otherwise bleeds into steady velocity bias through the executed
    # first stage
    r = np.tile([3e-4, 3e-4, 1e-5], 4)
    return np.diag(q), np.diag(r)
