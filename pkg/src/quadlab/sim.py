"""Quadruped simulator: rigid base plus four massless 3-DoF legs.

The base is a single rigid body driven by gravity and foot contact wrenches.
Each joint is torque-driven against a scalar reflected inertia; leg motion
feeds back on the base only through contact forces. Contact is a penalty
spring-damper normal force with an anchor-based Coulomb stick-slip tangential
force (friction is applied against foot velocity relative to the terrain
cell's conveyor velocity). Stepped at 1 kHz.

Integration: joint and rotational states use semi-implicit Euler (quaternion
via exponential map, renormalized); base translation uses a trapezoidal
position update so constant-acceleration flight integrates exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from .backend import njit
from .kinematics import leg_forward_kinematics, leg_jacobian
from .model import LEG_SIDE, NUM_JOINTS, NUM_LEGS, RobotModel
from .rotation import quat_integrate, quat_to_matrix
from .terrain import Terrain, sample_height

SIM_DT = 0.001
CONTROL_DT = 0.01
SUBSTEPS_PER_TICK = int(round(CONTROL_DT / SIM_DT))

# Penalty contact defaults. The joint-side damping reaction is integrated
# implicitly (see _step_kernel), so d_n well above the explicit stability
# bound of ~60 N s/m stays stable; 200 puts touchdown near half-critical
# damping for the 9 kg base on a diagonal pair. Normal damping is one-sided
# (compression only) and fades in over the first few mm of penetration, so
# the force is continuous at touchdown and feet separate freely.
CONTACT_KN = 8000.0  # N/m
CONTACT_DN = 200.0  # N s/m at full penetration
CONTACT_KT = 2000.0  # N/m
CONTACT_DT_TANGENTIAL = 20.0  # N s/m
CONTACT_DAMP_RAMP_DEPTH = 0.004  # m
CONTACT_RELEASE_FRACTION = 0.3  # of d_n while separating


class SimFault(RuntimeError):
    """Raised when a non-finite value enters or leaves the stepper."""


@dataclass
class RobotState:
    base_position: np.ndarray  # (3,) m, world
    base_orientation: np.ndarray  # (4,) unit quaternion wxyz, body->world
    base_linear_velocity: np.ndarray  # (3,) m/s, world
    base_angular_velocity: np.ndarray  # (3,) rad/s, body
    joint_angles: np.ndarray  # (12,) rad, [abd, hip, knee] x [FR, FL, RR, RL]
    joint_velocities: np.ndarray  # (12,) rad/s
    time: float = 0.0

    def copy(self) -> "RobotState":
        return RobotState(
            self.base_position.copy(),
            self.base_orientation.copy(),
            self.base_linear_velocity.copy(),
            self.base_angular_velocity.copy(),
            self.joint_angles.copy(),
            self.joint_velocities.copy(),
            self.time,
        )


@dataclass
class ContactState:
    in_contact: np.ndarray  # (4,) bool
    contact_point: np.ndarray  # (4, 3) m, world
    normal_force: np.ndarray  # (4,) N, >= 0
    tangential_force: np.ndarray  # (4, 2) N, world xy
    slipping: np.ndarray  # (4,) bool


def default_state(model: RobotModel, terrain: Terrain | None = None) -> RobotState:
    """Standing pose with the base over the world origin."""
    height = 0.0 if terrain is None else float(terrain.sample_height(0.0, 0.0))
    return RobotState(
        base_position=np.array([0.0, 0.0, height + model.stand_height]),
        base_orientation=np.array([1.0, 0.0, 0.0, 0.0]),
        base_linear_velocity=np.zeros(3),
        base_angular_velocity=np.zeros(3),
        joint_angles=model.stand_pose.copy(),
        joint_velocities=np.zeros(12),
    )


@njit(cache=True)
def _first_nonfinite(p, quat, v, wb, q, dq, targets):
    for i in range(3):
        if not np.isfinite(p[i]):
            return 1
        if not np.isfinite(v[i]):
            return 3
        if not np.isfinite(wb[i]):
            return 4
    for i in range(4):
        if not np.isfinite(quat[i]):
            return 2
    for i in range(12):
        if not np.isfinite(q[i]):
            return 5
        if not np.isfinite(dq[i]):
            return 6
        if not np.isfinite(targets[i]):
            return 7
    return 0


_FAULT_FIELDS = {
    1: "base_position",
    2: "base_orientation",
    3: "base_linear_velocity",
    4: "base_angular_velocity",
    5: "joint_angles",
    6: "joint_velocities",
    7: "pd_targets",
}


@njit(cache=True)
def _step_kernel(
    p,
    quat,
    v,
    wb,
    q,
    dq,
    anchors,
    anchor_on,
    pd_targets,
    kp,
    kd,
    motor_viscous,
    motor_coulomb,
    mass,
    inertia,
    inertia_inv,
    hips,
    sides,
    l1,
    l2,
    l3,
    q_lo,
    q_hi,
    reflected_inertia,
    torque_limit,
    gravity,
    k_n,
    d_n,
    k_t,
    d_t,
    damp_ramp,
    release_fraction,
    hgrid,
    fgrid,
    cgrid,
    tx0,
    ty0,
    tcell,
    dt,
):
    tau = np.empty(12)
    for j in range(12):
        t = kp[j] * (pd_targets[j] - q[j]) - kd[j] * dq[j]
        if t > torque_limit:
            t = torque_limit
        elif t < -torque_limit:
            t = -torque_limit
        tau[j] = t

    R = quat_to_matrix(quat)
    force_sum = np.zeros(3)
    torque_world = np.zeros(3)
    tau_contact = np.zeros(12)
    joint_damp = np.zeros(12)
    in_contact = np.zeros(4, dtype=np.int64)
    slipping = np.zeros(4, dtype=np.int64)
    normal_force = np.zeros(4)
    tangential = np.zeros((4, 2))
    cpoints = np.zeros((4, 3))
    tnx, tny = hgrid.shape

    for leg in range(4):
        q_leg = q[3 * leg : 3 * leg + 3]
        dq_leg = dq[3 * leg : 3 * leg + 3]
        foot_b = leg_forward_kinematics(q_leg, hips[leg], sides[leg], l1, l2, l3)
        J = leg_jacobian(q_leg, sides[leg], l1, l2, l3)
        foot_w = np.empty(3)
        vel_b = np.empty(3)
        # body-frame foot velocity: omega x r + J dq
        vel_b[0] = wb[1] * foot_b[2] - wb[2] * foot_b[1]
        vel_b[1] = wb[2] * foot_b[0] - wb[0] * foot_b[2]
        vel_b[2] = wb[0] * foot_b[1] - wb[1] * foot_b[0]
        for r in range(3):
            vel_b[r] += J[r, 0] * dq_leg[0] + J[r, 1] * dq_leg[1] + J[r, 2] * dq_leg[2]
        foot_vel = np.empty(3)
        for r in range(3):
            foot_w[r] = p[r] + R[r, 0] * foot_b[0] + R[r, 1] * foot_b[1] + R[r, 2] * foot_b[2]
            foot_vel[r] = v[r] + R[r, 0] * vel_b[0] + R[r, 1] * vel_b[1] + R[r, 2] * vel_b[2]
        cpoints[leg, 0] = foot_w[0]
        cpoints[leg, 1] = foot_w[1]
        cpoints[leg, 2] = foot_w[2]

        ground = sample_height(hgrid, tx0, ty0, tcell, foot_w[0], foot_w[1])
        depth = ground - foot_w[2]
        if depth <= 0.0:
            anchor_on[leg] = 0
            continue

        in_contact[leg] = 1
        # nearest cell for friction / conveyor
        ix = int(np.floor((foot_w[0] - tx0) / tcell + 0.5))
        iy = int(np.floor((foot_w[1] - ty0) / tcell + 0.5))
        if ix < 0:
            ix = 0
        elif ix > tnx - 1:
            ix = tnx - 1
        if iy < 0:
            iy = 0
        elif iy > tny - 1:
            iy = tny - 1
        mu = fgrid[ix, iy]
        belt_x = cgrid[ix, iy, 0]
        belt_y = cgrid[ix, iy, 1]

        # damping fades in with depth (continuous force at touchdown, a
        # landing foot is not walled off from building spring load) and is
        # asymmetric: full while compressing, reduced while separating.
        # Symmetric damping traps a lifting foot for most of a swing phase;
        # undamped release returns the whole impact energy and the gait pogos.
        dn_eff = d_n * min(1.0, depth / damp_ramp)
        if foot_vel[2] > 0.0:
            dn_eff *= release_fraction
        fn = k_n * depth - dn_eff * foot_vel[2]
        if fn < 0.0:
            fn = 0.0
        normal_force[leg] = fn

        if anchor_on[leg] == 0:
            anchors[leg, 0] = foot_w[0]
            anchors[leg, 1] = foot_w[1]
            anchor_on[leg] = 1
        else:
            # the anchor rides the belt: static friction carries a stuck
            # foot with the conveyor until the cone breaks
            anchors[leg, 0] += belt_x * dt
            anchors[leg, 1] += belt_y * dt
        rel_vx = foot_vel[0] - belt_x
        rel_vy = foot_vel[1] - belt_y
        ftx = -k_t * (foot_w[0] - anchors[leg, 0]) - d_t * rel_vx
        fty = -k_t * (foot_w[1] - anchors[leg, 1]) - d_t * rel_vy
        fmag = np.sqrt(ftx * ftx + fty * fty)
        limit = mu * fn
        if fmag > limit:
            slipping[leg] = 1
            if fmag > 0.0:
                scale = limit / fmag
                ftx *= scale
                fty *= scale
            # drag the anchor so the spring term alone yields the clamped force
            anchors[leg, 0] = foot_w[0] + (ftx + d_t * rel_vx) / k_t
            anchors[leg, 1] = foot_w[1] + (fty + d_t * rel_vy) / k_t
        tangential[leg, 0] = ftx
        tangential[leg, 1] = fty

        force_sum[0] += ftx
        force_sum[1] += fty
        force_sum[2] += fn
        rx = foot_w[0] - p[0]
        ry = foot_w[1] - p[1]
        rz = foot_w[2] - p[2]
        torque_world[0] += ry * fn - rz * fty
        torque_world[1] += rz * ftx - rx * fn
        torque_world[2] += rx * fty - ry * ftx

        # contact force back onto the leg joints (body frame)
        fbx = R[0, 0] * ftx + R[1, 0] * fty + R[2, 0] * fn
        fby = R[0, 1] * ftx + R[1, 1] * fty + R[2, 1] * fn
        fbz = R[0, 2] * ftx + R[1, 2] * fty + R[2, 2] * fn
        for c in range(3):
            tau_contact[3 * leg + c] = J[0, c] * fbx + J[1, c] * fby + J[2, c] * fbz
            # Contact damping reflected to this joint. Integrated implicitly
            # below: explicit coupling of d_n through the light reflected
            # inertia violates d*||J col||^2*dt/I < 2 and blows up.
            wjx = R[0, 0] * J[0, c] + R[0, 1] * J[1, c] + R[0, 2] * J[2, c]
            wjy = R[1, 0] * J[0, c] + R[1, 1] * J[1, c] + R[1, 2] * J[2, c]
            wjz = R[2, 0] * J[0, c] + R[2, 1] * J[1, c] + R[2, 2] * J[2, c]
            m = 0.0
            if fn > 0.0:
                m += dn_eff * wjz * wjz
            if slipping[leg] == 0:
                m += d_t * (wjx * wjx + wjy * wjy)
            joint_damp[3 * leg + c] = m

    # base translation: kick, then trapezoidal drift
    ax = force_sum[0] / mass
    ay = force_sum[1] / mass
    az = force_sum[2] / mass - gravity
    vx_new = v[0] + dt * ax
    vy_new = v[1] + dt * ay
    vz_new = v[2] + dt * az
    p[0] += dt * 0.5 * (v[0] + vx_new)
    p[1] += dt * 0.5 * (v[1] + vy_new)
    p[2] += dt * 0.5 * (v[2] + vz_new)
    v[0] = vx_new
    v[1] = vy_new
    v[2] = vz_new

    # base rotation: Euler equations in the body frame
    tb = np.empty(3)
    for r in range(3):
        tb[r] = (
            R[0, r] * torque_world[0]
            + R[1, r] * torque_world[1]
            + R[2, r] * torque_world[2]
        )
    Iw = np.empty(3)
    for r in range(3):
        Iw[r] = inertia[r, 0] * wb[0] + inertia[r, 1] * wb[1] + inertia[r, 2] * wb[2]
    gyro = np.empty(3)
    gyro[0] = wb[1] * Iw[2] - wb[2] * Iw[1]
    gyro[1] = wb[2] * Iw[0] - wb[0] * Iw[2]
    gyro[2] = wb[0] * Iw[1] - wb[1] * Iw[0]
    for r in range(3):
        acc = (
            inertia_inv[r, 0] * (tb[0] - gyro[0])
            + inertia_inv[r, 1] * (tb[1] - gyro[1])
            + inertia_inv[r, 2] * (tb[2] - gyro[2])
        )
        wb[r] += dt * acc
    quat_new = quat_integrate(quat, wb, dt)
    for r in range(4):
        quat[r] = quat_new[r]

    # joints: decoupled reflected-inertia dynamics. tau_contact already holds
    # the damping evaluated at the current velocity; re-centering it on the
    # new velocity gives the diagonally implicit update below.
    for j in range(12):
        friction = -motor_viscous[j] * dq[j] - motor_coulomb[j] * np.tanh(dq[j] / 0.02)
        num = dq[j] + dt * (tau[j] + tau_contact[j] + friction + joint_damp[j] * dq[j]) / reflected_inertia
        dq[j] = num / (1.0 + dt * joint_damp[j] / reflected_inertia)
        q[j] += dt * dq[j]
        if q[j] < q_lo[j]:
            q[j] = q_lo[j]
            if dq[j] < 0.0:
                dq[j] = 0.0
        elif q[j] > q_hi[j]:
            q[j] = q_hi[j]
            if dq[j] > 0.0:
                dq[j] = 0.0

    return tau, in_contact, cpoints, normal_force, tangential, slipping


@dataclass
class ContactParams:
    k_normal: float = CONTACT_KN
    d_normal: float = CONTACT_DN
    k_tangential: float = CONTACT_KT
    d_tangential: float = CONTACT_DT_TANGENTIAL
    damp_ramp_depth: float = CONTACT_DAMP_RAMP_DEPTH
    release_fraction: float = CONTACT_RELEASE_FRACTION


class Simulator:
    """Owns one robot's state plus contact memory (friction anchors).

    Not thread-shareable; run one instance per environment. Gains and motor
    friction are per-joint vectors so domain randomization can perturb them
    without touching the model.
    """

    def __init__(
        self,
        model: RobotModel,
        terrain: Terrain,
        state: RobotState | None = None,
        contact: ContactParams | None = None,
    ):
        self.model = model
        self.terrain = terrain
        self.contact_params = contact or ContactParams()
        self.kp = np.full(NUM_JOINTS, model.kp_joint)
        self.kd = np.full(NUM_JOINTS, model.kd_joint)
        self.motor_viscous = np.zeros(NUM_JOINTS)
        self.motor_coulomb = np.zeros(NUM_JOINTS)
        self._inertia_inv = np.linalg.inv(model.base_inertia)
        self._sides = LEG_SIDE.copy()
        self._q_lo = np.ascontiguousarray(model.joint_limits[:, 0])
        self._q_hi = np.ascontiguousarray(model.joint_limits[:, 1])
        self.reset(state or default_state(model, terrain))

    def reset(self, state: RobotState):
        self.state = state.copy()
        self._anchors = np.zeros((NUM_LEGS, 2))
        self._anchor_on = np.zeros(NUM_LEGS, dtype=np.int64)
        self._steps = int(round(state.time / SIM_DT))

    def set_terrain(self, terrain: Terrain):
        self.terrain = terrain

    def step(self, pd_targets: np.ndarray, dt: float = SIM_DT):
        """Advance one 1 kHz substep. Returns (applied_torques, ContactState)."""
        s = self.state
        code = _first_nonfinite(
            s.base_position,
            s.base_orientation,
            s.base_linear_velocity,
            s.base_angular_velocity,
            s.joint_angles,
            s.joint_velocities,
            pd_targets,
        )
        if code != 0:
            raise SimFault(f"non-finite value in {_FAULT_FIELDS[code]}")
        m = self.model
        t = self.terrain
        cp = self.contact_params
        tau, in_contact, cpoints, fn, ft, slipping = _step_kernel(
            s.base_position,
            s.base_orientation,
            s.base_linear_velocity,
            s.base_angular_velocity,
            s.joint_angles,
            s.joint_velocities,
            self._anchors,
            self._anchor_on,
            pd_targets,
            self.kp,
            self.kd,
            self.motor_viscous,
            self.motor_coulomb,
            m.base_mass,
            m.base_inertia,
            self._inertia_inv,
            m.hip_offsets,
            self._sides,
            m.link_lengths[0],
            m.link_lengths[1],
            m.link_lengths[2],
            self._q_lo,
            self._q_hi,
            m.joint_reflected_inertia,
            m.torque_limit,
            m.gravity,
            cp.k_normal,
            cp.d_normal,
            cp.k_tangential,
            cp.d_tangential,
            cp.damp_ramp_depth,
            cp.release_fraction,
            t.height,
            t.friction,
            t.conveyor,
            t.origin[0],
            t.origin[1],
            t.cell_size,
            dt,
        )
        self._steps += 1
        s.time = self._steps * dt
        contact = ContactState(
            in_contact=in_contact.astype(bool),
            contact_point=cpoints,
            normal_force=fn,
            tangential_force=ft,
            slipping=slipping.astype(bool),
        )
        return tau, contact

    def foot_positions_world(self) -> np.ndarray:
        """(4, 3) world foot positions for the current state."""
        s = self.state
        R = quat_to_matrix(s.base_orientation)
        out = np.empty((NUM_LEGS, 3))
        m = self.model
        for leg in range(NUM_LEGS):
            q_leg = s.joint_angles[3 * leg : 3 * leg + 3]
            foot_b = leg_forward_kinematics(
                q_leg,
                m.hip_offsets[leg],
                self._sides[leg],
                m.link_lengths[0],
                m.link_lengths[1],
                m.link_lengths[2],
            )
            out[leg] = s.base_position + R @ foot_b
        return out


def step(
    state: RobotState,
    pd_targets: np.ndarray,
    model: RobotModel,
    terrain: Terrain,
    dt: float = SIM_DT,
    simulator: Simulator | None = None,
):
    """One-shot stepping helper.

    Friction anchors live in the Simulator; passing one keeps stick-slip
    memory across calls. Without one, anchors start at the current foot
    positions (fresh stick).
    """
    if simulator is None:
        simulator = Simulator(model, terrain, state)
    else:
        simulator.reset(state)
    tau, contact = simulator.step(pd_targets, dt)
    return simulator.state.copy(), contact, tau
