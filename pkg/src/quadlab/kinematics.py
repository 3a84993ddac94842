"""Analytic 3-link leg kinematics (abduction roll, hip pitch, knee pitch).

Positions are in the body frame relative to the base origin. With all-zero
angles the foot hangs straight below the hip, offset laterally by the
abduction link.
"""

import numpy as np

from .backend import njit
from .model import LEG_SIDE, RobotModel


@njit(cache=True)
def leg_forward_kinematics(q_leg, hip_offset, side, l1, l2, l3):
    """Foot position in the body frame for one leg."""
    s1 = np.sin(q_leg[0])
    c1 = np.cos(q_leg[0])
    s2 = np.sin(q_leg[1])
    c2 = np.cos(q_leg[1])
    s23 = np.sin(q_leg[1] + q_leg[2])
    c23 = np.cos(q_leg[1] + q_leg[2])
    ext = l2 * s2 + l3 * s23  # fore-aft extension
    drop = l2 * c2 + l3 * c23  # downward extension
    p = np.empty(3)
    p[0] = hip_offset[0] - ext
    p[1] = hip_offset[1] + side * l1 * c1 + s1 * drop
    p[2] = hip_offset[2] + side * l1 * s1 - c1 * drop
    return p


@njit(cache=True)
def leg_jacobian(q_leg, side, l1, l2, l3):
    """d(foot position)/d(q_leg), body frame, 3x3."""
    s1 = np.sin(q_leg[0])
    c1 = np.cos(q_leg[0])
    s2 = np.sin(q_leg[1])
    c2 = np.cos(q_leg[1])
    s23 = np.sin(q_leg[1] + q_leg[2])
    c23 = np.cos(q_leg[1] + q_leg[2])
    ext = l2 * s2 + l3 * s23
    drop = l2 * c2 + l3 * c23
    J = np.empty((3, 3))
    J[0, 0] = 0.0
    J[0, 1] = -drop
    J[0, 2] = -l3 * c23
    J[1, 0] = -side * l1 * s1 + c1 * drop
    J[1, 1] = -s1 * ext
    J[1, 2] = -s1 * l3 * s23
    J[2, 0] = side * l1 * c1 + s1 * drop
    J[2, 1] = c1 * ext
    J[2, 2] = c1 * l3 * s23
    return J


def forward_kinematics(joint_angles_leg, leg_index, model: RobotModel):
    """Body-frame foot position of one leg (convenience wrapper)."""
    if not 0 <= leg_index < 4:
        raise IndexError(f"leg_index {leg_index} out of range 0..3")
    q = np.asarray(joint_angles_leg, dtype=float)
    l1, l2, l3 = model.link_lengths
    return leg_forward_kinematics(
        q, model.hip_offsets[leg_index], LEG_SIDE[leg_index], l1, l2, l3
    )


def foot_jacobian(joint_angles_leg, leg_index, model: RobotModel):
    """Body-frame foot Jacobian of one leg (convenience wrapper)."""
    if not 0 <= leg_index < 4:
        raise IndexError(f"leg_index {leg_index} out of range 0..3")
    q = np.asarray(joint_angles_leg, dtype=float)
    l1, l2, l3 = model.link_lengths
    return leg_jacobian(q, LEG_SIDE[leg_index], l1, l2, l3)


def all_foot_positions(joint_angles, model: RobotModel):
    """Body-frame positions of all four feet, shape (4, 3)."""
    q = np.asarray(joint_angles, dtype=float).reshape(4, 3)
    out = np.empty((4, 3))
    for leg in range(4):
        out[leg] = forward_kinematics(q[leg], leg, model)
    return out
