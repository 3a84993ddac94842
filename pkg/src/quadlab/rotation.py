"""Quaternion / rotation helpers shared by the simulator and controllers.

Quaternions are (w, x, y, z), unit norm, body-to-world. All functions are
nopython-compatible so kernels can call them directly.
"""

import numpy as np

from .backend import njit


@njit(cache=True)
def quat_normalize(q):
    n = np.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    out = np.empty(4)
    if n < 1e-12:
        out[0] = 1.0
        out[1] = 0.0
        out[2] = 0.0
        out[3] = 0.0
    else:
        out[0] = q[0] / n
        out[1] = q[1] / n
        out[2] = q[2] / n
        out[3] = q[3] / n
    return out


@njit(cache=True)
def quat_mul(a, b):
    out = np.empty(4)
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return out


@njit(cache=True)
def quat_to_matrix(q):
    """Body->world rotation matrix."""
    w, x, y, z = q[0], q[1], q[2], q[3]
    R = np.empty((3, 3))
    R[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[0, 1] = 2.0 * (x * y - z * w)
    R[0, 2] = 2.0 * (x * z + y * w)
    R[1, 0] = 2.0 * (x * y + z * w)
    R[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[1, 2] = 2.0 * (y * z - x * w)
    R[2, 0] = 2.0 * (x * z - y * w)
    R[2, 1] = 2.0 * (y * z + x * w)
    R[2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


@njit(cache=True)
def quat_integrate(q, omega_body, dt):
    """Exponential-map step: q <- q * exp(omega_body * dt / 2), renormalized."""
    wx = omega_body[0] * dt
    wy = omega_body[1] * dt
    wz = omega_body[2] * dt
    theta = np.sqrt(wx * wx + wy * wy + wz * wz)
    dq = np.empty(4)
    if theta < 1e-12:
        dq[0] = 1.0
        dq[1] = 0.5 * wx
        dq[2] = 0.5 * wy
        dq[3] = 0.5 * wz
    else:
        half = 0.5 * theta
        s = np.sin(half) / theta
        dq[0] = np.cos(half)
        dq[1] = wx * s
        dq[2] = wy * s
        dq[3] = wz * s
    return quat_normalize(quat_mul(q, dq))


@njit(cache=True)
def quat_to_euler_zyx(q):
    """Z-Y-X (yaw, pitch, roll) angles, returned as (roll, pitch, yaw)."""
    w, x, y, z = q[0], q[1], q[2], q[3]
    sinp = 2.0 * (w * y - z * x)
    if sinp > 1.0:
        sinp = 1.0
    elif sinp < -1.0:
        sinp = -1.0
    out = np.empty(3)
    out[0] = np.arctan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    out[1] = np.arcsin(sinp)
    out[2] = np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    return out


@njit(cache=True)
def rot_z(yaw):
    c = np.cos(yaw)
    s = np.sin(yaw)
    R = np.empty((3, 3))
    R[0, 0] = c
    R[0, 1] = -s
    R[0, 2] = 0.0
    R[1, 0] = s
    R[1, 1] = c
    R[1, 2] = 0.0
    R[2, 0] = 0.0
    R[2, 1] = 0.0
    R[2, 2] = 1.0
    return R


@njit(cache=True)
def projected_gravity(q):
    """World down-vector (0,0,-1) expressed in the body frame."""
    R = quat_to_matrix(q)
    out = np.empty(3)
    out[0] = -R[2, 0]
    out[1] = -R[2, 1]
    out[2] = -R[2, 2]
    return out


def quat_from_euler_zyx(roll, pitch, yaw):
    """Inverse of quat_to_euler_zyx (test/setup helper, not kernel-facing)."""
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    return np.array(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ]
    )
