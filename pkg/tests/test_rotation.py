"""Quaternion and Euler utilities."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from quadlab.rotation import (
    projected_gravity,
    quat_from_euler_zyx,
    quat_integrate,
    quat_mul,
    quat_normalize,
    quat_to_euler_zyx,
    quat_to_matrix,
)

finite_angle = st.floats(-3.0, 3.0, allow_nan=False)


def random_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def test_normalize_unit_output(rng):
    for _ in range(50):
        q = rng.normal(size=4)
        assert abs(np.linalg.norm(quat_normalize(q)) - 1.0) < 1e-12


def test_matrix_orthonormal(rng):
    for _ in range(50):
        R = quat_to_matrix(random_quat(rng))
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert abs(np.linalg.det(R) - 1.0) < 1e-12


def test_mul_matches_matrix_product(rng):
    for _ in range(20):
        a, b = random_quat(rng), random_quat(rng)
        Rab = quat_to_matrix(quat_mul(a, b))
        assert np.allclose(Rab, quat_to_matrix(a) @ quat_to_matrix(b), atol=1e-12)


def test_integrate_matches_axis_angle(rng):
    # exponential map about a fixed body axis equals the closed-form rotation
    for _ in range(20):
        q0 = random_quat(rng)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(-0.5, 0.5)
        q1 = quat_integrate(q0, axis * angle, 1.0)
        half = angle / 2.0
        dq = np.array([np.cos(half), *(np.sin(half) * axis)])
        q_exact = quat_mul(q0, dq)
        assert min(np.linalg.norm(q1 - q_exact), np.linalg.norm(q1 + q_exact)) < 1e-12


def test_integrate_preserves_norm(rng):
    q = random_quat(rng)
    for _ in range(1000):
        q = quat_integrate(q, np.array([3.0, -2.0, 1.0]), 0.001)
    assert abs(np.linalg.norm(q) - 1.0) < 1e-9


@settings(max_examples=50, deadline=None)
@given(roll=finite_angle, pitch=st.floats(-1.4, 1.4), yaw=finite_angle)
def test_euler_round_trip(roll, pitch, yaw):
    q = quat_from_euler_zyx(roll, pitch, yaw)
    r2, p2, y2 = quat_to_euler_zyx(q)
    q2 = quat_from_euler_zyx(r2, p2, y2)
    # compare rotations, not angle triples (wrap-around aliases)
    assert np.allclose(quat_to_matrix(q), quat_to_matrix(q2), atol=1e-9)


def test_projected_gravity_identity():
    down = projected_gravity(np.array([1.0, 0.0, 0.0, 0.0]))
    assert np.allclose(down, [0.0, 0.0, -1.0], atol=1e-15)


def test_projected_gravity_90deg_roll():
    q = quat_from_euler_zyx(np.pi / 2, 0.0, 0.0)
    # body rolled +90 deg: world down lands on the body -y axis
    assert np.allclose(projected_gravity(q), [0.0, -1.0, 0.0], atol=1e-12)


def test_projected_gravity_unit_norm(rng):
    for _ in range(50):
        g = projected_gravity(random_quat(rng))
        assert abs(np.linalg.norm(g) - 1.0) < 1e-12
