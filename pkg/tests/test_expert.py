"""Expert controller: PD inversion, swing impedance, closed-loop sanity."""

import numpy as np
import pytest

from quadlab.gait import GaitSchedule
from quadlab.kinematics import foot_jacobian, forward_kinematics
from quadlab.model import RobotModel
from quadlab.mpc.expert import MpcExpert, pd_targets_from_torque, swing_torque
from quadlab.sim import CONTROL_DT, SUBSTEPS_PER_TICK, Simulator, default_state
from quadlab.terrain import generate

KP, KD = 17.0, 0.4


def pd_law(targets, q, dq, kp=KP, kd=KD):
    return kp * (targets - q) - kd * dq


def test_pd_inversion_identity(rng):
    # the round trip reproduces any torque to machine precision
    for _ in range(100):
        q = rng.uniform(-2.0, 2.0, 12)
        dq = rng.uniform(-10.0, 10.0, 12)
        tau = rng.uniform(-17.0, 17.0, 12)
        targets = pd_targets_from_torque(tau, q, dq, KP, KD)
        assert np.max(np.abs(pd_law(targets, q, dq) - tau)) < 1e-12


def test_pd_inversion_zero_torque(rng):
    q = rng.uniform(-1.0, 1.0, 12)
    dq = rng.uniform(-5.0, 5.0, 12)
    targets = pd_targets_from_torque(np.zeros(12), q, dq, KP, KD)
    assert np.allclose(targets, q + (KD / KP) * dq, atol=1e-15)


def test_pd_inversion_recovers_target(rng):
    # torque that PD would emit for q_target maps back to q_target exactly
    q = rng.uniform(-1.0, 1.0, 12)
    dq = rng.uniform(-5.0, 5.0, 12)
    q_target = rng.uniform(-1.0, 1.0, 12)
    tau = pd_law(q_target, q, dq)
    assert np.allclose(pd_targets_from_torque(tau, q, dq, KP, KD), q_target, atol=1e-12)


def test_swing_torque_zero_at_reference(model):
    q_leg = np.array([0.1, -0.9, 1.7])
    dq_leg = np.array([0.5, -0.2, 0.3])
    p = forward_kinematics(q_leg, 0, model)
    v = foot_jacobian(q_leg, 0, model) @ dq_leg
    tau = swing_torque(0, q_leg, dq_leg, p, v, model)
    assert np.allclose(tau, 0.0, atol=1e-12)


def test_swing_torque_pure_position_error(model):
    q_leg = np.array([0.0, -0.8, 1.6])
    dq_leg = np.zeros(3)
    p = forward_kinematics(q_leg, 1, model)
    e = np.array([0.01, -0.02, 0.005])
    tau = swing_torque(1, q_leg, dq_leg, p + e, np.zeros(3), model, kp=150.0, kd=0.0)
    J = foot_jacobian(q_leg, 1, model)
    assert np.allclose(tau, J.T @ (150.0 * e), atol=1e-12)


def test_swing_torque_is_stabilizing(model):
    # the torque does positive work toward the reference, not away from it
    q_leg = np.array([0.05, -0.7, 1.5])
    p = forward_kinematics(q_leg, 0, model)
    ref = p + np.array([0.02, 0.0, 0.01])
    tau = swing_torque(0, q_leg, np.zeros(3), ref, np.zeros(3), model)
    J = foot_jacobian(q_leg, 0, model)
    step = J @ (tau * 1e-4)  # foot motion for a small torque impulse
    assert (ref - p) @ step > 0.0


def test_swing_torque_matches_energy_gradient(model, rng):
    # position term equals -d/dq of the spring energy 0.5*kp*|p(q)-ref|^2
    h = 1e-6
    kp = 220.0
    for _ in range(10):
        leg = int(rng.integers(0, 4))
        q_leg = rng.uniform(-0.6, 0.6, 3) + np.array([0.0, -0.8, 1.6])
        ref = forward_kinematics(q_leg, leg, model) + rng.uniform(-0.03, 0.03, 3)
        tau = swing_torque(
            leg, q_leg, np.zeros(3), ref, np.zeros(3), model, kp=kp, kd=0.0
        )

        def energy(q):
            d = forward_kinematics(q, leg, model) - ref
            return 0.5 * kp * d @ d

        for j in range(3):
            dq = np.zeros(3)
            dq[j] = h
            fd = -(energy(q_leg + dq) - energy(q_leg - dq)) / (2 * h)
            assert tau[j] == pytest.approx(fd, abs=1e-5)


def test_swing_feedforward_term(model):
    q_leg = np.array([0.1, -0.9, 1.7])
    a_ref = np.array([0.5, -1.0, 2.0])
    p = forward_kinematics(q_leg, 0, model)
    base = swing_torque(0, q_leg, np.zeros(3), p, np.zeros(3), model)
    with_ff = swing_torque(
        0, q_leg, np.zeros(3), p, np.zeros(3), model, ref_acc_body=a_ref
    )
    J = foot_jacobian(q_leg, 0, model)
    expected = model.joint_reflected_inertia * np.linalg.solve(J, a_ref)
    assert np.allclose(with_ff - base, expected, atol=1e-12)


@pytest.fixture(scope="module")
def expert_setup():
    model = RobotModel()
    terrain = generate("flat", 0.0, seed=0)
    return model, terrain


def run_expert(model, terrain, command, seconds, hold_still=0.0):
    sched = GaitSchedule()
    sim = Simulator(model, terrain)
    expert = MpcExpert(model, sched, terrain)
    sim.reset(default_state(model, terrain))
    cmd = np.asarray(command, dtype=float)
    zero = np.zeros(3)
    ticks = int(round(seconds / CONTROL_DT))
    for k in range(ticks):
        t = k * CONTROL_DT
        active = zero if t < hold_still else cmd
        targets, info = expert.act(sim.state, t, active)
        for _ in range(SUBSTEPS_PER_TICK):
            sim.step(targets)
    return sim, expert, info


def test_act_round_trips_torque(expert_setup):
    # stepping the sim with the returned targets reproduces the intended torque
    model, terrain = expert_setup
    sim, expert, info = run_expert(model, terrain, [0.3, 0.0, 0.0], 1.0)
    targets, info = expert.act(sim.state, 1.0, np.array([0.3, 0.0, 0.0]))
    s = sim.state
    tau_pd = pd_law(targets, s.joint_angles, s.joint_velocities)
    tau_clipped = np.clip(tau_pd, -model.torque_limit, model.torque_limit)
    applied, _ = sim.step(targets)
    assert np.max(np.abs(applied - tau_clipped)) < 1e-12
    assert np.max(np.abs(tau_pd - info["tau_ff"])) < 1e-9


def test_act_deterministic(expert_setup):
    model, terrain = expert_setup
    outs = []
    for _ in range(2):
        sim, expert, _ = run_expert(model, terrain, [0.4, 0.1, -0.2], 0.5)
        targets, _ = expert.act(sim.state, 0.5, np.array([0.4, 0.1, -0.2]))
        outs.append((sim.state.base_position.copy(), targets))
    assert np.array_equal(outs[0][0], outs[1][0])
    assert np.array_equal(outs[0][1], outs[1][1])


def test_expert_stands_still(expert_setup):
    model, terrain = expert_setup
    sim, _, info = run_expert(model, terrain, [0.0, 0.0, 0.0], 3.0)
    s = sim.state
    assert abs(s.base_position[0]) < 0.1
    assert abs(s.base_position[1]) < 0.1
    assert s.base_position[2] == pytest.approx(model.stand_height, abs=0.05)
    assert not info["degraded"]


def test_expert_swing_forces_zero(expert_setup):
    model, terrain = expert_setup
    _, _, info = run_expert(model, terrain, [0.5, 0.0, 0.0], 0.75)
    grf = info["grf"]
    stance_now = info["contact_schedule"]
    for leg in range(4):
        if not stance_now[leg]:
            assert np.allclose(grf[leg], 0.0)


def test_expert_diagnostics_recorded(expert_setup):
    model, terrain = expert_setup
    _, expert, _ = run_expert(model, terrain, [0.2, 0.0, 0.0], 0.3)
    assert len(expert.diagnostics) == 30
    for d in expert.diagnostics:
        assert d.iterations >= 1
        assert np.isfinite(d.cost)
        assert d.constraint_violation < 1e-6
