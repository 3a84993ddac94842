"""Reward closed forms, GAE oracle, and clipped-surrogate gradients."""

import numpy as np
import pytest

from quadlab.policy import MlpPolicy, gaussian_logp
from quadlab.rl import (Curriculum, PpoConfig, PpoTrainer, RewardWeights,
                        RolloutBatch, TRAINING_TERRAIN_KINDS,
                        actor_loss_grads, clipped_surrogate, compute_reward,
                        gae)

W = RewardWeights()


def test_reward_perfect_tracking_equals_tracking_weight():
    cmd = np.array([0.7, -0.2, 0.3])
    lin = np.array([0.7, -0.2, 0.0])
    ang = np.array([0.0, 0.0, 0.3])
    r, parts = compute_reward(lin, ang, 0.0, 1.0, cmd, "SR", W)
    assert r == pytest.approx(W.tracking)
    assert parts["tracking"] == pytest.approx(W.tracking)
    assert parts["movement"] == 0.0 and parts["torque"] == 0.0
    assert parts["contact"] == 0.0


def test_reward_contact_term_only_in_cr():
    cmd = np.zeros(3)
    lin = np.zeros(3)
    ang = np.zeros(3)
    r_all, _ = compute_reward(lin, ang, 0.0, 1.0, cmd, "CR", W)
    r_none, _ = compute_reward(lin, ang, 0.0, 0.0, cmd, "CR", W)
    assert r_all - r_none == pytest.approx(W.contact)
    r_sr, _ = compute_reward(lin, ang, 0.0, 1.0, cmd, "SR", W)
    assert r_sr == pytest.approx(r_none)


def test_reward_torque_penalty_quadratic():
    cmd = np.zeros(3)
    tau_sq = float(np.sum(np.full(12, 2.0) ** 2))
    _, p1 = compute_reward(np.zeros(3), np.zeros(3), tau_sq, 0.0, cmd,
                           "SR", W)
    _, p2 = compute_reward(np.zeros(3), np.zeros(3), 4 * tau_sq, 0.0, cmd,
                           "SR", W)
    assert p2["torque"] == pytest.approx(4 * p1["torque"])


def test_reward_movement_penalty():
    lin = np.array([0.0, 0.0, 0.3])
    ang = np.array([0.2, -0.1, 0.0])
    _, parts = compute_reward(lin, ang, 0.0, 0.0, np.zeros(3), "SR", W)
    assert parts["movement"] == pytest.approx(
        W.movement * (0.09 + 0.04 + 0.01))


def test_config_mode_presets():
    sr = PpoConfig.for_mode("SR")
    assert (sr.init_std, sr.clip) == (1.0, 0.05)
    cr = PpoConfig.for_mode("CR")
    assert (cr.init_std, cr.clip) == (2.0, 0.1)
    va = PpoConfig.for_mode("SR", vanilla=True)
    assert (va.init_std, va.clip) == (3.0, 0.2)
    override = PpoConfig.for_mode("SR", clip=0.07)
    assert override.clip == 0.07 and override.init_std == 1.0


def test_config_validation():
    with pytest.raises(ValueError, match="mode"):
        PpoConfig(mode="XX")
    with pytest.raises(ValueError, match="clip"):
        PpoConfig(clip=0.0)
    with pytest.raises(ValueError, match="learning"):
        PpoConfig(actor_lr=-1.0)


def test_curriculum_schedule():
    c = Curriculum()
    for it in range(5):
        c.advance(it)
        assert c.factor == 0.01
    c.advance(5)
    assert c.factor == pytest.approx(0.01 / 0.96)
    c.advance(6)
    assert c.factor == pytest.approx(0.01 / 0.96)
    c.advance(10)
    assert c.factor == pytest.approx(0.01 / 0.96 ** 2)


def test_curriculum_caps_at_one():
    c = Curriculum(factor=0.999)
    c.advance(5)
    assert c.factor == 1.0


def test_curriculum_terrain_draws():
    c = Curriculum(factor=0.25)
    rng = np.random.default_rng(0)
    kinds = [c.draw_terrain(rng) for _ in range(200)]
    flats = [t for t in kinds if t.kind == "flat"]
    assert 2 <= len(flats) <= 30  # ~5% of 200
    for t in kinds:
        if t.kind != "flat":
            assert t.kind in TRAINING_TERRAIN_KINDS
            assert t.terrain_factor == 0.25


def brute_force_gae(rewards, values, dones, gamma, lam):
    T, N = rewards.shape
    adv = np.zeros((T, N))
    for i in range(N):
        for t in range(T):
            total = 0.0
            weight = 1.0
            for l in range(t, T):
                delta = (rewards[l, i]
                         + gamma * values[l + 1, i] * (1 - dones[l, i])
                         - values[l, i])
                total += weight * delta
                if dones[l, i]:
                    break
                weight *= gamma * lam
            adv[t, i] = total
    return adv


def test_gae_matches_brute_force():
    rng = np.random.default_rng(8)
    T, N = 7, 3
    rewards = rng.standard_normal((T, N))
    values = rng.standard_normal((T + 1, N))
    dones = (rng.uniform(size=(T, N)) < 0.25).astype(float)
    adv, returns = gae(rewards, values, dones, gamma=0.9, lam=0.8)
    expected = brute_force_gae(rewards, values, dones, 0.9, 0.8)
    assert np.allclose(adv, expected, atol=1e-12)
    assert np.allclose(returns, adv + values[:-1], atol=1e-12)


def test_gae_undiscounted_reduces_to_return_minus_value():
    T, N = 6, 2
    rewards = np.full((T, N), 0.5)
    values = np.random.default_rng(1).standard_normal((T + 1, N))
    adv, _ = gae(rewards, values, np.zeros((T, N)), gamma=1.0, lam=1.0)
    for t in range(T):
        expected = 0.5 * (T - t) + values[T] - values[t]
        assert np.allclose(adv[t], expected, atol=1e-12)


def test_clipped_surrogate_hand_computed():
    # ratio 1.2 with positive advantage clips at 1.05
    val = clipped_surrogate(np.log([1.2]), np.array([0.0]),
                            np.array([2.0]), clip=0.05)
    assert abs(val - 2.0 * 1.05) < 1e-10
    # ratio 0.9 with negative advantage clips at 0.95
    val = clipped_surrogate(np.log([0.9]), np.array([0.0]),
                            np.array([-1.0]), clip=0.05)
    assert abs(val - (-0.95)) < 1e-10
    # inside the band nothing clips
    val = clipped_surrogate(np.log([1.02]), np.array([0.0]),
                            np.array([3.0]), clip=0.05)
    assert abs(val - 3.0 * 1.02) < 1e-10


def surrogate_setup(seed=0, clip=0.5):
    rng = np.random.default_rng(seed)
    policy = MlpPolicy([3, 6, 2], rng=rng, dtype=np.float64)
    policy.log_std[:] = rng.standard_normal(2) * 0.2
    obs = rng.standard_normal((4, 3))
    actions = rng.standard_normal((4, 2))
    mean = policy.forward(obs)
    logp_old = gaussian_logp(mean, policy.log_std, actions) \
        + rng.uniform(-0.1, 0.1, size=4)
    adv = rng.standard_normal(4)
    return policy, obs, actions, logp_old, adv, clip


def test_actor_gradients_match_finite_differences():
    policy, obs, actions, logp_old, adv, clip = surrogate_setup()
    loss, grads, _, _ = actor_loss_grads(policy, obs, actions, logp_old,
                                         adv, clip)
    params = policy.parameters() + [policy.log_std]
    h = 1e-6
    for param, grad in zip(params, grads):
        for index in np.ndindex(param.shape):
            old = param[index]
            param[index] = old + h
            up = actor_loss_grads(policy, obs, actions, logp_old, adv,
                                  clip)[0]
            param[index] = old - h
            down = actor_loss_grads(policy, obs, actions, logp_old, adv,
                                    clip)[0]
            param[index] = old
            fd = (up - down) / (2 * h)
            assert abs(grad[index] - fd) < 1e-4 * max(abs(fd), 1e-2)


def test_zero_advantage_gives_zero_gradient():
    policy, obs, actions, logp_old, _, clip = surrogate_setup(seed=3)
    loss, grads, kl, _ = actor_loss_grads(policy, obs, actions, logp_old,
                                          np.zeros(4), clip)
    assert loss == 0.0
    for g in grads:
        assert np.all(g == 0.0)


def test_identical_policies_ratio_one():
    policy, obs, actions, _, adv, _ = surrogate_setup(seed=4)
    mean = policy.forward(obs)
    logp_old = gaussian_logp(mean, policy.log_std, actions)
    _, _, kl, clip_frac = actor_loss_grads(policy, obs, actions, logp_old,
                                           adv, clip=0.05)
    assert kl == 0.0
    assert clip_frac == 0.0


def test_unfavorably_clipped_samples_contribute_nothing():
    policy, obs, actions, _, _, _ = surrogate_setup(seed=5)
    mean = policy.forward(obs)
    logp = gaussian_logp(mean, policy.log_std, actions)
    # sample 0: ratio 2 (far above band) with positive advantage
    logp_old = logp.copy()
    logp_old[0] = logp[0] - np.log(2.0)
    adv = np.array([1.0, 0.0, 0.0, 0.0])
    _, grads, _, _ = actor_loss_grads(policy, obs, actions, logp_old, adv,
                                      clip=0.05)
    for g in grads:
        assert np.all(g == 0.0)
    # the same ratio with a negative advantage must still push back
    _, grads, _, _ = actor_loss_grads(policy, obs, actions, logp_old, -adv,
                                      clip=0.05)
    assert any(np.any(g != 0.0) for g in grads)


def synthetic_batch(policy, critic, n=16, advantages=None, obs=None):
    rng = np.random.default_rng(0)
    obs = rng.standard_normal((n, policy.obs_dim)) if obs is None else obs
    cobs = rng.standard_normal((n, critic.obs_dim))
    actions = rng.standard_normal((n, policy.out_dim))
    mean = np.atleast_2d(policy.forward(obs))
    logp = gaussian_logp(mean, policy.log_std, actions)
    adv = rng.standard_normal(n) if advantages is None else advantages
    return RolloutBatch(obs=obs, critic_obs=cobs, actions=actions,
                        logp=logp, advantages=adv,
                        returns=rng.standard_normal(n), mean_reward=0.0,
                        breakdown={}, episode_lengths=[10], faults=0)


@pytest.fixture(scope="module")
def mini_trainer(model):
    rng = np.random.default_rng(0)
    policy = MlpPolicy([99, 16, 8, 12], rng=rng)
    critic = MlpPolicy([55, 16, 8, 1], rng=rng)
    config = PpoConfig(mode="SR", epochs=2, minibatch=64, num_envs=2,
                       horizon=8)
    return PpoTrainer(model, policy, critic, config, seed=21)


def test_zero_advantage_update_leaves_params_untouched(mini_trainer):
    trainer = mini_trainer
    batch = synthetic_batch(trainer.policy, trainer.critic,
                            advantages=np.zeros(16))
    before = [p.copy() for p in trainer.policy.parameters()]
    before_std = trainer.policy.log_std.copy()
    kl, clip_frac, _, skipped = trainer.ppo_update(batch)
    assert not skipped
    assert clip_frac == 0.0
    for p, old in zip(trainer.policy.parameters(), before):
        assert np.array_equal(p, old)
    assert np.array_equal(trainer.policy.log_std, before_std)


def test_nonfinite_batch_skips_update_and_restores(mini_trainer):
    trainer = mini_trainer
    obs = np.full((16, 99), np.nan)
    batch = synthetic_batch(trainer.policy, trainer.critic, obs=obs)
    before = [p.copy() for p in trainer.policy.parameters()]
    before_critic = [p.copy() for p in trainer.critic.parameters()]
    *_, skipped = trainer.ppo_update(batch)
    assert skipped
    for p, old in zip(trainer.policy.parameters(), before):
        assert np.array_equal(p, old)
    for p, old in zip(trainer.critic.parameters(), before_critic):
        assert np.array_equal(p, old)


def test_trainer_iteration_produces_stats(mini_trainer):
    trainer = mini_trainer
    stats = trainer.iterate()
    assert stats.iteration == 0
    assert trainer.curriculum.factor == 0.01
    assert np.isfinite(stats.mean_reward)
    assert np.isfinite(stats.kl)
    assert 0.0 <= stats.clip_fraction <= 1.0
    assert stats.std_mean == pytest.approx(1.0, rel=0.05)
    row = stats.as_row()
    assert len(row) == 12
    stats2 = trainer.iterate()
    assert stats2.iteration == 1


def test_trainer_deterministic(model):
    def run():
        rng = np.random.default_rng(0)
        policy = MlpPolicy([99, 16, 8, 12], rng=rng)
        critic = MlpPolicy([55, 16, 8, 1], rng=rng)
        config = PpoConfig(mode="SR", epochs=1, minibatch=64, num_envs=2,
                           horizon=5)
        trainer = PpoTrainer(model, policy, critic, config, seed=9)
        s = trainer.iterate()
        return s.mean_reward, s.kl, policy.log_std.copy()

    a, b = run(), run()
    assert a[0] == b[0]
    assert a[1] == b[1]
    assert np.array_equal(a[2], b[2])
