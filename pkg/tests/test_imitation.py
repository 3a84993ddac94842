"""Dataset bookkeeping and cloning-loop behavior at miniature scale."""

import numpy as np
import pytest

from quadlab.imitation import (AggregatedDataset, DaggerTrainer,
                               batch_mse, encode_expert_action)
from quadlab.policy import (ACTION_SCALE, ACTOR_WIDTHS, MlpPolicy,
                            decode_action)


def test_dataset_grows_by_append_size():
    ds = AggregatedDataset(obs_dim=5, capacity=100)
    for k in range(1, 4):
        ds.append(np.zeros((7, 5)), np.zeros((7, 12)))
        assert ds.n == 7 * k


def test_dataset_truncates_at_capacity():
    ds = AggregatedDataset(obs_dim=3, capacity=10)
    first = np.arange(8 * 3, dtype=np.float32).reshape(8, 3)
    assert ds.append(first, np.ones((8, 12))) == 8
    added = ds.append(np.full((8, 3), 9.0), np.zeros((8, 12)))
    assert added == 2
    assert ds.n == 10
    obs, act = ds.view()
    # earlier rows are never mutated
    assert np.array_equal(obs[:8], first)
    assert np.all(obs[8:] == 9.0)
    assert ds.append(np.ones((4, 3)), np.ones((4, 12))) == 0
    assert ds.n == 10


def test_dataset_rejects_nonfinite_and_misaligned():
    ds = AggregatedDataset(obs_dim=3, capacity=10)
    bad = np.ones((2, 3))
    bad[1, 0] = np.nan
    with pytest.raises(ValueError, match="finite"):
        ds.append(bad, np.ones((2, 12)))
    with pytest.raises(ValueError, match="aligned"):
        ds.append(np.ones((2, 3)), np.ones((3, 12)))


def test_encode_is_inverse_of_decode(model):
    rng = np.random.default_rng(0)
    q_init = model.stand_pose
    for _ in range(50):
        action = rng.uniform(-1.0, 1.0, size=12)
        targets = decode_action(action, q_init, model.joint_limits)
        back = encode_expert_action(targets, q_init, model.joint_limits)
        assert np.allclose(back, action, atol=1e-12)


def test_encode_clamps_out_of_range_targets(model):
    q_init = model.stand_pose
    wild = model.joint_limits[:, 1] + 1.0
    enc = encode_expert_action(wild, q_init, model.joint_limits)
    dec = decode_action(enc, q_init, model.joint_limits)
    assert np.allclose(dec, model.joint_limits[:, 1])


def test_batch_mse_matches_direct():
    rng = np.random.default_rng(1)
    policy = MlpPolicy([6, 8, 12], rng=rng, dtype=np.float64)
    obs = rng.standard_normal((40, 6))
    act = rng.standard_normal((40, 12))
    direct = float(np.mean((policy.forward(obs) - act) ** 2))
    assert batch_mse(policy, obs, act, chunk=16) == pytest.approx(direct)


@pytest.fixture(scope="module")
def mini_trainer_run(model):
    policy = MlpPolicy(ACTOR_WIDTHS, rng=np.random.default_rng(42))
    trainer = DaggerTrainer(model, policy, seed=3, num_envs=2,
                            ticks_per_env=40, epochs=2, batch_size=64,
                            capacity=1000,
                            command_ranges=((0.6, 0.6), (0.0, 0.0),
                                            (0.0, 0.0)),
                            holdout_envs=1, holdout_ticks=40)
    stats = [trainer.iterate(), trainer.iterate()]
    return trainer, stats


def test_dagger_dataset_size_bookkeeping(mini_trainer_run):
    trainer, stats = mini_trainer_run
    assert stats[0].dataset_size == 80
    assert stats[1].dataset_size == 160
    assert trainer.holdout_obs.shape == (40, 99)


def test_dagger_training_reduces_mse(mini_trainer_run):
    _, stats = mini_trainer_run
    # the bootstrap fit starts from a random network, so the drop is large
    assert stats[0].train_mse_after < stats[0].train_mse_before
    assert np.isfinite(stats[0].holdout_mse)


def test_initial_holdout_mse_is_untrained_baseline(mini_trainer_run):
    trainer, stats = mini_trainer_run
    # recorded before any gradient step, so it reflects the near-zero
    # output of the freshly initialized network against walking labels
    assert trainer.initial_holdout_mse > stats[-1].holdout_mse
    assert trainer.initial_holdout_mse == pytest.approx(
        float(np.mean(trainer.holdout_actions ** 2)), rel=0.05)


def test_dagger_iteration_zero_rolls_out_expert(mini_trainer_run):
    trainer, stats = mini_trainer_run
    # with a 0.6 m/s command the expert walks forward during iteration 0;
    # iteration 1 rolls out the still-clumsy policy instead
    assert stats[0].mean_episode_length == 40.0
    assert trainer.envs[0].sim is not None


def test_dagger_stats_rows(mini_trainer_run):
    _, stats = mini_trainer_run
    row = stats[0].as_row()
    assert row[0] == 0 and row[1] == 80
    assert all(np.isfinite(x) for x in row)


def test_dagger_deterministic(model):
    def run():
        policy = MlpPolicy(ACTOR_WIDTHS, rng=np.random.default_rng(1))
        trainer = DaggerTrainer(model, policy, seed=5, num_envs=1,
                                ticks_per_env=15, epochs=1, batch_size=32,
                                capacity=100, holdout_envs=1,
                                holdout_ticks=10)
        s = trainer.iterate()
        return s, trainer.dataset.view()

    (s1, (o1, a1)), (s2, (o2, a2)) = run(), run()
    assert s1 == s2
    assert np.array_equal(o1, o2)
    assert np.array_equal(a1, a2)


def test_expert_motion_recorded_in_labels(mini_trainer_run):
    trainer, _ = mini_trainer_run
    obs, actions = trainer.dataset.view()
    # walking labels are not the neutral action
    assert float(np.mean(np.abs(actions[:80]))) > 0.05
    # labels decode to within the joint limits by construction
    lo = trainer.model.joint_limits[:, 0]
    hi = trainer.model.joint_limits[:, 1]
    decoded = trainer.model.stand_pose + ACTION_SCALE * actions[:80]
    assert np.all(decoded >= lo - 1e-9) and np.all(decoded <= hi + 1e-9)
