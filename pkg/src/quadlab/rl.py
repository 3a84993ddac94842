"""Constrained PPO finetuning with an asymmetric actor-critic.

The actor starts from the cloned policy (or from scratch for the
vanilla baselines) and explores with a deliberately small initial
standard deviation and clip range so the pre-trained gait survives
finetuning; the critic sees privileged state (true linear velocity and
body height) the deployed actor never gets.

Terrain difficulty follows an exponential curriculum, with flat ground
mixed in at a fixed probability; ground friction, actuation latency,
PD gains, motor friction, and observation noise are randomized per
episode by the environment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import LocomotionEnv, RandomizationSpec
from .model import RobotModel
from .policy import (ACTION_DIM, Adam, MlpPolicy, gaussian_logp,
                     gaussian_logp_grads, gaussian_sample)
from .terrain import Terrain, generate

TRAIN_COMMAND_RANGES = ((-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0))
TRAINING_TERRAIN_KINDS = ("rough", "discrete_rough", "step", "cliff")

FINETUNE_COLUMNS = ["iter", "mean_reward", "reward_tracking",
                    "reward_movement", "reward_torque", "reward_contact",
                    "terrain_factor", "episode_length", "kl",
                    "clip_fraction", "std_mean", "update_skipped"]


@dataclass
class RewardWeights:
    tracking: float = 1.0
    tracking_scale: float = 0.25
    movement: float = 0.2
    torque: float = 2e-4
    contact: float = 0.3


@dataclass
class PpoConfig:
    mode: str = "SR"
    init_std: float = 1.0
    clip: float = 0.05
    actor_lr: float = 1e-5
    critic_lr: float = 1e-3
    gamma: float = 0.99
    lam: float = 0.95
    epochs: int = 4
    minibatch: int = 4096
    iterations: int = 500
    num_envs: int = 32
    horizon: int = 100
    weights: RewardWeights = field(default_factory=RewardWeights)

    def __post_init__(self):
        if self.mode not in ("SR", "CR"):
            raise ValueError(f"unknown PPO mode {self.mode!r}")
        if self.clip <= 0:
            raise ValueError("clip must be strictly positive")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ValueError("learning rates must be strictly positive")

    @classmethod
    def for_mode(cls, mode: str, vanilla: bool = False, **overrides):
        """The (init_std, clip) pair is fixed by the mode unless
        explicitly overridden; vanilla baselines widen both."""
        if vanilla:
            base = {"init_std": 3.0, "clip": 0.2}
        elif mode == "CR":
            base = {"init_std": 2.0, "clip": 0.1}
        else:
            base = {"init_std": 1.0, "clip": 0.05}
        base.update(overrides)
        return cls(mode=mode, **base)


def compute_reward(lin_vel: np.ndarray, ang_vel: np.ndarray,
                   torque_sq: float, contact_match: float,
                   command: np.ndarray, mode: str,
                   weights: RewardWeights):
    """Per-tick reward and its term breakdown.

    `lin_vel` is heading-frame, `ang_vel` body-frame; the command is
    (v_x, v_y, omega_z).
    """
    err = ((lin_vel[0] - command[0]) ** 2 + (lin_vel[1] - command[1]) ** 2
           + (ang_vel[2] - command[2]) ** 2)
    tracking = weights.tracking * np.exp(-err / weights.tracking_scale)
    movement = weights.movement * (lin_vel[2] ** 2 + ang_vel[0] ** 2
                                   + ang_vel[1] ** 2)
    torque = weights.torque * torque_sq
    contact = weights.contact * contact_match if mode == "CR" else 0.0
    reward = tracking - movement - torque + contact
    return reward, {"tracking": tracking, "movement": movement,
                    "torque": torque, "contact": contact}


def clipped_surrogate(logp_new: np.ndarray, logp_old: np.ndarray,
                      advantages: np.ndarray, clip: float) -> float:
    """Mean clipped PPO objective (to be maximized)."""
    ratio = np.exp(np.asarray(logp_new) - np.asarray(logp_old))
    adv = np.asarray(advantages)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    return float(np.mean(np.minimum(surr1, surr2)))


def gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
        gamma: float, lam: float):
    """Generalized advantage estimation over (T, N) arrays.

    `values` has shape (T+1, N); the last row bootstraps the tail.
    Returns (advantages, returns), both (T, N).
    """
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    carry = np.zeros(rewards.shape[1])
    for t in range(T - 1, -1, -1):
        alive = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * alive - values[t]
        carry = delta + gamma * lam * alive * carry
        adv[t] = carry
    return adv, adv + values[:-1]


@dataclass
class Curriculum:
    factor: float = 0.01
    growth: float = 0.96
    interval: int = 5
    cap: float = 1.0
    flat_probability: float = 0.05

    def advance(self, iteration: int) -> None:
        """Divide the factor by the growth rate every `interval`
        iterations (call once per iteration, before rollouts)."""
        if iteration > 0 and iteration % self.interval == 0:
            self.factor = min(self.cap, self.factor / self.growth)

    def draw_terrain(self, rng: np.random.Generator) -> Terrain:
        seed = int(rng.integers(2 ** 31))
        if rng.uniform() < self.flat_probability:
            return generate("flat", 0.0, seed=seed, length=12.0, width=6.0,
                            x_start=-6.0)
        kind = TRAINING_TERRAIN_KINDS[int(rng.integers(
            len(TRAINING_TERRAIN_KINDS)))]
        return generate(kind, self.factor, seed=seed, length=12.0,
                        width=6.0, x_start=-6.0)


def actor_loss_grads(policy: MlpPolicy, obs: np.ndarray, actions: np.ndarray,
                     logp_old: np.ndarray, adv: np.ndarray, clip: float):
    """Loss, gradients, and diagnostics for one clipped-surrogate step.

    The loss is -clipped_surrogate; gradients align with
    policy.parameters() + [policy.log_std].  Samples whose ratio sits
    outside the clip band on the unfavorable side contribute nothing.
    Returns None if the ratios are non-finite.
    """
    log_std = policy.log_std.astype(np.float64)
    mean, cache = policy.forward_cached(obs)
    mean = np.atleast_2d(mean).astype(np.float64)
    logp = gaussian_logp(mean, log_std, actions)
    ratio = np.exp(logp - logp_old)
    if not np.all(np.isfinite(ratio)):
        return None
    lo, hi = 1.0 - clip, 1.0 + clip
    surr1 = ratio * adv
    surr2 = np.clip(ratio, lo, hi) * adv
    loss = -float(np.mean(np.minimum(surr1, surr2)))
    # gradient flows through the ratio only where the unclipped branch
    # is selected or the ratio is still inside the band
    active = (surr1 <= surr2) | ((ratio >= lo) & (ratio <= hi))
    dlogp = np.where(active, ratio * adv, 0.0) / len(ratio)
    d_mean, d_log_std = gaussian_logp_grads(mean, log_std, actions)
    grads = policy.backward(cache, -dlogp[:, None] * d_mean)
    grads.append(-(dlogp[:, None] * d_log_std).sum(axis=0))
    kl = float(np.mean(logp_old - logp))
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > clip))
    return loss, grads, kl, clip_frac


@dataclass
class RolloutBatch:
    obs: np.ndarray  # (T*N, actor obs)
    critic_obs: np.ndarray  # (T*N, critic obs)
    actions: np.ndarray  # (T*N, 12)
    logp: np.ndarray  # (T*N,)
    advantages: np.ndarray  # (T*N,)
    returns: np.ndarray  # (T*N,)
    mean_reward: float
    breakdown: dict
    episode_lengths: list
    faults: int


@dataclass
class PpoIterationStats:
    iteration: int
    mean_reward: float
    breakdown: dict
    terrain_factor: float
    episode_length: float
    kl: float
    clip_fraction: float
    value_loss: float
    std_mean: float
    update_skipped: bool

    def as_row(self) -> list:
        return [self.iteration, self.mean_reward,
                self.breakdown["tracking"], self.breakdown["movement"],
                self.breakdown["torque"], self.breakdown["contact"],
                self.terrain_factor, self.episode_length, self.kl,
                self.clip_fraction, self.std_mean,
                int(self.update_skipped)]


class PpoTrainer:
    """Synchronous collect-then-update loop over persistent envs."""

    def __init__(self, model: RobotModel, policy: MlpPolicy,
                 critic: MlpPolicy, config: PpoConfig, seed: int,
                 randomization: RandomizationSpec | None | str = "default",
                 curriculum: Curriculum | None = None,
                 schedule=None):
        self.model = model
        self.policy = policy
        self.critic = critic
        self.config = config
        self.curriculum = curriculum or Curriculum()
        # None disables randomization entirely; the string sentinel keeps
        # the standard spec as the default without conflating the two
        self.randomization = (RandomizationSpec()
                              if randomization == "default"
                              else randomization)
        policy.log_std[:] = np.log(config.init_std)
        seq = np.random.SeedSequence(seed)
        env_seeds, terrain_seed, action_seed, update_seed = seq.spawn(4)
        self.rng = np.random.default_rng(action_seed)
        self.update_rng = np.random.default_rng(update_seed)
        self.terrain_rng = np.random.default_rng(terrain_seed)
        self.envs = []
        for child in env_seeds.spawn(config.num_envs):
            env = LocomotionEnv(model, self._draw_terrain(),
                                rng=np.random.default_rng(child),
                                command_ranges=TRAIN_COMMAND_RANGES,
                                randomization=self.randomization,
                                schedule=schedule,
                                init_noise=True)
            env.reset()
            self.envs.append(env)
        self.actor_opt = Adam(policy.parameters() + [policy.log_std],
                              config.actor_lr)
        self.critic_opt = Adam(critic.parameters(), config.critic_lr)
        self.iteration = 0
        self._episode_lengths: list = []

    def _draw_terrain(self) -> Terrain:
        return self.curriculum.draw_terrain(self.terrain_rng)

    def collect_rollouts(self) -> RolloutBatch:
        cfg = self.config
        N, T = cfg.num_envs, cfg.horizon
        obs_buf = np.zeros((T, N, self.policy.obs_dim), dtype=np.float32)
        critic_buf = np.zeros((T, N, self.critic.obs_dim), dtype=np.float32)
        act_buf = np.zeros((T, N, ACTION_DIM))
        logp_buf = np.zeros((T, N))
        reward_buf = np.zeros((T, N))
        done_buf = np.zeros((T, N))
        values = np.zeros((T + 1, N))
        sums = {"tracking": 0.0, "movement": 0.0, "torque": 0.0,
                "contact": 0.0}
        faults = 0
        finished: list = []
        log_std = self.policy.log_std.astype(np.float64)
        for t in range(T):
            obs = np.stack([env.obs for env in self.envs])
            cobs = np.stack([env.critic_observation()
                             for env in self.envs])
            mean = self.policy.forward(obs).astype(np.float64)
            actions = gaussian_sample(mean, log_std, self.rng)
            logp = gaussian_logp(mean, log_std, actions)
            values[t] = self.critic.forward(cobs)[:, 0]
            obs_buf[t] = obs
            critic_buf[t] = cobs
            act_buf[t] = actions
            logp_buf[t] = logp
            for i, env in enumerate(self.envs):
                result = env.step(actions[i])
                if result.fault:
                    faults += 1
                    reward = 0.0
                else:
                    reward, parts = compute_reward(
                        result.lin_vel, result.ang_vel, result.torque_sq,
                        result.contact_match, env.command, cfg.mode,
                        cfg.weights)
                    for key in sums:
                        sums[key] += parts[key]
                reward_buf[t, i] = reward
                done_buf[t, i] = float(result.done)
                if result.done:
                    finished.append(env.episode_ticks)
                    env.reset(terrain=self._draw_terrain())
        cobs = np.stack([env.critic_observation() for env in self.envs])
        values[T] = self.critic.forward(cobs)[:, 0]
        adv, returns = gae(reward_buf, values, done_buf, cfg.gamma, cfg.lam)
        count = T * N
        return RolloutBatch(
            obs=obs_buf.reshape(count, -1),
            critic_obs=critic_buf.reshape(count, -1),
            actions=act_buf.reshape(count, ACTION_DIM),
            logp=logp_buf.reshape(count),
            advantages=adv.reshape(count),
            returns=returns.reshape(count),
            mean_reward=float(reward_buf.mean()),
            breakdown={k: v / count for k, v in sums.items()},
            episode_lengths=finished,
            faults=faults,
        )

    def ppo_update(self, batch: RolloutBatch):
        """Clipped-surrogate actor step and value-MSE critic step.

        Returns (kl, clip_fraction, value_loss, skipped).  A non-finite
        loss restores the pre-update parameters and skips the update.
        """
        cfg = self.config
        adv = batch.advantages.copy()
        std = adv.std()
        if std > 1e-8:
            adv = (adv - adv.mean()) / std
        snapshot = ([p.copy() for p in self.policy.parameters()]
                    + [self.policy.log_std.copy()],
                    [p.copy() for p in self.critic.parameters()])
        n = len(batch.obs)
        kl_est = 0.0
        clip_frac = 0.0
        value_loss = 0.0
        batches = 0
        for _ in range(cfg.epochs):
            order = self.update_rng.permutation(n)
            for start in range(0, n, cfg.minibatch):
                idx = order[start:start + cfg.minibatch]
                ok = self._actor_minibatch(batch, idx, adv[idx])
                if ok is None:
                    self._restore(snapshot)
                    return 0.0, 0.0, 0.0, True
                kl, frac = ok
                value_loss = self._critic_minibatch(batch, idx)
                if not np.isfinite(value_loss):
                    self._restore(snapshot)
                    return 0.0, 0.0, 0.0, True
                kl_est, clip_frac = kl, frac
                batches += 1
        return kl_est, clip_frac, value_loss, False

    def _actor_minibatch(self, batch: RolloutBatch, idx: np.ndarray,
                         adv: np.ndarray):
        out = actor_loss_grads(self.policy, batch.obs[idx],
                               batch.actions[idx], batch.logp[idx], adv,
                               self.config.clip)
        if out is None:
            return None
        _, grads, kl, clip_frac = out
        self.actor_opt.step(grads)
        return kl, clip_frac

    def _critic_minibatch(self, batch: RolloutBatch,
                          idx: np.ndarray) -> float:
        cobs = batch.critic_obs[idx]
        target = batch.returns[idx]
        pred, cache = self.critic.forward_cached(cobs)
        diff = pred[:, 0].astype(np.float64) - target
        grads = self.critic.backward(
            cache, (2.0 * diff / len(idx))[:, None])
        self.critic_opt.step(grads)
        return float(np.mean(diff * diff))

    def _restore(self, snapshot):
        actor_params, critic_params = snapshot
        live = self.policy.parameters() + [self.policy.log_std]
        for p, saved in zip(live, actor_params):
            p[...] = saved
        for p, saved in zip(self.critic.parameters(), critic_params):
            p[...] = saved

    def iterate(self) -> PpoIterationStats:
        self.curriculum.advance(self.iteration)
        batch = self.collect_rollouts()
        kl, clip_frac, value_loss, skipped = self.ppo_update(batch)
        lengths = batch.episode_lengths or [float(self.config.horizon)]
        stats = PpoIterationStats(
            iteration=self.iteration,
            mean_reward=batch.mean_reward,
            breakdown=batch.breakdown,
            terrain_factor=self.curriculum.factor,
            episode_length=float(np.mean(lengths)),
            kl=kl,
            clip_fraction=clip_frac,
            value_loss=value_loss,
            std_mean=float(np.exp(self.policy.log_std).mean()),
            update_skipped=skipped,
        )
        self.iteration += 1
        return stats
