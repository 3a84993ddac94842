"""Behavior cloning with dataset aggregation against the MPC expert.

Each iteration rolls out the current policy on flat terrain (the very
first iteration rolls out the expert itself, since an untrained policy
falls immediately), relabels every visited state with the expert's PD
targets converted to the policy's action space, appends the pairs to a
growing dataset, and fits the policy to the whole aggregate with
minibatch Adam.  Expert labels are computed online during the rollout
so the solver's warm starts are the ones it would see in deployment.

Progress is tracked on a fixed holdout set of expert-visited states
collected before training starts and never trained on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import DEFAULT_COMMAND_RANGES, LocomotionEnv
from .model import RobotModel
from .mpc.expert import MpcExpert
from .policy import ACTION_DIM, ACTION_SCALE, ACTOR_OBS_DIM, Adam, MlpPolicy
from .terrain import generate

DATASET_CAPACITY = 400_000

IMITATION_COLUMNS = ["iter", "dataset_size", "train_mse", "holdout_mse",
                     "mean_episode_length", "expert_degraded_count"]


def encode_expert_action(targets: np.ndarray, q_init: np.ndarray,
                         joint_limits: np.ndarray,
                         scale: float = ACTION_SCALE) -> np.ndarray:
    """Expert PD targets -> policy action, (q - q_init) / scale.

    Targets are clamped to the joint limits first so the encoding is
    the exact inverse of the action decoding.
    """
    targets = np.clip(targets, joint_limits[:, 0], joint_limits[:, 1])
    return (targets - np.asarray(q_init, dtype=np.float64)) / scale


class AggregatedDataset:
    """Append-only (observation, expert action) store with a hard cap."""

    def __init__(self, obs_dim: int = ACTOR_OBS_DIM,
                 capacity: int = DATASET_CAPACITY):
        self.capacity = capacity
        self.observations = np.empty((capacity, obs_dim), dtype=np.float32)
        self.actions = np.empty((capacity, ACTION_DIM), dtype=np.float32)
        self.n = 0

    def append(self, obs: np.ndarray, actions: np.ndarray) -> int:
        """Add row-aligned pairs; silently truncates at capacity.

        Returns the number of rows actually added.
        """
        obs = np.asarray(obs, dtype=np.float32)
        actions = np.asarray(actions, dtype=np.float32)
        if obs.ndim != 2 or actions.ndim != 2 or len(obs) != len(actions):
            raise ValueError("observations and actions must be row-aligned")
        if not (np.all(np.isfinite(obs)) and np.all(np.isfinite(actions))):
            raise ValueError("refusing to aggregate non-finite rows")
        room = self.capacity - self.n
        take = min(room, len(obs))
        self.observations[self.n:self.n + take] = obs[:take]
        self.actions[self.n:self.n + take] = actions[:take]
        self.n += take
        return take

    def view(self):
        return self.observations[:self.n], self.actions[:self.n]


@dataclass
class DaggerStats:
    iteration: int
    dataset_size: int
    train_mse_before: float
    train_mse_after: float
    holdout_mse: float
    mean_episode_length: float
    expert_degraded: int

    def as_row(self) -> list:
        return [self.iteration, self.dataset_size, self.train_mse_after,
                self.holdout_mse, self.mean_episode_length,
                self.expert_degraded]


def batch_mse(policy: MlpPolicy, obs: np.ndarray,
              actions: np.ndarray, chunk: int = 8192) -> float:
    """Mean squared action error over a dataset, evaluated in chunks."""
    total = 0.0
    for start in range(0, len(obs), chunk):
        pred = policy.forward(obs[start:start + chunk])
        diff = pred - actions[start:start + chunk]
        total += float(np.sum(diff * diff))
    return total / max(1, len(obs) * ACTION_DIM)


def train_epochs(policy: MlpPolicy, optimizer: Adam, obs: np.ndarray,
                 actions: np.ndarray, epochs: int, batch_size: int,
                 rng: np.random.Generator) -> None:
    n = len(obs)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            pred, cache = policy.forward_cached(obs[idx])
            grad = 2.0 * (pred - actions[idx]) / pred.size
            grads = policy.backward(cache, grad)
            optimizer.step(grads)


class DaggerTrainer:
    """Owns the policy, dataset, optimizer, envs, and expert instances."""

    def __init__(self, model: RobotModel, policy: MlpPolicy, seed: int,
                 num_envs: int = 10, ticks_per_env: int = 400,
                 epochs: int = 10, batch_size: int = 512, lr: float = 1e-3,
                 capacity: int = DATASET_CAPACITY,
                 command_ranges=DEFAULT_COMMAND_RANGES,
                 holdout_envs: int = 6, holdout_ticks: int = 250,
                 schedule=None, expert_factory=None,
                 terrain=None):
        self.model = model
        self.policy = policy
        self.num_envs = num_envs
        self.ticks_per_env = ticks_per_env
        self.epochs = epochs
        self.batch_size = batch_size
        self.schedule = schedule
        self.expert_factory = expert_factory or (
            lambda sched, terr: MpcExpert(model, schedule=sched,
                                          terrain=terr))
        self.terrain = (generate("flat", 0.0, seed=seed)
                        if terrain is None else terrain)
        seq = np.random.SeedSequence(seed)
        env_seeds, holdout_seeds, train_seed = seq.spawn(3)
        self.rng = np.random.default_rng(train_seed)
        self.envs = [
            LocomotionEnv(model, self.terrain,
                          rng=np.random.default_rng(child),
                          command_ranges=command_ranges,
                          schedule=schedule)
            for child in env_seeds.spawn(num_envs)
        ]
        self.dataset = AggregatedDataset(capacity=capacity)
        self.optimizer = Adam(policy.parameters(), lr)
        self.iteration = 0
        self.holdout_obs, self.holdout_actions = self._collect_holdout(
            holdout_seeds, holdout_envs, holdout_ticks, command_ranges)
        # Convergence baseline: the holdout MSE of the policy entering
        # iteration 1, before any gradient step.  The expert's internal
        # state (velocity trim, swing anchors, warm starts) makes its
        # labels history-dependent, which puts a noise floor on the
        # reachable holdout MSE; ratios are therefore measured against
        # the untrained policy, not against an already-fitted one.
        self.initial_holdout_mse = batch_mse(policy, self.holdout_obs,
                                             self.holdout_actions)

    def _collect_holdout(self, seeds, n_envs, ticks, command_ranges):
        obs_rows, act_rows = [], []
        for child in seeds.spawn(n_envs):
            env = LocomotionEnv(self.model, self.terrain,
                                rng=np.random.default_rng(child),
                                command_ranges=command_ranges,
                                schedule=self.schedule)
            self._rollout(env, None, ticks, obs_rows, act_rows, [], [0])
        return (np.array(obs_rows, dtype=np.float32),
                np.array(act_rows, dtype=np.float32))

    def _rollout(self, env: LocomotionEnv, policy: MlpPolicy | None,
                 ticks: int, obs_rows: list, act_rows: list,
                 episode_lengths: list, degraded: list) -> None:
        """Collect `ticks` labeled transitions; policy=None rolls out
        the expert itself."""
        obs = env.reset()
        expert = self.expert_factory(env.schedule, env.terrain)
        length = 0
        for _ in range(ticks):
            targets, info = expert.act(env.state, env.state.time,
                                       env.command)
            if info["degraded"]:
                degraded[0] += 1
            label = encode_expert_action(targets, env.q_init,
                                         self.model.joint_limits)
            obs_rows.append(obs)
            act_rows.append(label)
            action = label if policy is None else policy.forward(obs)
            result = env.step(np.asarray(action, dtype=np.float64))
            obs = result.obs
            length += 1
            if result.done:
                episode_lengths.append(length)
                length = 0
                obs = env.reset()
                expert = self.expert_factory(env.schedule, env.terrain)
        if length:
            episode_lengths.append(length)

    def iterate(self) -> DaggerStats:
        rollout_policy = None if self.iteration == 0 else self.policy
        obs_rows: list = []
        act_rows: list = []
        episode_lengths: list = []
        degraded = [0]
        for env in self.envs:
            self._rollout(env, rollout_policy, self.ticks_per_env,
                          obs_rows, act_rows, episode_lengths, degraded)
        self.dataset.append(np.array(obs_rows, dtype=np.float32),
                            np.array(act_rows, dtype=np.float32))
        obs, actions = self.dataset.view()
        before = batch_mse(self.policy, obs, actions)
        train_epochs(self.policy, self.optimizer, obs, actions, self.epochs,
                     self.batch_size, self.rng)
        after = batch_mse(self.policy, obs, actions)
        holdout = batch_mse(self.policy, self.holdout_obs,
                            self.holdout_actions)
        stats = DaggerStats(
            iteration=self.iteration,
            dataset_size=self.dataset.n,
            train_mse_before=before,
            train_mse_after=after,
            holdout_mse=holdout,
            mean_episode_length=float(np.mean(episode_lengths)),
            expert_degraded=degraded[0],
        )
        self.iteration += 1
        return stats
