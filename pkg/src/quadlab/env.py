"""Control-rate training environment around the physics simulator.

One step is one 100 Hz control tick: the action decodes to PD targets,
the targets feed a 1 kHz actuation-latency delay line, ten substeps
run, and the next actor observation is assembled.  Per-episode domain
randomization (ground friction, latency, PD gain multipliers, motor
friction, observation noise) is drawn once at reset and held fixed for
the whole episode, so every draw is reproducible from the env's rng.

Episodes end when the base tilts past 70 degrees, the base drops below
the local terrain plus the model's clearance radius (a proxy for a
non-foot body part touching the ground), or the simulator faults.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .gait import GaitSchedule
from .model import NUM_JOINTS, RobotModel
from .policy import (ACTION_DIM, OBS_DQ, OBS_Q, JointHistory,
                     ObservationNoise, assemble_observation, decode_action)
from .rotation import quat_from_euler_zyx, quat_to_matrix
from .sim import (SIM_DT, SUBSTEPS_PER_TICK, RobotState, SimFault, Simulator,
                  default_state)
from .terrain import Terrain

TILT_LIMIT = np.radians(70.0)

# evaluation command ranges; RL training widens these to U(-1, 1)
DEFAULT_COMMAND_RANGES = ((-0.3, 1.0), (-0.5, 0.5), (-0.6, 0.6))


def tilt_angle(orientation: np.ndarray) -> float:
    """Angle between the body z-axis and world up, rad."""
    up = quat_to_matrix(orientation)[2, 2]
    return float(np.arccos(np.clip(up, -1.0, 1.0)))


def should_terminate(state: RobotState, model: RobotModel,
                     terrain: Terrain) -> bool:
    if tilt_angle(state.base_orientation) > TILT_LIMIT:
        return True
    ground = terrain.sample_height(state.base_position[0],
                                   state.base_position[1])
    return bool(state.base_position[2] < ground + model.base_clearance)


def sample_command(rng: np.random.Generator,
                   ranges=DEFAULT_COMMAND_RANGES) -> np.ndarray:
    return np.array([rng.uniform(lo, hi) for lo, hi in ranges])


def heading_frame_velocity(state: RobotState) -> np.ndarray:
    """World linear velocity expressed in the yaw-aligned frame."""
    r = quat_to_matrix(state.base_orientation)
    yaw = np.arctan2(r[1, 0], r[0, 0])
    c, s = np.cos(yaw), np.sin(yaw)
    v = state.base_linear_velocity
    return np.array([c * v[0] + s * v[1], -s * v[0] + c * v[1], v[2]])


@dataclass
class EpisodeSetup:
    """One episode's randomization draw, loggable via `as_dict`."""

    friction: float | None = None
    latency_substeps: int = 0
    kp_scale: np.ndarray = field(
        default_factory=lambda: np.ones(NUM_JOINTS))
    kd_scale: np.ndarray = field(
        default_factory=lambda: np.ones(NUM_JOINTS))
    motor_coulomb: np.ndarray = field(
        default_factory=lambda: np.zeros(NUM_JOINTS))
    motor_viscous: np.ndarray = field(
        default_factory=lambda: np.zeros(NUM_JOINTS))
    noise: ObservationNoise | None = None

    def as_dict(self) -> dict:
        return {
            "friction": self.friction,
            "latency_substeps": self.latency_substeps,
            "kp_scale": self.kp_scale.tolist(),
            "kd_scale": self.kd_scale.tolist(),
            "motor_coulomb": self.motor_coulomb.tolist(),
            "motor_viscous": self.motor_viscous.tolist(),
        }


@dataclass
class RandomizationSpec:
    """Per-episode draw ranges. All uniform; latency is in milliseconds."""

    friction: tuple = (0.3, 1.0)
    latency_ms: tuple = (0.0, 10.0)
    pd_scale: tuple = (0.9, 1.1)
    motor_coulomb: tuple = (0.0, 0.2)
    motor_viscous: tuple = (0.0, 0.05)
    noise: ObservationNoise | None = field(default_factory=ObservationNoise)

    def draw(self, rng: np.random.Generator) -> EpisodeSetup:
        latency_ms = float(rng.uniform(*self.latency_ms))
        return EpisodeSetup(
            friction=float(rng.uniform(*self.friction)),
            latency_substeps=int(np.ceil(latency_ms * 1e-3 / SIM_DT)),
            kp_scale=rng.uniform(*self.pd_scale, size=NUM_JOINTS),
            kd_scale=rng.uniform(*self.pd_scale, size=NUM_JOINTS),
            motor_coulomb=rng.uniform(*self.motor_coulomb, size=NUM_JOINTS),
            motor_viscous=rng.uniform(*self.motor_viscous, size=NUM_JOINTS),
            noise=self.noise,
        )


@dataclass
class StepResult:
    obs: np.ndarray
    done: bool
    fault: bool
    lin_vel: np.ndarray  # heading frame, m/s
    ang_vel: np.ndarray  # body frame, rad/s
    torque_sq: float  # tick mean of |tau|^2
    contact_match: float  # fraction of feet matching the schedule
    time: float
    tau_mean: np.ndarray | None = None  # tick mean, per joint
    contact: object = None  # last substep's ContactState


class LocomotionEnv:
    """Stateful single-robot environment stepping at the control rate."""

    def __init__(self, model: RobotModel, terrain: Terrain,
                 rng: np.random.Generator | None = None,
                 command_ranges=DEFAULT_COMMAND_RANGES,
                 randomization: RandomizationSpec | None = None,
                 schedule: GaitSchedule | None = None,
                 init_noise: bool = False,
                 max_episode_ticks: int = 1000):
        self.model = model
        self.base_terrain = terrain
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.command_ranges = command_ranges
        self.randomization = randomization
        self.schedule = schedule or GaitSchedule()
        self.init_noise = init_noise
        self.max_episode_ticks = max_episode_ticks
        self.q_init = model.stand_pose.copy()
        self.sim: Simulator | None = None
        self.terrain = terrain
        self.command = np.zeros(3)
        self.setup = EpisodeSetup()
        self.history = JointHistory()
        self.prev_action = np.zeros(ACTION_DIM)
        self._line: deque = deque([self.q_init.copy()], maxlen=1)
        self._obs = np.zeros(1)
        self.episode_ticks = 0

    def _initial_state(self, terrain: Terrain) -> RobotState:
        state = default_state(self.model, terrain)
        if self.init_noise:
            xy = self.rng.uniform(-0.5, 0.5, size=2)
            yaw = self.rng.uniform(-np.pi, np.pi)
            state.base_position[0] += xy[0]
            state.base_position[1] += xy[1]
            state.base_position[2] = (
                terrain.sample_height(*state.base_position[:2])
                + self.model.stand_height)
            state.base_orientation = quat_from_euler_zyx(0.0, 0.0, yaw)
            state.joint_angles += self.rng.uniform(-0.05, 0.05,
                                                   size=NUM_JOINTS)
        return state

    def reset(self, command: np.ndarray | None = None,
              terrain: Terrain | None = None) -> np.ndarray:
        terrain = terrain if terrain is not None else self.base_terrain
        if self.randomization is not None:
            self.setup = self.randomization.draw(self.rng)
        else:
            self.setup = EpisodeSetup()
        if self.setup.friction is not None:
            terrain = replace(
                terrain,
                friction=np.full_like(terrain.friction, self.setup.friction))
        self.terrain = terrain
        self.sim = Simulator(self.model, terrain,
                             state=self._initial_state(terrain))
        self.sim.kp = self.model.kp_joint * self.setup.kp_scale
        self.sim.kd = self.model.kd_joint * self.setup.kd_scale
        self.sim.motor_coulomb = self.setup.motor_coulomb.copy()
        self.sim.motor_viscous = self.setup.motor_viscous.copy()
        if command is not None:
            self.command = np.asarray(command, dtype=float).copy()
        else:
            self.command = sample_command(self.rng, self.command_ranges)
        self.history.reset()
        self.prev_action = np.zeros(ACTION_DIM)
        stand = self.q_init.copy()
        self._line = deque([stand] * (self.setup.latency_substeps + 1),
                           maxlen=self.setup.latency_substeps + 1)
        self.episode_ticks = 0
        self._obs = self._observe()
        return self._obs

    @property
    def state(self) -> RobotState:
        return self.sim.state

    @property
    def obs(self) -> np.ndarray:
        """Actor observation from the most recent reset or step."""
        return self._obs

    def _observe(self) -> np.ndarray:
        obs = assemble_observation(
            "actor", self.sim.state, self.prev_action, self.history,
            self.schedule, self.command, noise=self.setup.noise,
            rng=self.rng)
        # the history keeps the values exactly as the policy saw them
        self.history.push(obs[OBS_Q], obs[OBS_DQ])
        return obs

    def critic_observation(self) -> np.ndarray:
        state = self.sim.state
        ground = self.terrain.sample_height(state.base_position[0],
                                            state.base_position[1])
        return assemble_observation(
            "critic", state, self.prev_action, self.history, self.schedule,
            self.command, ground_height=float(ground))

    def step(self, action: np.ndarray) -> StepResult:
        action = np.asarray(action, dtype=float)
        if action.shape != (ACTION_DIM,):
            raise ValueError(f"action has shape {action.shape}, "
                             f"expected ({ACTION_DIM},)")
        targets = decode_action(action, self.q_init, self.model.joint_limits)
        self.prev_action = action.copy()
        torque_sq = 0.0
        tau_sum = np.zeros(ACTION_DIM)
        fault = False
        contact = None
        try:
            for _ in range(SUBSTEPS_PER_TICK):
                self._line.append(targets)
                tau, contact = self.sim.step(self._line[0])
                torque_sq += float(tau @ tau)
                tau_sum += tau
        except SimFault:
            fault = True
        self.episode_ticks += 1
        state = self.sim.state
        if fault:
            return StepResult(self._obs.copy(), True, True, np.zeros(3),
                              np.zeros(3), 0.0, 0.0, state.time)
        torque_sq /= SUBSTEPS_PER_TICK
        planned = self.schedule.contact_at(state.time)
        match = float(np.mean(contact.in_contact == planned))
        done = (should_terminate(state, self.model, self.terrain)
                or self.episode_ticks >= self.max_episode_ticks)
        self._obs = self._observe()
        return StepResult(self._obs, done, False,
                          heading_frame_velocity(state),
                          state.base_angular_velocity.copy(), torque_sq,
                          match, state.time,
                          tau_mean=tau_sum / SUBSTEPS_PER_TICK,
                          contact=contact)
