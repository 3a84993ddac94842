"""From-scratch MLP policy/critic with reverse-mode gradients.

The network is [obs_dim, 512, 256, 64, out_dim] with leaky-ReLU hidden
layers (slope 0.01) and a linear output.  The actor carries a learnable
per-dimension log-std for its Gaussian action head; actions decode to
PD targets via q_bar = q_init + ACTION_SCALE * a, clamped to the joint
limits.  Parameters live in float32 so checkpoints round-trip
bit-exactly; `astype(np.float64)` gives a widened copy for things like
finite-difference gradient checks.

Observation layouts (fixed ordering, documented offsets):

  actor (99):  projected gravity 3 | angular velocity 3 | joint angles 12
               | joint velocities 12 | previous action 12 | history 48
               | planned contacts 4 | phase sin/cos 2 | command 3
  critic (55): same minus the history block, plus base linear velocity 3
               and body height above ground 1 appended at the end; the
               critic never sees injected noise.

The history block is HISTORY_TICKS rows of [q(12), dq(12)], oldest tick
first, flattened in C order.  It stores measurements as they were
observed, so under observation noise the history holds the past noisy
readings, not the true state.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .gait import GaitSchedule
from .model import RobotModel
from .rotation import projected_gravity
from .sim import RobotState

LEAKY_SLOPE = 0.01
ACTION_SCALE = 0.3  # rad per unit action
ACTION_DIM = 12
HISTORY_TICKS = 2

ACTOR_OBS_DIM = 99
CRITIC_OBS_DIM = 55
ACTOR_WIDTHS = (ACTOR_OBS_DIM, 512, 256, 64, ACTION_DIM)
CRITIC_WIDTHS = (CRITIC_OBS_DIM, 512, 256, 64, 1)

# offsets into the actor observation, used to feed the history buffer
# with exactly the (possibly noisy) values the policy saw
OBS_Q = slice(6, 18)
OBS_DQ = slice(18, 30)

FINAL_INIT_SCALE = 0.01

MAGIC = b"LFNN"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for malformed or corrupt policy checkpoint files."""


def leaky_relu(z: np.ndarray) -> np.ndarray:
    return np.where(z >= 0.0, z, LEAKY_SLOPE * z)


def leaky_relu_grad(z: np.ndarray) -> np.ndarray:
    # at exactly 0 we take the positive-side slope
    return np.where(z >= 0.0, 1.0, LEAKY_SLOPE).astype(z.dtype)


class MlpPolicy:
    """Fully connected network with cached-forward/backward passes.

    Weights are (out, in) matrices; `parameters()` returns the live
    weight and bias arrays in layer order (log_std is separate because
    only the RL actor trains it).
    """

    def __init__(self, widths, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ValueError(f"invalid layer widths {widths}")
        self.widths = widths
        self.dtype = np.dtype(dtype)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        n_layers = len(widths) - 1
        for i in range(n_layers):
            fan_in, fan_out = widths[i], widths[i + 1]
            if rng is None:
                w = np.zeros((fan_out, fan_in), dtype=self.dtype)
            else:
                w = rng.standard_normal((fan_out, fan_in))
                w *= np.sqrt(2.0 / fan_in)
                if i == n_layers - 1:
                    w *= FINAL_INIT_SCALE
                w = w.astype(self.dtype)
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out, dtype=self.dtype))
        self.log_std = np.zeros(widths[-1], dtype=self.dtype)

    @property
    def obs_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    @property
    def num_params(self) -> int:
        n = sum(w.size + b.size for w, b in zip(self.weights, self.biases))
        return n + self.log_std.size

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def astype(self, dtype) -> "MlpPolicy":
        other = MlpPolicy(self.widths, dtype=dtype)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            other.weights[i] = w.astype(dtype)
            other.biases[i] = b.astype(dtype)
        other.log_std = self.log_std.astype(dtype)
        return other

    def forward(self, obs: np.ndarray) -> np.ndarray:
        """Mean action (or value) for a single observation or a batch."""
        y, _ = self.forward_cached(obs)
        return y

    def forward_cached(self, obs: np.ndarray):
        """Forward pass keeping the intermediates `backward` needs.

        Returns (output, cache); cache holds the layer inputs and
        pre-activations.  Accepts (obs_dim,) or (N, obs_dim).
        """
        x = np.asarray(obs, dtype=self.dtype)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.obs_dim:
            raise ValueError(
                f"observation has {x.shape[1]} features, expected {self.obs_dim}")
        inputs = [x]
        pre = []
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = x @ w.T + b
            pre.append(z)
            x = leaky_relu(z) if i < n_layers - 1 else z
            inputs.append(x)
        y = inputs[-1]
        return (y[0] if single else y), (inputs, pre, single)

    def backward(self, cache, grad_out: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients for an upstream d(loss)/d(output).

        Gradients are summed over the batch and align with
        `parameters()`: [dW1, db1, dW2, db2, ...].
        """
        inputs, pre, single = cache
        g = np.asarray(grad_out, dtype=self.dtype)
        g = np.atleast_2d(g)
        if g.shape != inputs[-1].shape:
            raise ValueError(
                f"upstream gradient shape {g.shape} != output shape {inputs[-1].shape}")
        grads: list[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            dw = g.T @ inputs[i]
            db = g.sum(axis=0)
            grads.append(db)
            grads.append(dw)
            if i > 0:
                g = (g @ self.weights[i]) * leaky_relu_grad(pre[i - 1])
        grads.reverse()
        return grads


class Adam:
    """Adam over a list of live parameter arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError(
                f"got {len(grads)} gradients for {len(self.params)} parameters")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            g = np.asarray(g, dtype=p.dtype)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def gaussian_logp(mean: np.ndarray, log_std: np.ndarray,
                  action: np.ndarray) -> np.ndarray:
    """Log-density of a diagonal Gaussian; batched over leading axes."""
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    z = (np.asarray(action, dtype=np.float64) - mean) * np.exp(-log_std)
    d = mean.shape[-1]
    return (-0.5 * np.sum(z * z, axis=-1) - np.sum(log_std)
            - 0.5 * d * np.log(2.0 * np.pi))


def gaussian_logp_grads(mean: np.ndarray, log_std: np.ndarray,
                        action: np.ndarray):
    """(d logp/d mean, d logp/d log_std), batched over leading axes."""
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    inv_var = np.exp(-2.0 * log_std)
    diff = np.asarray(action, dtype=np.float64) - mean
    d_mean = diff * inv_var
    d_log_std = diff * diff * inv_var - 1.0
    return d_mean, d_log_std


def gaussian_sample(mean: np.ndarray, log_std: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray:
    noise = rng.standard_normal(np.shape(mean))
    return np.asarray(mean, dtype=np.float64) + np.exp(
        np.asarray(log_std, dtype=np.float64)) * noise


def decode_action(action: np.ndarray, q_init: np.ndarray,
                  joint_limits: np.ndarray,
                  scale: float = ACTION_SCALE) -> np.ndarray:
    """PD targets q_init + scale * action, clamped to the joint limits."""
    action = np.asarray(action, dtype=np.float64)
    targets = np.asarray(q_init, dtype=np.float64) + scale * action
    return np.clip(targets, joint_limits[:, 0], joint_limits[:, 1])


@dataclass
class ObservationNoise:
    """Additive zero-mean uniform noise, per observation group.

    Scales are half-widths: each element gets U(-scale, +scale).
    """

    orientation: float = 0.03
    angular_velocity: float = 0.2
    joint_angle: float = 0.01
    joint_velocity: float = 0.5

    def perturb(self, rng: np.random.Generator, gravity, omega, q, dq):
        def u(scale, x):
            return x + rng.uniform(-scale, scale, size=np.shape(x))

        return (u(self.orientation, gravity),
                u(self.angular_velocity, omega),
                u(self.joint_angle, q),
                u(self.joint_velocity, dq))


class JointHistory:
    """Rolling buffer of past joint measurements, oldest tick first."""

    def __init__(self, ticks: int = HISTORY_TICKS):
        self._buf = np.zeros((ticks, 2 * ACTION_DIM))

    def push(self, q: np.ndarray, dq: np.ndarray) -> None:
        self._buf[:-1] = self._buf[1:]
        self._buf[-1, :ACTION_DIM] = q
        self._buf[-1, ACTION_DIM:] = dq

    def flat(self) -> np.ndarray:
        return self._buf.ravel().copy()

    def reset(self) -> None:
        self._buf[:] = 0.0

    @property
    def size(self) -> int:
        return self._buf.size


def assemble_observation(role: str, state: RobotState, prev_action: np.ndarray,
                         history: JointHistory, schedule: GaitSchedule,
                         command: np.ndarray,
                         noise: ObservationNoise | None = None,
                         rng: np.random.Generator | None = None,
                         ground_height: float = 0.0) -> np.ndarray:
    """Build the actor (99) or critic (55) observation vector.

    Noise applies to the actor only, drawn in a fixed group order
    (gravity, omega, q, dq); the critic additionally sees the base
    linear velocity and the body height above `ground_height`.
    """
    if role not in ("actor", "critic"):
        raise ValueError(f"unknown observation role {role!r}")
    prev_action = np.asarray(prev_action, dtype=np.float64)
    command = np.asarray(command, dtype=np.float64)
    if prev_action.shape != (ACTION_DIM,):
        raise ValueError(f"prev_action has shape {prev_action.shape}, "
                         f"expected ({ACTION_DIM},)")
    if command.shape != (3,):
        raise ValueError(f"command has shape {command.shape}, expected (3,)")

    gravity = projected_gravity(state.base_orientation)
    omega = state.base_angular_velocity.copy()
    q = state.joint_angles.copy()
    dq = state.joint_velocities.copy()
    if role == "actor" and noise is not None:
        if rng is None:
            raise ValueError("observation noise requires an rng")
        gravity, omega, q, dq = noise.perturb(rng, gravity, omega, q, dq)

    contact = schedule.contact_at(state.time).astype(np.float64)
    phi = 2.0 * np.pi * schedule.phase(state.time)
    phase = np.array([np.sin(phi), np.cos(phi)])

    parts = [gravity, omega, q, dq, prev_action]
    if role == "actor":
        hist = history.flat()
        if hist.shape != (HISTORY_TICKS * 2 * ACTION_DIM,):
            raise ValueError(f"history has {hist.size} entries, expected "
                             f"{HISTORY_TICKS * 2 * ACTION_DIM}")
        parts.append(hist)
    parts.extend([contact, phase, command])
    if role == "critic":
        height = state.base_position[2] - ground_height
        parts.extend([state.base_linear_velocity.copy(), np.array([height])])
    obs = np.concatenate(parts)
    expected = ACTOR_OBS_DIM if role == "actor" else CRITIC_OBS_DIM
    if obs.shape != (expected,):
        raise ValueError(f"{role} observation has {obs.size} features, "
                         f"expected {expected}")
    return obs


def default_q_init(model: RobotModel) -> np.ndarray:
    return model.stand_pose.copy()


def save_policy(path, policy: MlpPolicy) -> None:
    """Write an LFNN checkpoint: magic, version, widths, f32 params, CRC32."""
    head = MAGIC + struct.pack("<HB", FORMAT_VERSION, len(policy.widths))
    head += struct.pack(f"<{len(policy.widths)}I", *policy.widths)
    body = b"".join(
        np.ascontiguousarray(p, dtype="<f4").tobytes()
        for p in policy.parameters() + [policy.log_std])
    blob = head + body
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    with open(path, "wb") as f:
        f.write(blob)


def load_policy(path) -> MlpPolicy:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 11 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a policy checkpoint (bad magic)")
    (crc,) = struct.unpack("<I", blob[-4:])
    if crc != (zlib.crc32(blob[:-4]) & 0xFFFFFFFF):
        raise CheckpointError(f"{path}: CRC mismatch, file is corrupt")
    version, n_widths = struct.unpack("<HB", blob[4:7])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    if n_widths < 2:
        raise CheckpointError(f"{path}: needs at least 2 layer widths")
    off = 7 + 4 * n_widths
    if len(blob) < off + 4:
        raise CheckpointError(f"{path}: truncated header")
    widths = struct.unpack(f"<{n_widths}I", blob[7:off])
    n_params = sum(widths[i + 1] * widths[i] + widths[i + 1]
                   for i in range(n_widths - 1)) + widths[-1]
    if len(blob) != off + 4 * n_params + 4:
        raise CheckpointError(
            f"{path}: expected {n_params} parameters for widths {widths}")
    flat = np.frombuffer(blob[off:-4], dtype="<f4")
    policy = MlpPolicy(widths, dtype=np.float32)
    pos = 0
    for i in range(n_widths - 1):
        n = widths[i + 1] * widths[i]
        policy.weights[i] = flat[pos:pos + n].reshape(
            widths[i + 1], widths[i]).copy()
        pos += n
        policy.biases[i] = flat[pos:pos + widths[i + 1]].copy()
        pos += widths[i + 1]
    policy.log_std = flat[pos:pos + widths[-1]].copy()
    return policy
