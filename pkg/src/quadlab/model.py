"""Robot description: masses, geometry, limits, joint-PD gains.

Defaults are Mini-Cheetah-like values from public robot descriptions; they
are configuration, not ground truth, and every field can be overridden from
the config file.

Legs are indexed [FR, FL, RR, RL]; joints per leg are
[abduction, hip pitch, knee pitch], 12 joints total.
"""

from dataclasses import dataclass, field

import numpy as np

LEG_NAMES = ("FR", "FL", "RR", "RL")
NUM_LEGS = 4
NUM_JOINTS = 12

# y-axis sign of the abduction link per leg (right legs negative)
LEG_SIDE = np.array([-1.0, 1.0, -1.0, 1.0])

DEFAULT_HIP_OFFSETS = np.array(
    [
        [0.19, -0.049, 0.0],
        [0.19, 0.049, 0.0],
        [-0.19, -0.049, 0.0],
        [-0.19, 0.049, 0.0],
    ]
)

# nominal standing pose, repeated per leg: abduction 0, hip -0.8, knee 1.6
DEFAULT_STAND_POSE = np.tile(np.array([0.0, -0.8, 1.6]), 4)

DEFAULT_JOINT_LIMITS = np.tile(
    np.array([[-0.8, 0.8], [-2.4, 1.0], [0.3, 2.7]]), (4, 1)
)


def _default_inertia():
    return np.diag([0.07, 0.26, 0.242])


@dataclass
class RobotModel:
    base_mass: float = 9.0
    base_inertia: np.ndarray = field(default_factory=_default_inertia)
    hip_offsets: np.ndarray = field(default_factory=lambda: DEFAULT_HIP_OFFSETS.copy())
    link_lengths: np.ndarray = field(
        default_factory=lambda: np.array([0.062, 0.209, 0.195])
    )
    joint_limits: np.ndarray = field(
        default_factory=lambda: DEFAULT_JOINT_LIMITS.copy()
    )
    joint_reflected_inertia: float = 0.005
    torque_limit: float = 17.0
    kp_joint: float = 17.0
    kd_joint: float = 0.4
    gravity: float = 9.81
    stand_height: float = 0.28
    stand_pose: np.ndarray = field(default_factory=lambda: DEFAULT_STAND_POSE.copy())
    base_clearance: float = 0.08  # lowest allowed base height above terrain

    def __post_init__(self):
        self.base_inertia = np.asarray(self.base_inertia, dtype=float)
        self.hip_offsets = np.asarray(self.hip_offsets, dtype=float)
        self.link_lengths = np.asarray(self.link_lengths, dtype=float)
        self.joint_limits = np.asarray(self.joint_limits, dtype=float)
        self.stand_pose = np.asarray(self.stand_pose, dtype=float)
        self.validate()

    def validate(self):
        if self.base_mass <= 0:
            raise ValueError("base_mass must be strictly positive")
        if np.any(self.link_lengths <= 0):
            raise ValueError("link_lengths must be strictly positive")
        if self.joint_reflected_inertia <= 0:
            raise ValueError("joint_reflected_inertia must be strictly positive")
        I = self.base_inertia
        if I.shape != (3, 3) or not np.allclose(I, I.T, atol=1e-12):
            raise ValueError("base_inertia must be a symmetric 3x3 matrix")
        if np.any(np.linalg.eigvalsh(I) <= 0):
            raise ValueError("base_inertia must be positive definite")
        if self.hip_offsets.shape != (4, 3):
            raise ValueError("hip_offsets must be 4x3")
        if self.joint_limits.shape != (12, 2):
            raise ValueError("joint_limits must be 12x2")
        if np.any(self.joint_limits[:, 0] >= self.joint_limits[:, 1]):
            raise ValueError("joint_limits lower bound must be below upper bound")
