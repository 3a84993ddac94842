"""Trajectory log: the CSV contract consumed by metrics and plotting.

One row per 100 Hz control tick. Numbers are written with Python's
shortest round-trip float repr, so identical trajectories produce
byte-identical files.
"""

import csv

import numpy as np

from .model import LEG_NAMES
from .sim import ContactState, RobotState

_JOINT_SUFFIX = ("abd", "hip", "knee")

JOINT_COLUMNS = [f"q_{leg.lower()}_{j}" for leg in LEG_NAMES for j in _JOINT_SUFFIX]
JOINT_VEL_COLUMNS = [f"dq_{leg.lower()}_{j}" for leg in LEG_NAMES for j in _JOINT_SUFFIX]
TORQUE_COLUMNS = [f"tau_{leg.lower()}_{j}" for leg in LEG_NAMES for j in _JOINT_SUFFIX]
CONTACT_COLUMNS = [f"contact_{leg.lower()}" for leg in LEG_NAMES]

TRAJECTORY_COLUMNS = (
    ["time"]
    + ["px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz"]
    + JOINT_COLUMNS
    + JOINT_VEL_COLUMNS
    + TORQUE_COLUMNS
    + CONTACT_COLUMNS
    + ["cmd_vx", "cmd_vy", "cmd_wz"]
)


class TrajectoryWriter:
    def __init__(self, path):
        self._f = open(path, "w", newline="")
        self._f.write(",".join(TRAJECTORY_COLUMNS) + "\n")

    def append(
        self,
        time: float,
        state: RobotState,
        torques: np.ndarray,
        contact: ContactState,
        command: np.ndarray,
    ):
        parts = [repr(float(time))]
        for arr in (
            state.base_position,
            state.base_orientation,
            state.base_linear_velocity,
            state.base_angular_velocity,
            state.joint_angles,
            state.joint_velocities,
            torques,
        ):
            parts.extend(repr(float(x)) for x in arr)
        parts.extend(str(int(b)) for b in contact.in_contact)
        parts.extend(repr(float(x)) for x in command)
        self._f.write(",".join(parts) + "\n")

    def close(self):
        if self._f is not None:
            self._f.close()
            self._f = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class TrajectoryBuffer:
    """In-memory trajectory with the same row contract as the writer.

    Metrics computed from `as_dict()` match metrics computed from a
    saved file bit for bit, because the repr round trip is exact for
    float64.
    """

    def __init__(self):
        self._rows: list[list[float]] = []

    def __len__(self) -> int:
        return len(self._rows)

    def append(
        self,
        time: float,
        state: RobotState,
        torques: np.ndarray,
        contact: ContactState,
        command: np.ndarray,
    ):
        row = [float(time)]
        for arr in (
            state.base_position,
            state.base_orientation,
            state.base_linear_velocity,
            state.base_angular_velocity,
            state.joint_angles,
            state.joint_velocities,
            torques,
        ):
            row.extend(float(x) for x in arr)
        row.extend(float(int(b)) for b in contact.in_contact)
        row.extend(float(x) for x in command)
        self._rows.append(row)

    def as_dict(self) -> dict:
        data = (np.array(self._rows, dtype=float) if self._rows
                else np.zeros((0, len(TRAJECTORY_COLUMNS))))
        return {name: data[:, i] for i, name in enumerate(TRAJECTORY_COLUMNS)}

    def save(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write(",".join(TRAJECTORY_COLUMNS) + "\n")
            ncontact = len(CONTACT_COLUMNS)
            lo = 1 + 13 + 36  # columns before the contact flags
            for row in self._rows:
                parts = [repr(x) for x in row[:lo]]
                parts += [str(int(x)) for x in row[lo:lo + ncontact]]
                parts += [repr(x) for x in row[lo + ncontact:]]
                f.write(",".join(parts) + "\n")


def read_trajectory(path) -> dict:
    """Load a trajectory CSV as {column: float ndarray}."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [row for row in reader if row]
    if header[: len(TRAJECTORY_COLUMNS)] != TRAJECTORY_COLUMNS:
        missing = [c for c in TRAJECTORY_COLUMNS if c not in header]
        raise ValueError(
            f"{path}: not a trajectory log (missing columns: {missing[:5]})"
        )
    data = np.array(rows, dtype=float)
    return {name: data[:, i] for i, name in enumerate(header)}
