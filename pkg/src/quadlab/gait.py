"""Trot gait schedule: fixed 0.13 s swing / 0.13 s stance, no flight phase.

Diagonal pairs alternate: FR+RL share phase offset 0, FL+RR offset 0.5.
A leg is in stance while its local phase is below the stance fraction.
"""

from dataclasses import dataclass, field

import numpy as np

TROT_OFFSETS = np.array([0.0, 0.5, 0.5, 0.0])  # FR, FL, RR, RL


@dataclass
class GaitSchedule:
    swing_duration: float = 0.13
    stance_duration: float = 0.13
    offsets: np.ndarray = field(default_factory=lambda: TROT_OFFSETS.copy())

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=float)

    @property
    def period(self) -> float:
        return self.swing_duration + self.stance_duration

    @property
    def stance_fraction(self) -> float:
        return self.stance_duration / self.period

    def phase(self, t: float) -> float:
        return (t / self.period) % 1.0

    def leg_phases(self, t: float) -> np.ndarray:
        return (self.phase(t) + self.offsets) % 1.0

    def contact_at(self, t: float) -> np.ndarray:
        """(4,) bool: True for legs the schedule puts in stance at time t."""
        return self.leg_phases(t) < self.stance_fraction

    def swing_progress(self, t: float) -> np.ndarray:
        """(4,) progress through the swing in [0, 1); 0 for stance legs."""
        lp = self.leg_phases(t)
        sf = self.stance_fraction
        prog = (lp - sf) / (1.0 - sf)
        return np.where(lp >= sf, prog, 0.0)

    def stance_time_remaining(self, t: float) -> np.ndarray:
        """(4,) seconds until each stance leg lifts off; 0 for swing legs."""
        lp = self.leg_phases(t)
        rem = (self.stance_fraction - lp) * self.period
        return np.where(lp < self.stance_fraction, rem, 0.0)

    def contact_table(self, t: float, horizon: int, dt: float) -> np.ndarray:
        """(horizon+1, 4) bool stance flags at t, t+dt, ..., t+horizon*dt."""
        out = np.empty((horizon + 1, 4), dtype=bool)
        for k in range(horizon + 1):
            out[k] = self.contact_at(t + k * dt)
        return out
