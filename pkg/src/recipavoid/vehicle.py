"""Platform constants for the identical quadcopter pair."""

from __future__ import annotations

import math
from dataclasses import dataclass

G0 = 9.80665  # m/s^2


@dataclass(frozen=True)
class UavSpec:
    """Physical parameters of one vehicle; both vehicles share one spec."""

    mass: float = 1.0  # kg
    diameter: float = 0.71  # m
    max_thrust_factor: float = 8.0  # multiples of weight
    cruise_speed: float = 16.67  # m/s

    def __post_init__(self):
        if min(self.mass, self.diameter, self.max_thrust_factor, self.cruise_speed) <= 0:
            raise ValueError("vehicle parameters must be positive")

    @property
    def weight(self) -> float:
        return self.mass * G0

    @property
    def max_thrust(self) -> float:
        return self.max_thrust_factor * self.weight

    @property
    def d_col(self) -> float:
        """Collision threshold separation: twice the vehicle diameter."""
        return 2.0 * self.diameter

    @property
    def planar_thrust(self) -> float:
        """Thrust available in the horizontal plane while supporting hover."""
        return math.sqrt(self.max_thrust**2 - self.weight**2)
