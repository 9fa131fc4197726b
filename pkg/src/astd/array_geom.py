"""Circular hydrophone array geometry: positions, delays, steering vectors.

Bearings follow the mathematical convention: radians counterclockwise from
the +x axis. Plane-wave (far-field) propagation is assumed throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CircularArray:
    """Evenly spaced elements on a ring of given radius.

    Element k sits at angle reference_bearing + 2*pi*k/n_elements.
    """

    n_elements: int
    radius: float
    reference_bearing: float = 0.0

    def __post_init__(self):
        if self.n_elements < 2:
            raise ValueError("need at least 2 elements")
        if self.radius <= 0.0:
            raise ValueError("radius must be positive")

    @property
    def element_angles(self) -> np.ndarray:
        k = np.arange(self.n_elements)
        return self.reference_bearing + 2.0 * np.pi * k / self.n_elements


@dataclass(frozen=True)
class SteeringVector:
    """Unit-modulus narrowband array response for one bearing/frequency."""

    entries: np.ndarray
    frequency: float
    bearing: float


def element_positions(arr: CircularArray) -> np.ndarray:
    """(N, 2) element coordinates in meters."""
    g = arr.element_angles
    return np.column_stack([arr.radius * np.cos(g), arr.radius * np.sin(g)])


def geometric_delays(arr: CircularArray, bearing: float, sound_speed: float) -> np.ndarray:
    """Plane-wave arrival delays in seconds relative to the array center.

    A wavefront from `bearing` reaches element k early by
    (r/c)*cos(bearing - gamma_k), so the delay is the negative of that.
    """
    if sound_speed <= 0.0:
        raise ValueError("sound speed must be positive")
    return -(arr.radius / sound_speed) * np.cos(bearing - arr.element_angles)


def steering_vector(
    arr: CircularArray, bearing: float, frequency: float, sound_speed: float
) -> SteeringVector:
    """Narrowband steering vector exp(-j*2*pi*f*delay_k)."""
    if frequency <= 0.0:
        raise ValueError("frequency must be positive")
    delays = geometric_delays(arr, bearing, sound_speed)
    return SteeringVector(np.exp(-2j * np.pi * frequency * delays), frequency, bearing)


def steering_matrix(
    arr: CircularArray, bearings: np.ndarray, frequency: float, sound_speed: float
) -> np.ndarray:
    """(N, n_bearings) matrix of steering vectors, one column per bearing."""
    g = arr.element_angles[:, None]
    delays = -(arr.radius / sound_speed) * np.cos(np.asarray(bearings)[None, :] - g)
    return np.exp(-2j * np.pi * frequency * delays)
