"""Uniform linear array geometry, steering vectors and far-field patterns.

Angles are azimuths in radians measured from broadside.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HALF_PI = np.pi / 2
_ANGLE_TOL = 1e-12


@dataclass(frozen=True)
class ArrayGeometry:
    """ULA with ``n_elements`` isotropic radiators spaced ``spacing`` wavelengths apart."""

    n_elements: int
    spacing: float = 0.5

    def __post_init__(self):
        if int(self.n_elements) != self.n_elements or self.n_elements < 1:
            raise ValueError(f"n_elements must be a positive integer, got {self.n_elements!r}")
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing!r}")

    @property
    def positions(self) -> np.ndarray:
        """Element positions in wavelengths."""
        return self.spacing * np.arange(self.n_elements)


def _check_angles(angle) -> np.ndarray:
    angle = np.asarray(angle, dtype=float)
    if np.any(~np.isfinite(angle)) or np.any(np.abs(angle) > HALF_PI + _ANGLE_TOL):
        raise ValueError("azimuth must lie in [-pi/2, pi/2]")
    return angle


def steering_vector(geom: ArrayGeometry, angle) -> np.ndarray:
    """Unnormalized steering vector, element k is exp(j 2 pi d k sin(angle)).

    A scalar angle gives shape (N,); an array of angles gives shape (..., N).
    """
    angle = _check_angles(angle)
    phase = 2 * np.pi * np.multiply.outer(np.sin(angle), geom.positions)
    return np.exp(1j * phase)


def normalized_steering(geom: ArrayGeometry, angle) -> np.ndarray:
    """Unit-norm steering vector (pencil beam AWV toward ``angle``)."""
    return steering_vector(geom, angle) / np.sqrt(geom.n_elements)


def as_awv(weights) -> np.ndarray:
    """Return ``weights`` scaled to unit Euclidean norm."""
    weights = np.asarray(weights, dtype=complex)
    norm = np.linalg.norm(weights)
    if norm == 0:
        raise ValueError("weight vector has zero norm")
    return weights / norm


def pattern_grid(step_deg: float = 0.25) -> np.ndarray:
    """Azimuth grid over [-90, 90] degrees, returned in radians."""
    n = int(round(180.0 / step_deg))
    if not np.isclose(n * step_deg, 180.0):
        raise ValueError("grid step must divide 180 degrees")
    return np.deg2rad(np.linspace(-90.0, 90.0, n + 1))


def array_factor(geom: ArrayGeometry, awv, angles) -> np.ndarray:
    """Complex response a(phi)^H w for each angle.

    ``awv`` may be a single vector (N,) or a stack (P, N); the result has
    shape (len(angles),) or (P, len(angles)). A scalar angle drops the last axis.
    """
    awv = np.asarray(awv, dtype=complex)
    if awv.shape[-1] != geom.n_elements:
        raise ValueError(f"AWV length {awv.shape[-1]} does not match {geom.n_elements} elements")
    steer = steering_vector(geom, np.atleast_1d(angles))
    out = awv @ steer.conj().T
    return out[..., 0] if np.ndim(angles) == 0 else out


def array_pattern(geom: ArrayGeometry, awv, angles) -> np.ndarray:
    """Power pattern |A(phi)|^2; equals N at the look direction of a pencil beam."""
    return np.abs(array_factor(geom, awv, angles)) ** 2


def resteer(geom: ArrayGeometry, awv, angle) -> np.ndarray:
    """Shift the pattern of ``awv`` by sin(angle) in the sine domain."""
    return np.asarray(awv, dtype=complex) * steering_vector(geom, angle)
