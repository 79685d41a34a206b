"""Attitude rotations and the direction-vector / angle round trip.

Angles are radians internally. Elevation ``theta`` is measured from the
horizontal plane, azimuth ``phi`` counter-clockwise from +x.

Scalar helpers operate on the small dataclasses below; the ``*_batch``
variants take numpy arrays and are what the simulator uses for whole
flights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_POLE_TOL = 1e-12


class GeometryError(ValueError):
    """Raised for degenerate geometric input (e.g. a zero vector)."""


@dataclass(frozen=True)
class AttitudeAngles:
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        for name in ("roll", "pitch", "yaw"):
            if not math.isfinite(getattr(self, name)):
                raise GeometryError(f"attitude {name} must be finite")

    @classmethod
    def from_degrees(cls, roll: float, pitch: float, yaw: float) -> "AttitudeAngles":
        return cls(math.radians(roll), math.radians(pitch), math.radians(yaw))

    def as_degrees(self) -> tuple[float, float, float]:
        return (math.degrees(self.roll), math.degrees(self.pitch), math.degrees(self.yaw))


@dataclass(frozen=True)
class SphericalDirection:
    theta: float
    phi: float

    def __post_init__(self):
        if not (math.isfinite(self.theta) and math.isfinite(self.phi)):
            raise GeometryError("direction angles must be finite")
        if abs(self.theta) > math.pi / 2 + 1e-12:
            raise GeometryError(f"elevation {self.theta} outside [-pi/2, pi/2]")

    @classmethod
    def from_degrees(cls, theta: float, phi: float) -> "SphericalDirection":
        return cls(math.radians(theta), wrap_azimuth(math.radians(phi)))


def wrap_azimuth(phi):
    """Map azimuth(s) into the half-open range [-pi, pi)."""
    if np.ndim(phi):
        return (np.asarray(phi) + np.pi) % (2 * np.pi) - np.pi
    return (float(phi) + math.pi) % (2 * math.pi) - math.pi


def roll_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def pitch_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def yaw_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_matrix(att: AttitudeAngles) -> np.ndarray:
    """Combined rotation ``R_roll @ R_pitch @ R_yaw`` (this order, always)."""
    return roll_matrix(att.roll) @ pitch_matrix(att.pitch) @ yaw_matrix(att.yaw)


def rotation_matrix_batch(roll, pitch, yaw) -> np.ndarray:
    """Stack of combined rotation matrices, shape ``(n, 3, 3)``."""
    roll, pitch, yaw = np.broadcast_arrays(
        np.atleast_1d(np.asarray(roll, dtype=float)),
        np.atleast_1d(np.asarray(pitch, dtype=float)),
        np.atleast_1d(np.asarray(yaw, dtype=float)),
    )
    n = roll.shape[0]
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    zeros, ones = np.zeros(n), np.ones(n)
    rr = np.stack([ones, zeros, zeros, zeros, cr, -sr, zeros, sr, cr], -1).reshape(n, 3, 3)
    rp = np.stack([cp, zeros, sp, zeros, ones, zeros, -sp, zeros, cp], -1).reshape(n, 3, 3)
    ry = np.stack([cy, -sy, zeros, sy, cy, zeros, zeros, zeros, ones], -1).reshape(n, 3, 3)
    return rr @ rp @ ry


def direction_from_angles(direction: SphericalDirection) -> np.ndarray:
    ct = math.cos(direction.theta)
    return np.array(
        [ct * math.cos(direction.phi), ct * math.sin(direction.phi), math.sin(direction.theta)]
    )


def direction_from_angles_batch(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    ct = np.cos(theta)
    return np.stack([ct * np.cos(phi), ct * np.sin(phi), np.sin(theta)], axis=-1)


def angles_from_direction(v) -> SphericalDirection:
    """Recover (elevation, azimuth) from a nonzero vector.

    At the poles the azimuth is undefined and returned as 0.
    """
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm == 0.0 or not math.isfinite(norm):
        raise GeometryError("cannot take angles of a zero or non-finite vector")
    x, y, z = v / norm
    theta = math.asin(min(1.0, max(-1.0, z)))
    if math.hypot(x, y) < _POLE_TOL:
        phi = 0.0
    else:
        phi = float(wrap_azimuth(math.atan2(y, x)))
    return SphericalDirection(theta, phi)


def angles_from_direction_batch(v) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v, axis=-1)
    if np.any(norm == 0.0):
        raise GeometryError("cannot take angles of a zero vector")
    u = v / norm[..., None]
    theta = np.arcsin(np.clip(u[..., 2], -1.0, 1.0))
    horiz = np.hypot(u[..., 0], u[..., 1])
    phi = np.where(horiz < _POLE_TOL, 0.0, wrap_azimuth(np.arctan2(u[..., 1], u[..., 0])))
    return theta, phi


def rotate_direction(att: AttitudeAngles, direction: SphericalDirection) -> SphericalDirection:
    return angles_from_direction(rotation_matrix(att) @ direction_from_angles(direction))


def rotate_direction_batch(rot: np.ndarray, theta, phi, inverse: bool = False):
    """Apply per-sample rotations ``rot`` (n,3,3) to directions (theta, phi).

    ``inverse=True`` applies the transpose, i.e. maps world-frame directions
    into the airframe.
    """
    a = direction_from_angles_batch(theta, phi)
    if inverse:
        a2 = np.einsum("nji,nj->ni", rot, a)
    else:
        a2 = np.einsum("nij,nj->ni", rot, a)
    return angles_from_direction_batch(a2)
