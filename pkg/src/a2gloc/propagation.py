"""Air-to-ground RSS models: free space, two-ray and the enhanced two-ray.

The enhanced model evaluates two-ray antenna gains at attitude-rotated
angles and subtracts a distance-dependent loss whenever the line of sight
to the transmitter passes under one of the airframe's legs.

All public functions accept a single receiver position ``(3,)`` or a stack
``(n, 3)``; the scalar call returns floats, the stacked call arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .antenna import DipolePattern
from .geometry import (
    AttitudeAngles,
    GeometryError,
    SphericalDirection,
    rotate_direction_batch,
    rotation_matrix_batch,
)

SPEED_OF_LIGHT = 299_792_458.0
RSS_FLOOR_DBM = -250.0


class FitError(ValueError):
    pass


class Polarization(str, Enum):
    VERTICAL = "vertical"
    HORIZONTAL = "horizontal"


class ShadowFrame(str, Enum):
    BODY = "body"
    WORLD = "world"


class Model(str, Enum):
    FSPL = "fspl"
    TWO_RAY = "two_ray"
    ENHANCED_TWO_RAY = "enhanced_two_ray"


@dataclass(frozen=True)
class ShadowModel:
    """Leg-shadowing configuration; angles in degrees.

    ``rotated_elevation`` selects whether the elevation cut-off is tested on
    the airframe-relative elevation (default) or on the raw LoS elevation.
    """

    leg_azimuths: tuple[float, ...] = (39.0, 150.0, 270.0)
    angular_spread: float = 5.0
    elevation_threshold: float = 10.0
    beta: float = 2.0
    d_0: float = 1.0
    frame: ShadowFrame = ShadowFrame.BODY
    rotated_elevation: bool = True

    def __post_init__(self):
        object.__setattr__(self, "leg_azimuths", tuple(float(a) for a in self.leg_azimuths))
        object.__setattr__(self, "frame", ShadowFrame(self.frame))
        if not 0 < self.angular_spread < 90:
            raise ValueError("angular_spread must be in (0, 90) degrees")
        if not 0 < self.elevation_threshold < 90:
            raise ValueError("elevation_threshold must be in (0, 90) degrees")
        if self.d_0 <= 0:
            raise ValueError("d_0 must be positive")


@dataclass(frozen=True)
class PropagationParams:
    p_t: float = 41.0
    f_c: float = 3.32e9
    epsilon_r: float = 2.0
    polarization: Polarization = Polarization.VERTICAL
    tx_pattern: Any = field(default_factory=DipolePattern)
    rx_pattern: Any = field(default_factory=DipolePattern)
    shadow: ShadowModel = field(default_factory=ShadowModel)
    floor_dbm: float = RSS_FLOOR_DBM

    def __post_init__(self):
        object.__setattr__(self, "polarization", Polarization(self.polarization))
        if self.f_c <= 0:
            raise ValueError("f_c must be positive")
        if self.epsilon_r < 1:
            raise ValueError("epsilon_r must be >= 1")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c


@dataclass(frozen=True)
class LinkGeometry:
    """Distances (m) and angles (rad) of one or many TX-RX links.

    Angles are as seen from the receiver looking toward the transmitter.
    """

    d_2d: Any
    d_los: Any
    d_refl: Any
    theta_los: Any
    theta_refl: Any
    phi_los: Any
    phi_refl: Any
    delta_phase: Any


def _positions(tx, rx):
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    if tx.shape != (3,):
        raise GeometryError("tx must be a 3-vector")
    if rx.shape[-1:] != (3,) or rx.ndim > 2:
        raise GeometryError("rx must be a 3-vector or an (n, 3) array")
    return tx, rx


def link_geometry(tx, rx, f_c: float) -> LinkGeometry:
    tx, rx = _positions(tx, rx)
    scalar = rx.ndim == 1
    rx2 = np.atleast_2d(rx)
    dx = tx[0] - rx2[:, 0]
    dy = tx[1] - rx2[:, 1]
    d_2d = np.hypot(dx, dy)
    dz = tx[2] - rx2[:, 2]
    if np.any((d_2d == 0) & (dz == 0)):
        raise GeometryError("transmitter and receiver coincide")
    if tx[2] < 0 or np.any(rx2[:, 2] <= 0):
        raise GeometryError("require tx.z >= 0 and rx.z > 0")
    sz = tx[2] + rx2[:, 2]
    d_los = np.hypot(d_2d, dz)
    d_refl = np.hypot(d_2d, sz)
    theta_l = np.arctan2(dz, d_2d)
    theta_r = np.arctan2(sz, d_2d)
    phi = np.where(d_2d == 0, 0.0, np.arctan2(dy, dx))
    lam = SPEED_OF_LIGHT / f_c
    dphase = 2 * np.pi * (d_refl - d_los) / lam
    out = (d_2d, d_los, d_refl, theta_l, theta_r, phi, phi.copy(), dphase)
    if scalar:
        out = tuple(float(v[0]) for v in out)
    return LinkGeometry(*out)


def reflection_coefficient(theta_r, epsilon_r: float, polarization=Polarization.VERTICAL):
    """Fresnel ground-reflection coefficient at grazing angle ``theta_r``."""
    theta = np.asarray(theta_r, dtype=float)
    if np.any(theta <= 0) or np.any(theta > np.pi / 2 + 1e-12):
        raise GeometryError("grazing angle must lie in (0, pi/2]")
    if epsilon_r < 1:
        raise ValueError("epsilon_r must be >= 1")
    s = np.sin(theta)
    c = np.cos(theta)
    root = np.sqrt(epsilon_r - c * c + 0j)
    if Polarization(polarization) is Polarization.VERTICAL:
        gamma = (epsilon_r * s - root) / (epsilon_r * s + root)
    else:
        gamma = (s - root) / (s + root)
    return complex(gamma) if gamma.ndim == 0 else gamma


def _to_db(power_ratio, floor_rel):
    with np.errstate(divide="ignore"):
        db = 10 * np.log10(power_ratio)
    return np.maximum(db, floor_rel)


def _gain(pattern, theta, phi):
    return np.asarray(pattern.gain(theta, phi), dtype=float)


def fspl_rss(params: PropagationParams, geom: LinkGeometry,
             tx_dir: SphericalDirection | None = None,
             rx_dir: SphericalDirection | None = None):
    """Free-space RSS in dBm; gains default to the LoS angles of ``geom``."""
    if tx_dir is None:
        t_th, t_ph = geom.theta_los, geom.phi_los
    else:
        t_th, t_ph = tx_dir.theta, tx_dir.phi
    if rx_dir is None:
        r_th, r_ph = t_th, t_ph
    else:
        r_th, r_ph = rx_dir.theta, rx_dir.phi
    g = _gain(params.tx_pattern, t_th, t_ph) * _gain(params.rx_pattern, r_th, r_ph)
    ratio = g * (params.wavelength / (4 * np.pi * np.asarray(geom.d_los))) ** 2
    out = params.p_t + _to_db(ratio, params.floor_dbm - params.p_t)
    return float(out) if np.ndim(out) == 0 else out


def _attitude_rotations(att, n: int):
    """Normalize an attitude argument to an (n, 3, 3) rotation stack or None."""
    if att is None:
        return None
    if isinstance(att, AttitudeAngles):
        att = (att.roll, att.pitch, att.yaw)
    arr = np.asarray(att, dtype=float)
    if arr.shape == (3,):
        arr = np.broadcast_to(arr, (n, 3))
    if arr.shape != (n, 3):
        raise ValueError(f"attitudes must have shape ({n}, 3) in radians")
    if not np.any(arr):
        # level flight: skip the vector round trip so results match att=None exactly
        return None
    return rotation_matrix_batch(arr[:, 0], arr[:, 1], arr[:, 2])


def _two_ray_core(params: PropagationParams, geom: LinkGeometry, rot):
    th_l, ph_l = np.atleast_1d(geom.theta_los), np.atleast_1d(geom.phi_los)
    th_r, ph_r = np.atleast_1d(geom.theta_refl), np.atleast_1d(geom.phi_refl)
    if rot is not None:
        th_l, ph_l = rotate_direction_batch(rot, th_l, ph_l)
        th_r, ph_r = rotate_direction_batch(rot, th_r, ph_r)
    g_l = _gain(params.tx_pattern, th_l, ph_l) * _gain(params.rx_pattern, th_l, ph_l)
    g_r = _gain(params.tx_pattern, th_r, ph_r) * _gain(params.rx_pattern, th_r, ph_r)
    gamma = reflection_coefficient(np.atleast_1d(geom.theta_refl), params.epsilon_r, params.polarization)
    amp = (np.sqrt(g_l) / np.atleast_1d(geom.d_los)
           + gamma * np.sqrt(g_r) * np.exp(-1j * np.atleast_1d(geom.delta_phase))
           / np.atleast_1d(geom.d_refl))
    ratio = (params.wavelength / (4 * np.pi)) ** 2 * np.abs(amp) ** 2
    return params.p_t + _to_db(ratio, params.floor_dbm - params.p_t)


def two_ray_rss(params: PropagationParams, tx, rx, att=None):
    """Two-ray RSS (dBm). ``att`` rotates every gain lookup when given.

    ``att`` is an :class:`AttitudeAngles`, or radians ``(3,)`` / ``(n, 3)``.
    """
    geom = link_geometry(tx, rx, params.f_c)
    n = np.size(geom.d_los)
    out = _two_ray_core(params, geom, _attitude_rotations(att, n))
    return float(out[0]) if np.ndim(geom.d_los) == 0 else out


def is_shadowed(direction: SphericalDirection, shadow: ShadowModel) -> bool:
    """Leg-shadow test for a direction already expressed in the chosen frame."""
    return bool(_shadow_mask(np.atleast_1d(direction.theta), np.atleast_1d(direction.phi), shadow)[0])


def _shadow_mask(theta, phi, shadow: ShadowModel):
    az = np.degrees(phi) % 360.0
    hit = np.zeros(az.shape, dtype=bool)
    for psi in shadow.leg_azimuths:
        diff = (az - psi + 180.0) % 360.0 - 180.0
        hit |= np.abs(diff) <= shadow.angular_spread
    return hit & (np.abs(np.degrees(theta)) < shadow.elevation_threshold)


def shadow_direction(geom: LinkGeometry, rot, shadow: ShadowModel):
    """Direction toward the transmitter used by the shadow test.

    Body frame maps the world LoS direction into the airframe (transpose of
    the attitude rotation), so leg azimuths turn with yaw.
    """
    th_w = np.atleast_1d(geom.theta_los)
    ph_w = np.atleast_1d(geom.phi_los)
    if rot is None:
        th_b, ph_b = th_w, ph_w
    else:
        th_b, ph_b = rotate_direction_batch(rot, th_w, ph_w, inverse=True)
    phi = ph_b if shadow.frame is ShadowFrame.BODY else ph_w
    theta = th_b if shadow.rotated_elevation else th_w
    return theta, phi


def shadow_loss(d_sh, shadow: ShadowModel):
    d = np.asarray(d_sh, dtype=float)
    if np.any(d <= 0):
        raise GeometryError("shadowing distance must be positive")
    out = 10 * shadow.beta * np.log10(d / shadow.d_0)
    return float(out) if out.ndim == 0 else out


def enhanced_two_ray_rss(params: PropagationParams, tx, rx, att=None, return_mask: bool = False):
    geom = link_geometry(tx, rx, params.f_c)
    n = np.size(geom.d_los)
    rot = _attitude_rotations(att, n)
    base = _two_ray_core(params, geom, rot)
    theta, phi = shadow_direction(geom, rot, params.shadow)
    mask = _shadow_mask(theta, phi, params.shadow)
    loss = np.where(mask, shadow_loss(np.atleast_1d(geom.d_los), params.shadow), 0.0)
    out = np.where(mask, np.maximum(base - loss, params.floor_dbm), base)
    if np.ndim(geom.d_los) == 0:
        out, mask = float(out[0]), bool(mask[0])
    return (out, mask) if return_mask else out


def simulate_rss(params: PropagationParams, model, tx, rx, att=None):
    """Dispatch to the selected model over a stack of receiver positions."""
    model = Model(model)
    if model is Model.FSPL:
        geom = link_geometry(tx, rx, params.f_c)
        return fspl_rss(params, geom)
    if model is Model.TWO_RAY:
        # plain two-ray ignores attitude by definition
        return two_ray_rss(params, tx, rx)
    return enhanced_two_ray_rss(params, tx, rx, att)


def fit_beta(measured, simulated_unshadowed, shadow_flags, d_los, d_0: float = 1.0) -> float:
    """Least-squares shadowing exponent from shadowed samples.

    Fits ``simulated - measured = beta * 10*log10(d_los/d_0)`` (no intercept,
    matching the loss model) over samples flagged as shadowed.
    """
    measured = np.asarray(measured, dtype=float)
    simulated = np.asarray(simulated_unshadowed, dtype=float)
    flags = np.asarray(shadow_flags, dtype=bool)
    d = np.asarray(d_los, dtype=float)
    if not (measured.shape == simulated.shape == flags.shape == d.shape) or measured.ndim != 1:
        raise FitError("traces must be 1-D and equal length")
    x = 10 * np.log10(d[flags] / d_0)
    y = simulated[flags] - measured[flags]
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    if x.size < 2:
        raise FitError(f"need at least 2 shadowed samples, got {x.size}")
    if np.ptp(x) == 0:
        raise FitError("shadowed samples have identical distances; slope is unidentifiable")
    beta, *_ = np.linalg.lstsq(x[:, None], y, rcond=None)
    return float(beta[0])

