"""Antenna gain patterns: analytic dipole and gridded (measured) tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HALF_WAVE_DIPOLE_GAIN = 1.643


class PatternFileError(ValueError):
    """Base class for pattern-file problems. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MalformedRowError(PatternFileError):
    pass


class NonRectangularGridError(PatternFileError):
    pass


class NonAscendingGridError(PatternFileError):
    pass


def dipole_gain(theta, g_max: float = HALF_WAVE_DIPOLE_GAIN):
    """Donut pattern ``g_max * cos(theta)**2`` with theta the elevation."""
    c = np.cos(theta)
    return g_max * c * c


@dataclass(frozen=True)
class DipolePattern:
    g_max: float = HALF_WAVE_DIPOLE_GAIN

    def gain(self, theta, phi=None):
        return dipole_gain(theta, self.g_max)


@dataclass(frozen=True)
class IsotropicPattern:
    """Constant-gain pattern; handy for degeneracy checks."""

    g: float = 1.0

    def gain(self, theta, phi=None):
        return np.full(np.shape(theta), self.g) if np.ndim(theta) else self.g


@dataclass(frozen=True, eq=False)
class GriddedPattern:
    """Gain table in dBi on an ascending (theta, phi) grid, degrees.

    Queries interpolate bilinearly in dB, wrap phi across 360 -> 0, and clamp
    theta to the grid span.
    """

    theta_grid: np.ndarray
    phi_grid: np.ndarray
    gain_dbi: np.ndarray = field(repr=False)

    def __post_init__(self):
        th = np.asarray(self.theta_grid, dtype=float)
        ph = np.asarray(self.phi_grid, dtype=float)
        g = np.asarray(self.gain_dbi, dtype=float)
        if th.ndim != 1 or ph.ndim != 1 or g.shape != (th.size, ph.size):
            raise ValueError("gain matrix shape does not match grids")
        if th.size < 1 or ph.size < 1:
            raise ValueError("empty grid")
        if np.any(np.diff(th) <= 0) or np.any(np.diff(ph) <= 0):
            raise ValueError("grids must be strictly ascending")
        if th[0] < -90 or th[-1] > 90 or ph[0] < 0 or ph[-1] >= 360:
            raise ValueError("grid outside theta [-90, 90] / phi [0, 360)")
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gain in pattern")
        object.__setattr__(self, "theta_grid", th)
        object.__setattr__(self, "phi_grid", ph)
        object.__setattr__(self, "gain_dbi", g)

    def gain_db(self, theta, phi):
        """Interpolated gain in dBi. ``theta``/``phi`` in radians."""
        th = np.clip(np.degrees(np.asarray(theta, dtype=float)), self.theta_grid[0], self.theta_grid[-1])
        ph = np.mod(np.degrees(np.asarray(phi, dtype=float)), 360.0)
        scalar = th.ndim == 0 and ph.ndim == 0
        th, ph = np.broadcast_arrays(np.atleast_1d(th), np.atleast_1d(ph))

        tg = self.theta_grid
        if tg.size == 1:
            i0 = np.zeros(th.shape, dtype=int)
            i1, wt = i0, np.zeros(th.shape)
        else:
            i0 = np.clip(np.searchsorted(tg, th, side="right") - 1, 0, tg.size - 2)
            i1 = i0 + 1
            wt = (th - tg[i0]) / (tg[i1] - tg[i0])

        # Periodic phi: extend the grid with its first node at +360.
        pg = np.append(self.phi_grid, self.phi_grid[0] + 360.0)
        ph = np.where(ph < pg[0], ph + 360.0, ph)
        j0 = np.clip(np.searchsorted(pg, ph, side="right") - 1, 0, pg.size - 2)
        j1 = j0 + 1
        wp = (ph - pg[j0]) / (pg[j1] - pg[j0])
        n_phi = self.phi_grid.size
        j0 %= n_phi
        j1 %= n_phi

        g = self.gain_dbi
        out = (
            (1 - wt) * (1 - wp) * g[i0, j0]
            + (1 - wt) * wp * g[i0, j1]
            + wt * (1 - wp) * g[i1, j0]
            + wt * wp * g[i1, j1]
        )
        return float(out[0]) if scalar else out

    def gain(self, theta, phi):
        return 10.0 ** (self.gain_db(theta, phi) / 10.0)


def pattern_gain(pattern, direction) -> float:
    """Linear gain of ``pattern`` toward a :class:`SphericalDirection`."""
    return float(pattern.gain(direction.theta, direction.phi))


def load_pattern(path) -> GriddedPattern:
    """Read a ``theta_deg,phi_deg,gain_dbi`` CSV (theta-outer row order)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"pattern file not found: {path}")

    rows: list[tuple[int, float, float, float]] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["theta_deg", "phi_deg", "gain_dbi"]:
            raise MalformedRowError("expected header theta_deg,phi_deg,gain_dbi", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise MalformedRowError(f"expected 3 columns, got {len(row)}", lineno)
            try:
                t, p, g = (float(c) for c in row)
            except ValueError as exc:
                raise MalformedRowError(str(exc), lineno) from None
            if not (np.isfinite(t) and np.isfinite(p) and np.isfinite(g)):
                raise MalformedRowError("non-finite value", lineno)
            if not (-90 <= t <= 90 and 0 <= p < 360):
                raise MalformedRowError(f"angle out of range ({t}, {p})", lineno)
            rows.append((lineno, t, p, g))
    if not rows:
        raise MalformedRowError("no data rows", 2)

    thetas: list[float] = []
    phis: list[float] = []
    gains: list[list[float]] = []
    for lineno, t, p, g in rows:
        if thetas and t == thetas[-1] and len(gains[-1]) == len(phis) and len(thetas) > 1:
            raise NonAscendingGridError(f"duplicated theta row {t}", lineno)
        if len(thetas) == 1 and phis and t == thetas[-1] and p == phis[0]:
            raise NonAscendingGridError(f"duplicated theta row {t}", lineno)
        if not thetas or t != thetas[-1]:
            if thetas and t < thetas[-1]:
                raise NonAscendingGridError(f"theta {t} after {thetas[-1]}", lineno)
            if thetas and len(gains[-1]) != len(phis):
                raise NonRectangularGridError(
                    f"theta row {thetas[-1]} has {len(gains[-1])} nodes, expected {len(phis)}", lineno
                )
            thetas.append(t)
            gains.append([])
        row_gains = gains[-1]
        k = len(row_gains)
        if len(thetas) == 1:
            if phis and p <= phis[-1]:
                raise NonAscendingGridError(f"phi {p} after {phis[-1]}", lineno)
            phis.append(p)
        else:
            if k >= len(phis):
                raise NonRectangularGridError(f"extra node in theta row {t}", lineno)
            if p != phis[k]:
                if k > 0 and p <= phis[k - 1]:
                    raise NonAscendingGridError(f"phi {p} after {phis[k - 1]}", lineno)
                raise NonRectangularGridError(f"phi {p} does not match grid column {phis[k]}", lineno)
        row_gains.append(g)
    if len(gains[-1]) != len(phis):
        raise NonRectangularGridError(
            f"theta row {thetas[-1]} has {len(gains[-1])} nodes, expected {len(phis)}", rows[-1][0]
        )
    return GriddedPattern(np.array(thetas), np.array(phis), np.array(gains))


def save_pattern(pattern: GriddedPattern, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["theta_deg", "phi_deg", "gain_dbi"])
        for i, t in enumerate(pattern.theta_grid):
            for j, p in enumerate(pattern.phi_grid):
                w.writerow([repr(float(t)), repr(float(p)), repr(float(pattern.gain_dbi[i, j]))])


def sampled_dipole_pattern(step_deg: float = 5.0, g_max: float = HALF_WAVE_DIPOLE_GAIN,
                           floor_dbi: float = -40.0) -> GriddedPattern:
    """Synthetic gridded stand-in for a measured pattern: a sampled dipole.

    The exact nulls at the poles are floored at ``floor_dbi`` so the table
    stays finite.
    """
    theta = np.arange(-90.0, 90.0 + 1e-9, step_deg)
    phi = np.arange(0.0, 360.0 - 1e-9, step_deg)
    g = dipole_gain(np.radians(theta), g_max)
    with np.errstate(divide="ignore"):
        g_db = np.maximum(10 * np.log10(g), floor_dbi)
    return GriddedPattern(theta, phi, np.repeat(g_db[:, None], phi.size, axis=1))
