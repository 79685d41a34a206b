"""Fixed-waypoint trajectories and time-sampled UAV state."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle in meters."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise TrajectoryError(f"degenerate region {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def centroid(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)

    def contains(self, x, y, tol: float = 1e-9):
        return ((x >= self.x_min - tol) & (x <= self.x_max + tol)
                & (y >= self.y_min - tol) & (y <= self.y_max + tol))


@dataclass(frozen=True, eq=False)
class Trajectory:
    waypoints: np.ndarray
    altitude: float
    closed: bool = False

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 2 or wp.shape[0] < 2:
            raise TrajectoryError("need at least 2 (x, y) waypoints")
        if np.any(np.all(np.diff(wp, axis=0) == 0, axis=1)):
            raise TrajectoryError("consecutive waypoints must differ")
        if self.altitude <= 0:
            raise TrajectoryError("altitude must be positive")
        object.__setattr__(self, "waypoints", wp)

    def __eq__(self, other):
        return (isinstance(other, Trajectory) and self.altitude == other.altitude
                and self.closed == other.closed and np.array_equal(self.waypoints, other.waypoints))

    @property
    def polyline(self) -> np.ndarray:
        if self.closed and not np.array_equal(self.waypoints[0], self.waypoints[-1]):
            return np.vstack([self.waypoints, self.waypoints[:1]])
        return self.waypoints

    @property
    def length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.polyline, axis=0).T)))


@dataclass(frozen=True, eq=False)
class FlightLog:
    """Sampled flight. Attitudes are radians, columns (roll, pitch, yaw)."""

    t: np.ndarray
    positions: np.ndarray
    attitudes: np.ndarray

    def __len__(self) -> int:
        return self.t.shape[0]

    def __eq__(self, other):
        return (isinstance(other, FlightLog) and np.array_equal(self.t, other.t)
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.attitudes, other.attitudes))


def spiral_trajectory(region: Region, spacing: float, altitude: float) -> Trajectory:
    """Inward rectangular spiral sweeping ``region``.

    The first loop traces the perimeter; each following loop is inset by
    ``spacing``. A loop is added only while its inset core is still at least
    ``spacing`` wide. Every loop stops one ``spacing`` short of its start so
    the hop to the next loop never crosses the path.
    """
    if spacing <= 0 or spacing > min(region.width, region.height):
        raise TrajectoryError(f"spacing {spacing} must be in (0, {min(region.width, region.height)}]")
    pts: list[tuple[float, float]] = []
    i = 0
    while True:
        o = i * spacing
        x0, x1 = region.x_min + o, region.x_max - o
        y0, y1 = region.y_min + o, region.y_max - o
        if i > 0 and min(x1 - x0, y1 - y0) < spacing:
            break
        pts += [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        if y1 - y0 > spacing:
            pts.append((x0, y0 + spacing))
        i += 1
    return Trajectory(np.array(pts), altitude, closed=False)


def lawnmower_trajectory(region: Region, spacing: float, altitude: float) -> Trajectory:
    """Boustrophedon sweep with passes parallel to x."""
    if spacing <= 0 or spacing > region.height:
        raise TrajectoryError("spacing must be in (0, region height]")
    ys = np.arange(region.y_min, region.y_max + 1e-9, spacing)
    pts = []
    for k, y in enumerate(ys):
        xs = (region.x_min, region.x_max) if k % 2 == 0 else (region.x_max, region.x_min)
        pts += [(xs[0], y), (xs[1], y)]
    return Trajectory(np.array(pts), altitude)


def perimeter_trajectory(region: Region, altitude: float) -> Trajectory:
    pts = [(region.x_min, region.y_min), (region.x_max, region.y_min),
           (region.x_max, region.y_max), (region.x_min, region.y_max)]
    return Trajectory(np.array(pts), altitude, closed=True)


def random_waypoint_trajectory(region: Region, n_points: int, altitude: float, seed: int) -> Trajectory:
    rng = np.random.default_rng(seed)
    pts = np.column_stack([
        rng.uniform(region.x_min, region.x_max, n_points),
        rng.uniform(region.y_min, region.y_max, n_points),
    ])
    return Trajectory(pts, altitude)


def n_samples(duration: float, dt: float) -> int:
    # guard against 600/0.03 landing a hair under 20000
    return int(math.floor(duration / dt + 1e-9))


def positions_along(traj: Trajectory, arc: np.ndarray) -> np.ndarray:
    """(x, y) at arc-length positions ``arc`` along the polyline."""
    poly = traj.polyline
    seg = np.hypot(*np.diff(poly, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    arc = np.clip(arc, 0.0, cum[-1])
    k = np.clip(np.searchsorted(cum, arc, side="right") - 1, 0, seg.size - 1)
    frac = (arc - cum[k]) / seg[k]
    return poly[k] + frac[:, None] * (poly[k + 1] - poly[k])


def sample_flight(traj: Trajectory, duration: float, dt: float, jitter: float,
                  seed=None, rng: np.random.Generator | None = None) -> FlightLog:
    """Fly ``traj`` at constant speed over ``duration`` seconds, sampling every ``dt``.

    ``jitter`` is a half-range in degrees for i.i.d. uniform roll/pitch/yaw.
    """
    if duration <= 0 or dt <= 0:
        raise TrajectoryError("duration and dt must be positive")
    if jitter < 0:
        raise TrajectoryError("jitter must be non-negative")
    length = traj.length
    if length <= 0:
        raise TrajectoryError("zero-length path")
    rng = rng if rng is not None else np.random.default_rng(seed)
    n = n_samples(duration, dt)
    t = np.arange(n) * dt
    speed = length / duration
    xy = positions_along(traj, speed * t)
    pos = np.column_stack([xy, np.full(n, float(traj.altitude))])
    if jitter == 0:
        att = np.zeros((n, 3))
    else:
        att = np.radians(rng.uniform(-jitter, jitter, size=(n, 3)))
    return FlightLog(t, pos, att)


def load_trajectory(path, altitude: float, closed: bool = False) -> Trajectory:
    """Waypoint CSV with header ``x_m,y_m``."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["x_m", "y_m"]:
            raise TrajectoryError(f"{path}: expected header x_m,y_m")
        pts = []
        for lineno, row in enumerate(reader, start=2):
            try:
                pts.append((float(row["x_m"]), float(row["y_m"])))
            except (TypeError, ValueError):
                raise TrajectoryError(f"{path}:{lineno}: malformed waypoint") from None
    return Trajectory(np.array(pts), altitude, closed)


def save_trajectory(traj: Trajectory, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x_m", "y_m"])
        for x, y in traj.waypoints:
            w.writerow([repr(float(x)), repr(float(y))])


def save_flight_log(log: FlightLog, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "x_m", "y_m", "z_m", "roll_deg", "pitch_deg", "yaw_deg"])
        deg = np.degrees(log.attitudes)
        for i in range(len(log)):
            w.writerow([repr(float(v)) for v in (log.t[i], *log.positions[i], *deg[i])])
