"""Simulated RSS datasets: source placement, flight sampling, persistence.

Every record draws from its own generator seeded by ``(seed, index)``, so a
dataset is identical whether records are built serially or on a pool.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .antenna import DipolePattern, GriddedPattern, IsotropicPattern, load_pattern
from .flight import (
    FlightLog,
    Region,
    Trajectory,
    lawnmower_trajectory,
    load_trajectory,
    perimeter_trajectory,
    random_waypoint_trajectory,
    sample_flight,
    spiral_trajectory,
)
from .propagation import Model, PropagationParams, ShadowModel, simulate_rss

DATASET_MAGIC = b"A2GLDSET"
DATASET_VERSION = 1
# Versions this reader understands; the column schema has not changed since v1.
READABLE_VERSIONS = (1,)
ENV_PREFIX = "A2GLOC_"

DEFAULT_SOURCE_REGION = Region(0.0, 250.0, 0.0, 400.0)
DEFAULT_FLIGHT_REGION = Region(0.0, 220.0, 120.0, 400.0)
DEFAULT_SPACING = 20.0
DEFAULT_ALTITUDE = 30.0


class ConfigError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


class VersionMismatchError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class ChecksumError(DatasetFormatError):
    pass


class RecordError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        self.index = index
        super().__init__(f"record {index}: {cause}")


def default_trajectory() -> Trajectory:
    return spiral_trajectory(DEFAULT_FLIGHT_REGION, DEFAULT_SPACING, DEFAULT_ALTITUDE)


@dataclass(frozen=True)
class Scenario:
    source_region: Region = DEFAULT_SOURCE_REGION
    source_height: float = 5.0
    trajectory: Trajectory = field(default_factory=default_trajectory)
    duration: float = 600.0
    dt: float = 0.03
    propagation: PropagationParams = field(default_factory=PropagationParams)
    model: Model = Model.ENHANCED_TWO_RAY
    noise_std: float = 1.0
    jitter: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "model", Model(self.model))
        if self.source_height <= 0:
            raise ConfigError("source_height must be positive")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


@dataclass(eq=False)
class DatasetRecord:
    source_xy: tuple[float, float]
    rss: np.ndarray
    r_x: np.ndarray
    r_y: np.ndarray

    def __post_init__(self):
        if not (self.rss.shape == self.r_x.shape == self.r_y.shape) or self.rss.ndim != 1:
            raise DatasetFormatError("record vectors must be 1-D and equal length")

    def __eq__(self, other):
        return (isinstance(other, DatasetRecord)
                and tuple(self.source_xy) == tuple(other.source_xy)
                and np.array_equal(self.rss, other.rss)
                and np.array_equal(self.r_x, other.r_x)
                and np.array_equal(self.r_y, other.r_y))


def record_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def simulate_record(sc: Scenario, source_xy, rng: np.random.Generator,
                    trajectory: Trajectory | None = None) -> tuple[DatasetRecord, FlightLog]:
    """One flight over a known source; returns the record and its flight log."""
    log = sample_flight(trajectory or sc.trajectory, sc.duration, sc.dt, sc.jitter, rng=rng)
    tx = np.array([source_xy[0], source_xy[1], sc.source_height])
    rss = simulate_rss(sc.propagation, sc.model, tx, log.positions, log.attitudes)
    if sc.noise_std > 0:
        rss = rss + rng.normal(0.0, sc.noise_std, size=rss.shape)
    rec = DatasetRecord(
        (float(source_xy[0]), float(source_xy[1])),
        rss.astype(np.float32),
        log.positions[:, 0].astype(np.float32),
        log.positions[:, 1].astype(np.float32),
    )
    return rec, log


def _one_record(sc: Scenario, seed: int, index: int) -> DatasetRecord:
    rng = record_rng(seed, index)
    reg = sc.source_region
    xy = (rng.uniform(reg.x_min, reg.x_max), rng.uniform(reg.y_min, reg.y_max))
    try:
        return simulate_record(sc, xy, rng)[0]
    except (ValueError, ArithmeticError) as exc:
        raise RecordError(index, exc) from exc


def generate_dataset(sc: Scenario, n_records: int, seed: int, workers: int = 1) -> list[DatasetRecord]:
    if n_records < 1:
        raise ConfigError("n_records must be >= 1")
    if workers <= 1:
        return [_one_record(sc, seed, i) for i in range(n_records)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda i: _one_record(sc, seed, i), range(n_records)))


# --- container format -------------------------------------------------------

def save_dataset(records: list[DatasetRecord], path, scenario: Scenario | None = None) -> None:
    """Write records as JSON header + little-endian float32 column blocks."""
    chunks = []
    meta = []
    for rec in records:
        meta.append({"source_xy": [float(rec.source_xy[0]), float(rec.source_xy[1])],
                     "length": int(rec.rss.size)})
        for col in (rec.rss, rec.r_x, rec.r_y):
            chunks.append(np.ascontiguousarray(col, dtype="<f4").tobytes())
    payload = b"".join(chunks)
    header = {
        "format": "a2gloc-dataset",
        "version": DATASET_VERSION,
        "columns": ["rss_dbm", "r_x_m", "r_y_m"],
        "dtype": "<f4",
        "n_records": len(records),
        "records": meta,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
        "scenario": scenario_to_dict(scenario) if scenario is not None else None,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)


def read_dataset_header(path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if len(data) < len(DATASET_MAGIC) + 8 or not data.startswith(DATASET_MAGIC):
        raise DatasetFormatError(f"{path}: not a dataset file")
    (hlen,) = struct.unpack_from("<Q", data, len(DATASET_MAGIC))
    start = len(DATASET_MAGIC) + 8
    if start + hlen > len(data):
        raise TruncatedFileError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"{path}: unreadable header ({exc})") from None
    if not isinstance(header, dict) or header.get("format") != "a2gloc-dataset":
        raise DatasetFormatError(f"{path}: unexpected header")
    return header, data[start + hlen:]


def load_dataset(path) -> list[DatasetRecord]:
    header, payload = read_dataset_header(path)
    version = header.get("version")
    if version not in READABLE_VERSIONS:
        raise VersionMismatchError(f"{path}: version {version} not in {READABLE_VERSIONS}")
    if len(payload) < header["payload_bytes"]:
        raise TruncatedFileError(f"{path}: payload has {len(payload)} of {header['payload_bytes']} bytes")
    payload = payload[:header["payload_bytes"]]
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    records = []
    off = 0
    for meta in header["records"]:
        n = int(meta["length"])
        cols = []
        for _ in range(3):
            nbytes = 4 * n
            if off + nbytes > len(payload):
                raise TruncatedFileError(f"{path}: record block overruns payload")
            cols.append(np.frombuffer(payload, dtype="<f4", count=n, offset=off).astype(np.float32))
            off += nbytes
        records.append(DatasetRecord(tuple(float(v) for v in meta["source_xy"]), *cols))
    if len(records) != header["n_records"]:
        raise DatasetFormatError(f"{path}: record count mismatch")
    return records


# --- configuration ----------------------------------------------------------

def _region_dict(r: Region) -> dict:
    return {"x_min": r.x_min, "x_max": r.x_max, "y_min": r.y_min, "y_max": r.y_max}


def _region(d: dict) -> Region:
    try:
        return Region(float(d["x_min"]), float(d["x_max"]), float(d["y_min"]), float(d["y_max"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad region {d!r}: {exc}") from None


def pattern_to_dict(p) -> dict:
    if isinstance(p, DipolePattern):
        return {"kind": "dipole", "g_max": p.g_max}
    if isinstance(p, IsotropicPattern):
        return {"kind": "isotropic", "g": p.g}
    if isinstance(p, GriddedPattern):
        return {"kind": "gridded", "theta_grid": p.theta_grid.tolist(),
                "phi_grid": p.phi_grid.tolist(), "gain_dbi": p.gain_dbi.tolist()}
    raise ConfigError(f"cannot serialize pattern {type(p).__name__}")


def pattern_from_dict(d, base: Path | None = None):
    kind = d.get("kind", "dipole")
    if kind == "dipole":
        return DipolePattern(float(d.get("g_max", DipolePattern().g_max)))
    if kind == "isotropic":
        return IsotropicPattern(float(d.get("g", 1.0)))
    if kind == "gridded":
        return GriddedPattern(np.array(d["theta_grid"]), np.array(d["phi_grid"]), np.array(d["gain_dbi"]))
    if kind == "file":
        path = Path(d["path"])
        return load_pattern(path if path.is_absolute() or base is None else base / path)
    raise ConfigError(f"unknown pattern kind {kind!r}")


def trajectory_from_dict(d: dict, base: Path | None = None) -> Trajectory:
    kind = d.get("kind", "spiral")
    altitude = float(d.get("altitude", DEFAULT_ALTITUDE))
    if kind == "waypoints":
        return Trajectory(np.array(d["waypoints"], dtype=float), altitude, bool(d.get("closed", False)))
    if kind == "file":
        path = Path(d["path"])
        return load_trajectory(path if path.is_absolute() or base is None else base / path,
                               altitude, bool(d.get("closed", False)))
    region = _region(d.get("region", _region_dict(DEFAULT_FLIGHT_REGION)))
    spacing = float(d.get("spacing", DEFAULT_SPACING))
    if kind == "spiral":
        return spiral_trajectory(region, spacing, altitude)
    if kind == "lawnmower":
        return lawnmower_trajectory(region, spacing, altitude)
    if kind == "perimeter":
        return perimeter_trajectory(region, altitude)
    if kind == "random":
        return random_waypoint_trajectory(region, int(d.get("n_points", 12)), altitude, int(d.get("seed", 0)))
    raise ConfigError(f"unknown trajectory kind {kind!r}")


def scenario_to_dict(sc: Scenario) -> dict:
    p = sc.propagation
    s = p.shadow
    return {
        "source_region": _region_dict(sc.source_region),
        "source_height": sc.source_height,
        "trajectory": {"kind": "waypoints", "waypoints": sc.trajectory.waypoints.tolist(),
                       "altitude": sc.trajectory.altitude, "closed": sc.trajectory.closed},
        "duration": sc.duration,
        "dt": sc.dt,
        "model": sc.model.value,
        "noise_std": sc.noise_std,
        "jitter": sc.jitter,
        "propagation": {
            "p_t": p.p_t, "f_c": p.f_c, "epsilon_r": p.epsilon_r,
            "polarization": p.polarization.value, "floor_dbm": p.floor_dbm,
            "tx_pattern": pattern_to_dict(p.tx_pattern),
            "rx_pattern": pattern_to_dict(p.rx_pattern),
            "shadow": {"leg_azimuths": list(s.leg_azimuths), "angular_spread": s.angular_spread,
                       "elevation_threshold": s.elevation_threshold, "beta": s.beta,
                       "d_0": s.d_0, "frame": s.frame.value,
                       "rotated_elevation": s.rotated_elevation},
        },
    }


def scenario_from_dict(d: dict | None, base: Path | None = None) -> Scenario:
    d = d or {}
    known = {"source_region", "source_height", "trajectory", "duration", "dt",
             "model", "noise_std", "jitter", "propagation"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    try:
        pd = dict(d.get("propagation") or {})
        shadow = ShadowModel(**(pd.pop("shadow", None) or {}))
        tx = pattern_from_dict(pd.pop("tx_pattern", None) or {}, base)
        rx = pattern_from_dict(pd.pop("rx_pattern", None) or {}, base)
        prop = PropagationParams(tx_pattern=tx, rx_pattern=rx, shadow=shadow,
                                 **{k: (float(v) if k != "polarization" else v) for k, v in pd.items()})
        kwargs: dict[str, Any] = {"propagation": prop}
        if "source_region" in d:
            kwargs["source_region"] = _region(d["source_region"])
        if "trajectory" in d:
            kwargs["trajectory"] = trajectory_from_dict(d["trajectory"] or {}, base)
        for k in ("source_height", "duration", "dt", "noise_std", "jitter"):
            if k in d:
                kwargs[k] = float(d[k])
        if "model" in d:
            kwargs["model"] = Model(d["model"])
        return Scenario(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from None


def apply_env_overrides(d: dict, env=None, prefix: str = ENV_PREFIX) -> dict:
    """Overlay ``A2GLOC_SECTION__KEY=value`` variables onto a config dict.

    Values are parsed as YAML scalars, so ``A2GLOC_PROPAGATION__P_T=38`` yields
    a number and ``A2GLOC_MODEL=fspl`` a string.
    """
    env = os.environ if env is None else env
    out = json.loads(json.dumps(d))
    for key, raw in sorted(env.items()):
        if not key.startswith(prefix):
            continue
        path = [p.lower() for p in key[len(prefix):].split("__") if p]
        if not path:
            continue
        node = out
        for part in path[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = node[part] = {}
            node = nxt
        node[path[-1]] = yaml.safe_load(raw)
    return out


def load_scenario(path=None, env=None) -> Scenario:
    """Scenario from a YAML file (or defaults when ``path`` is None) plus env overrides."""
    base = None
    raw: dict = {}
    if path is not None:
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read scenario {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse scenario {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base = path.parent
    return scenario_from_dict(apply_env_overrides(raw, env), base)
