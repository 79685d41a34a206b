"""Evaluation: positioning error, RSS-model error CDFs, localizer reports."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import (
    ClusterConfig,
    FeatureConfig,
    PreprocessConfig,
    extract_features,
    normalized_input,
    preprocess,
)
from .flight import Region, Trajectory, sample_flight
from .localizer import LocalizerNet, Variant, count_complexity, forward
from .propagation import Model, simulate_rss
from .scenario import DatasetRecord, Scenario, record_rng, simulate_record


class TraceFormatError(ValueError):
    pass


def positioning_error(est, truth) -> float:
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if not (np.all(np.isfinite(est)) and np.all(np.isfinite(truth))):
        raise ValueError("positions must be finite")
    return float(np.hypot(*(est - truth)))


def empirical_cdf(values) -> tuple[np.ndarray, np.ndarray]:
    """Sorted values and cumulative fractions ``(i + 1) / n``."""
    v = np.sort(np.asarray(values, dtype=float))
    return v, np.arange(1, v.size + 1) / v.size


@dataclass(eq=False)
class MeasuredTrace:
    t: np.ndarray
    positions: np.ndarray
    rss: np.ndarray
    attitudes: np.ndarray | None = None  # radians, (roll, pitch, yaw)

    def __post_init__(self):
        n = self.t.shape[0]
        if n == 0:
            raise TraceFormatError("empty trace")
        if self.positions.shape != (n, 3) or self.rss.shape != (n,):
            raise TraceFormatError("trace columns differ in length")
        if self.attitudes is not None and self.attitudes.shape != (n, 3):
            raise TraceFormatError("attitude columns differ in length")
        if np.any(np.diff(self.t) < 0):
            raise TraceFormatError("timestamps must be nondecreasing")
        if not np.all(np.isfinite(self.rss)):
            raise TraceFormatError("non-finite rss")

    def __len__(self):
        return self.t.shape[0]


TRACE_COLUMNS = ["t_s", "x_m", "y_m", "z_m", "rss_dbm"]
ATTITUDE_COLUMNS = ["roll_deg", "pitch_deg", "yaw_deg"]


def load_trace(path) -> MeasuredTrace:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header not in (TRACE_COLUMNS, TRACE_COLUMNS + ATTITUDE_COLUMNS):
            raise TraceFormatError(f"{path}: unexpected header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise TraceFormatError(f"{path}:{lineno}: expected {len(header)} columns")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise TraceFormatError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise TraceFormatError(f"{path}: no samples")
    a = np.array(rows)
    att = np.radians(a[:, 5:8]) if a.shape[1] == 8 else None
    return MeasuredTrace(a[:, 0], a[:, 1:4], a[:, 4], att)


def save_trace(trace: MeasuredTrace, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        has_att = trace.attitudes is not None
        w.writerow(TRACE_COLUMNS + (ATTITUDE_COLUMNS if has_att else []))
        deg = np.degrees(trace.attitudes) if has_att else None
        for i in range(len(trace)):
            row = [trace.t[i], *trace.positions[i], trace.rss[i]]
            if has_att:
                row += list(deg[i])
            w.writerow([repr(float(v)) for v in row])


def simulate_trace(sc: Scenario, source_xy, seed: int, trajectory: Trajectory | None = None) -> MeasuredTrace:
    """Float64 synthetic trace with the attitudes that produced it."""
    rng = np.random.default_rng(seed)
    log = sample_flight(trajectory or sc.trajectory, sc.duration, sc.dt, sc.jitter, rng=rng)
    tx = np.array([source_xy[0], source_xy[1], sc.source_height])
    rss = simulate_rss(sc.propagation, sc.model, tx, log.positions, log.attitudes)
    if sc.noise_std > 0:
        rss = rss + rng.normal(0.0, sc.noise_std, size=rss.shape)
    return MeasuredTrace(log.t, log.positions, rss, log.attitudes)


def rss_abs_error_cdf(trace: MeasuredTrace, sc: Scenario, source_xy, model) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF of |measured - predicted| (dB) under ``model``."""
    pos = trace.positions
    reg = sc.source_region
    span = max(reg.width, reg.height)
    if np.any(pos[:, 2] <= 0) or np.any(np.hypot(pos[:, 0] - source_xy[0], pos[:, 1] - source_xy[1]) > 10 * span):
        warnings.warn("trace positions look implausible for this scenario", RuntimeWarning, stacklevel=2)
    att = trace.attitudes if trace.attitudes is not None else np.zeros((len(trace), 3))
    tx = np.array([source_xy[0], source_xy[1], sc.source_height])
    pred = simulate_rss(sc.propagation, Model(model), tx, pos, att)
    return empirical_cdf(np.abs(trace.rss - pred))


# --- localization pipeline ----------------------------------------------------

def feature_config_to_dict(cfg: FeatureConfig) -> dict:
    p, c = cfg.preprocess, cfg.cluster
    out = {"group_size": p.group_size, "sigma": p.sigma, "normalization": p.normalization.value,
           "n_clusters": c.n_clusters, "top_n": c.top_n, "max_iters": c.max_iters, "seed": c.seed}
    if cfg.coord_region is not None:
        r = cfg.coord_region
        out["coord_region"] = [r.x_min, r.x_max, r.y_min, r.y_max]
    return out


def feature_config_from_dict(d: dict) -> FeatureConfig:
    pre = PreprocessConfig(int(d.get("group_size", 2)), float(d.get("sigma", 20)),
                           d.get("normalization", "zscore"))
    cl = ClusterConfig(int(d.get("n_clusters", 20)), int(d.get("top_n", 40)),
                       int(d.get("max_iters", 300)), int(d.get("seed", 0)))
    reg = Region(*d["coord_region"]) if d.get("coord_region") else None
    return FeatureConfig(pre, cl, reg)


def model_input(variant, rss, r_x, r_y, cfg: FeatureConfig) -> np.ndarray:
    if Variant(variant) is Variant.CLUSTERING:
        return extract_features(rss, r_x, r_y, cfg)
    return normalized_input(rss, cfg.preprocess)


def model_inputs(variant, records, cfg: FeatureConfig) -> np.ndarray:
    return np.vstack([model_input(variant, r.rss, r.r_x, r.r_y, cfg) for r in records])


def argmax_rss_estimate(rss, r_x, r_y, cfg: PreprocessConfig = PreprocessConfig()) -> tuple[float, float]:
    """Baseline: UAV position at the strongest preprocessed RSS sample."""
    gx, gy, sp = preprocess(rss, r_x, r_y, cfg)
    k = int(np.argmax(sp))
    return float(gx[k]), float(gy[k])


@dataclass
class EvalReport:
    errors: np.ndarray
    estimates: np.ndarray
    truths: np.ndarray
    complexity: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    @property
    def mean_error(self) -> float:
        return float(np.mean(self.errors)) if self.errors.size else float("nan")

    @property
    def cdf(self):
        return empirical_cdf(self.errors)

    def to_dict(self) -> dict:
        xs, fs = self.cdf
        return {
            "trials": [{"index": i, "est": list(map(float, e)), "truth": list(map(float, t)), "error_m": float(err)}
                       for i, (e, t, err) in enumerate(zip(self.estimates, self.truths, self.errors))],
            "mean_error_m": self.mean_error,
            "cdf": {"error_m": xs.tolist(), "fraction": fs.tolist()},
            "complexity": self.complexity,
            "failures": {str(k): v for k, v in self.failures.items()},
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")


def evaluate_localizer(model: LocalizerNet, trials, cfg: FeatureConfig) -> EvalReport:
    """Run the frozen pipeline on each trial (a :class:`DatasetRecord`)."""
    variant = model.cfg.variant
    ests, truths, failures = [], [], {}
    inputs = []
    for i, rec in enumerate(trials):
        try:
            v = model_input(variant, rec.rss, rec.r_x, rec.r_y, cfg)
            if v.size != model.cfg.input_len:
                raise ValueError(f"pipeline produced {v.size} values, model expects {model.cfg.input_len}")
        except ValueError as exc:
            failures[i] = str(exc)
            continue
        inputs.append(v)
        truths.append(rec.source_xy)
    if inputs:
        ests = forward(model, np.vstack(inputs))
    ests = np.asarray(ests, dtype=float).reshape(-1, 2)
    truths = np.asarray(truths, dtype=float).reshape(-1, 2)
    errors = np.array([positioning_error(e, t) for e, t in zip(ests, truths)])
    rep = count_complexity(model.cfg)
    return EvalReport(errors, ests, truths,
                      {"parameter_count": rep.parameter_count, "flop_count": rep.flop_count}, failures)


def simulate_trials(sc: Scenario, sources, seed: int, trajectory: Trajectory | None = None) -> list[DatasetRecord]:
    """One record per source; trial ``i`` always uses generator ``(seed, i)``."""
    return [simulate_record(sc, xy, record_rng(seed, i), trajectory)[0] for i, xy in enumerate(sources)]


def trajectory_generalization(model: LocalizerNet, cfg: FeatureConfig, sc: Scenario,
                              trajectories: dict, sources, seed: int) -> dict:
    """Re-fly every trial on each trajectory and evaluate the frozen model."""
    return {name: evaluate_localizer(model, simulate_trials(sc, sources, seed, traj), cfg)
            for name, traj in trajectories.items()}


def baseline_errors(records, sc: Scenario, cfg: FeatureConfig) -> dict:
    """Mean error of the argmax-RSS and region-centroid heuristics."""
    cx, cy = sc.source_region.centroid
    am, cen = [], []
    for r in records:
        am.append(positioning_error(argmax_rss_estimate(r.rss, r.r_x, r.r_y, cfg.preprocess), r.source_xy))
        cen.append(positioning_error((cx, cy), r.source_xy))
    return {"argmax_rss": float(np.mean(am)), "centroid": float(np.mean(cen))}
