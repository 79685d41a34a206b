"""RSS preprocessing and the 3D-clustering feature extractor.

Pipeline per flight: average non-overlapping groups of ``group_size``
samples, smooth with a normalized Gaussian kernel, cluster the
(x, y, smoothed RSS) triples with k-means, then summarize each cluster by
the mean RSS and mean position of its strongest ``top_n`` samples.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .flight import Region


class DegenerateInputWarning(UserWarning):
    """Normalization met a constant input and returned zeros."""


class ClusterError(ValueError):
    pass


class Normalization(str, Enum):
    ZSCORE = "zscore"
    MINMAX = "minmax"


@dataclass(frozen=True)
class PreprocessConfig:
    group_size: int = 2
    sigma: float = 20
    normalization: Normalization = Normalization.ZSCORE

    def __post_init__(self):
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if self.sigma < 1:
            raise ValueError("sigma must be >= 1")

    @property
    def kernel_size(self) -> int:
        return 2 * int(math.floor(3 * self.sigma)) + 1


@dataclass(frozen=True)
class ClusterConfig:
    n_clusters: int = 20
    top_n: int = 40
    max_iters: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1 or self.top_n < 1 or self.max_iters < 1:
            raise ValueError("n_clusters, top_n and max_iters must be >= 1")


@dataclass(frozen=True)
class FeatureConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    # optional min-max scaling of feature coordinates into [0, 1]
    coord_region: Region | None = None

    @property
    def length(self) -> int:
        return 3 * self.cluster.n_clusters


@dataclass(frozen=True, eq=False)
class ClusterResult:
    labels: np.ndarray
    members: list
    centroids: np.ndarray
    n_iter: int
    converged: bool


def group_average(x, group_size: int) -> np.ndarray:
    """Mean over consecutive non-overlapping groups; a short tail group is kept."""
    x = np.asarray(x, dtype=float)
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    if group_size == 1 or x.size == 0:
        return x.copy()
    n_full = x.size // group_size
    head = x[: n_full * group_size].reshape(n_full, group_size).mean(axis=1)
    if x.size % group_size:
        head = np.append(head, x[n_full * group_size:].mean())
    return head


def gaussian_kernel(sigma: float) -> np.ndarray:
    if sigma < 1:
        raise ValueError("sigma must be >= 1")
    half = int(math.floor(3 * sigma))
    mu = np.arange(-half, half + 1, dtype=float)
    g = np.exp(-(mu * mu) / (2.0 * sigma * sigma))
    return g / g.sum()


def smooth(x, sigma: float) -> np.ndarray:
    """Same-length Gaussian smoothing with edge-replicated boundaries."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("cannot smooth an empty signal")
    g = gaussian_kernel(sigma)
    half = g.size // 2
    padded = np.pad(x, half, mode="edge")
    return np.convolve(padded, g, mode="valid")


def normalize_rss(x, mode=Normalization.ZSCORE) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    mode = Normalization(mode)
    if mode is Normalization.ZSCORE:
        if x.size < 2:
            raise ValueError("zscore needs at least 2 samples")
        std = x.std()
        if std == 0:
            warnings.warn("zero-variance input to zscore", DegenerateInputWarning, stacklevel=2)
            return np.zeros_like(x)
        return (x - x.mean()) / std
    lo, hi = x.min(), x.max()
    if hi == lo:
        warnings.warn("zero-range input to minmax", DegenerateInputWarning, stacklevel=2)
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = np.zeros((points.shape[0], centroids.shape[0]))
    for j in range(points.shape[1]):
        diff = points[:, j, None] - centroids[None, :, j]
        d += diff * diff
    return d


def standardize_columns(points: np.ndarray) -> np.ndarray:
    mean = points.mean(axis=0)
    std = points.std(axis=0)
    std[std == 0] = 1.0
    return (points - mean) / std


def kmeans(points: np.ndarray, k: int, max_iters: int, seed: int) -> ClusterResult:
    """Lloyd's k-means with seeded random-index initialization.

    Clusters that empty out are re-seeded at the point farthest from its
    current centroid, so every cluster keeps at least one member.
    """
    n = points.shape[0]
    if n < k:
        raise ClusterError(f"{n} samples cannot form {k} clusters")
    rng = np.random.default_rng(seed)
    centroids = points[rng.choice(n, size=k, replace=False)].copy()
    labels = np.full(n, -1)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        d = _sq_dists(points, centroids)
        new = np.argmin(d, axis=1)
        counts = np.bincount(new, minlength=k)
        if np.any(counts == 0):
            new = _fill_empty(points, new, d, counts, k)
            counts = np.bincount(new, minlength=k)
        if np.array_equal(new, labels):
            converged = True
            break
        labels = new
        for j in range(points.shape[1]):
            centroids[:, j] = np.bincount(labels, weights=points[:, j], minlength=k) / counts
    members = [np.flatnonzero(labels == c) for c in range(k)]
    return ClusterResult(labels, members, centroids, it, converged)


def _fill_empty(points, labels, d, counts, k):
    labels = labels.copy()
    own = d[np.arange(points.shape[0]), labels]
    taken = np.zeros(points.shape[0], dtype=bool)
    for c in np.flatnonzero(counts == 0):
        counts = np.bincount(labels, minlength=k)
        # only steal from clusters that keep at least one member
        eligible = (counts[labels] > 1) & ~taken
        cand = np.where(eligible, own, -np.inf)
        far = int(np.argmax(cand))
        labels[far] = c
        taken[far] = True
    return labels


def cluster_3d(r_x, r_y, p, cfg: ClusterConfig) -> ClusterResult:
    """k-means on column-standardized (x, y, RSS) triples."""
    pts = np.column_stack([np.asarray(r_x, float), np.asarray(r_y, float), np.asarray(p, float)])
    if pts.shape[0] < cfg.n_clusters:
        raise ClusterError(f"{pts.shape[0]} samples cannot form {cfg.n_clusters} clusters")
    return kmeans(standardize_columns(pts), cfg.n_clusters, cfg.max_iters, cfg.seed)


def build_feature_vector(r_x, r_y, p, clusters: ClusterResult, top_n: int) -> np.ndarray:
    """``[p1, x1, y1, ..., pC, xC, yC]`` ordered by descending mean RSS."""
    r_x = np.asarray(r_x, float)
    r_y = np.asarray(r_y, float)
    p = np.asarray(p, float)
    blocks = []
    for idx in clusters.members:
        order = np.argsort(-p[idx], kind="stable")[:top_n]
        sel = idx[order]
        blocks.append((p[sel].mean(), r_x[sel].mean(), r_y[sel].mean()))
    blocks.sort(key=lambda b: -b[0])
    return np.array(blocks, dtype=float).ravel()


def preprocess(rss, r_x, r_y, cfg: PreprocessConfig):
    """Grouped positions and grouped-then-smoothed RSS."""
    g = cfg.group_size
    return (group_average(r_x, g), group_average(r_y, g),
            smooth(group_average(rss, g), cfg.sigma))


def extract_features(rss, r_x, r_y, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    gx, gy, sp = preprocess(rss, r_x, r_y, cfg.preprocess)
    clusters = cluster_3d(gx, gy, sp, cfg.cluster)
    vec = build_feature_vector(gx, gy, sp, clusters, cfg.cluster.top_n)
    if cfg.coord_region is not None:
        reg = cfg.coord_region
        vec = vec.copy()
        vec[1::3] = (vec[1::3] - reg.x_min) / reg.width
        vec[2::3] = (vec[2::3] - reg.y_min) / reg.height
    return vec


def normalized_input(rss, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Baseline input: grouped RSS, normalized, no smoothing."""
    return normalize_rss(group_average(rss, cfg.group_size), cfg.normalization)


def extract_features_batch(records, cfg: FeatureConfig = FeatureConfig(), workers: int = 1) -> np.ndarray:
    def one(rec):
        return extract_features(rec.rss, rec.r_x, rec.r_y, cfg)

    if workers <= 1:
        rows = [one(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, records))
    return np.vstack(rows) if rows else np.zeros((0, cfg.length))


def normalized_inputs_batch(records, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    return np.vstack([normalized_input(r.rss, cfg) for r in records])


def save_feature_dump(path, labels, features) -> None:
    features = np.asarray(features)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["src_x", "src_y", *(f"f_{i}" for i in range(features.shape[1]))])
        for (sx, sy), row in zip(labels, features):
            w.writerow([repr(float(sx)), repr(float(sy)), *(repr(float(v)) for v in row)])


def load_feature_dump(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :2], data[:, 2:]
