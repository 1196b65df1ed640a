"""Fading-memory obstacle point cloud with spatial scoring.

Obstacle points live in the planning (odometry) frame and carry a weight
set at insertion time. A point's score at query time is

    score = weight * exp(-age / tau)

so stale evidence fades instead of being erased. Points are dropped once
their score falls below exp(-2); with weights normalized to at most 1
that bounds the lifetime by 2 * tau. tau = 0 is the memoryless special
case: only points inserted at the query timestamp score at all.

Spatial queries go through a uniform grid over packed int64 cell keys in
CSR layout; the grid cell edge defaults to the robot radius so a circle
query only has to visit the 3x3 cell neighborhood.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

DROP_THRESHOLD = math.exp(-2.0)
DEFAULT_TAU = 2.0
DEFAULT_CAPACITY = 50_000
DEFAULT_CELL = 0.35


@dataclass
class CloudConfig:
    tau: float = DEFAULT_TAU
    capacity: int = DEFAULT_CAPACITY
    cell: float = DEFAULT_CELL
    drop_threshold: float = DROP_THRESHOLD

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.capacity < 1:
            raise ValueError("capacity must be positive")
        if self.cell <= 0:
            raise ValueError("cell must be positive")


class ScoredCloud:
    """Append-mostly 2D point store with exponential score decay."""

    def __init__(self, config: CloudConfig | None = None):
        self.config = config or CloudConfig()
        self._xy = np.empty((0, 2), dtype=np.float64)
        self._w = np.empty(0, dtype=np.float64)
        self._t = np.empty(0, dtype=np.float64)
        self._dirty = True
        self._order = None
        self._uniq_keys = None
        self._starts = None

    def __len__(self):
        return self._xy.shape[0]

    @property
    def points(self):
        return self._xy

    @property
    def weights(self):
        return self._w

    @property
    def timestamps(self):
        return self._t

    def clear(self):
        self._xy = np.empty((0, 2), dtype=np.float64)
        self._w = np.empty(0, dtype=np.float64)
        self._t = np.empty(0, dtype=np.float64)
        self._dirty = True

    def decay(self, now):
        """Per-point decay factor exp(-age/tau) at time now."""
        age = np.maximum(now - self._t, 0.0)
        if self.config.tau > 0.0:
            return np.exp(-age / self.config.tau)
        return (age <= 1e-9).astype(np.float64)

    def scores(self, now):
        return self._w * self.decay(now)

    def insert(self, points, weights, timestamp):
        """Add points (M, 2) with weights (M,) stamped at timestamp, then
        prune expired points and enforce capacity."""
        points = np.asarray(points, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 2:
            raise ValueError("points must be (M, 2)")
        if weights.shape != (points.shape[0],):
            raise ValueError("weights must be (M,)")
        if points.shape[0]:
            self._xy = np.concatenate([self._xy, points])
            self._w = np.concatenate([self._w, weights])
            self._t = np.concatenate(
                [self._t, np.full(points.shape[0], float(timestamp))])
            self._dirty = True
        self.prune(float(timestamp))

    def prune(self, now):
        s = self.scores(now)
        keep = s >= self.config.drop_threshold
        if keep.sum() > self.config.capacity:
            # Capacity overflow: drop the lowest-scoring points first.
            # Stable sort makes the cut deterministic among ties.
            idx = np.flatnonzero(keep)
            order = idx[np.argsort(s[idx], kind="stable")]
            keep[order[: idx.size - self.config.capacity]] = False
        if not keep.all():
            self._xy = self._xy[keep]
            self._w = self._w[keep]
            self._t = self._t[keep]
            self._dirty = True

    def _rebuild(self):
        cell = self.config.cell
        ix = np.floor(self._xy[:, 0] / cell).astype(np.int64)
        iy = np.floor(self._xy[:, 1] / cell).astype(np.int64)
        keys = kernels.encode_cells(ix, iy)
        self._order = np.argsort(keys, kind="stable")
        sorted_keys = keys[self._order]
        self._uniq_keys, counts = np.unique(sorted_keys, return_counts=True)
        self._starts = np.concatenate(
            [[0], np.cumsum(counts)]).astype(np.int64)
        self._dirty = False

    def score_samples(self, samples, now, radius):
        """Summed decayed score of all points within radius of each sample.

        samples is (S, 2); returns (S,) float64. Empty cloud scores zero.
        """
        samples = np.ascontiguousarray(samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] != 2:
            raise ValueError("samples must be (S, 2)")
        if radius > self.config.cell + 1e-12:
            raise ValueError("query radius exceeds grid cell size")
        if not len(self):
            return np.zeros(samples.shape[0], dtype=np.float64)
        if self._dirty:
            self._rebuild()
        pts = np.ascontiguousarray(self._xy[self._order])
        w = np.ascontiguousarray(self.scores(now)[self._order])
        return kernels.score_points(samples, pts, w, self._uniq_keys,
                                    self._starts, self.config.cell, radius)

    def score_at(self, position, radius, now):
        """Summed decayed score of points within radius of one position."""
        sample = np.asarray(position, dtype=np.float64).reshape(1, 2)
        return float(self.score_samples(sample, now, radius)[0])

    def dump_csv(self, path, now, tag=""):
        s = self.scores(now)
        with open(path, "w") as fh:
            fh.write("x,y,score,tag\n")
            for (x, y), sc in zip(self._xy, s):
                fh.write(f"{x!r},{y!r},{sc!r},{tag}\n")
