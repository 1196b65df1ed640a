"""Two-segment constant-curvature trajectory library.

A dense grid over (kappa1, kappa2) generates candidate paths: curvature
kappa1 for the first half of the arc length, kappa2 for the second, both
bounded by yaw_rate_max / speed. A small maximum-dispersion subset is then
picked greedily (straight path first, ties to the lower id) under the
distance D(a, b) = max over matched arc-length samples of point distance.
Selections are nested: the k-subset is a prefix of the (k+1)-subset.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

DEFAULT_LENGTH = 5.0
DEFAULT_DS = 0.25
DEFAULT_KAPPA_MAX = 0.8
DENSE_DEFAULT = 2401
SELECT_DEFAULT = 78


@dataclass
class Trajectory:
    """Body-frame path: samples is (S, 3) rows of x, y, yaw at fixed
    arc-length spacing ds, starting at the origin with zero yaw."""

    traj_id: int
    kappa1: float
    kappa2: float
    ds: float
    samples: np.ndarray

    @property
    def length(self) -> float:
        return (self.samples.shape[0] - 1) * self.ds

    @property
    def endpoint(self):
        return self.samples[-1]


def _arc_offsets(s, kappa):
    """Pose (x, y, yaw) after arc length s at constant curvature, from the
    origin facing +x."""
    if abs(kappa) < 1e-12:
        return s, np.zeros_like(s), np.zeros_like(s)
    yaw = kappa * s
    return np.sin(yaw) / kappa, (1.0 - np.cos(yaw)) / kappa, yaw


def _two_arc_samples(kappa1, kappa2, length, ds):
    n = int(round(length / ds)) + 1
    s = np.arange(n) * ds
    half = length / 2.0
    s1 = np.minimum(s, half)
    x, y, yaw = _arc_offsets(s1, kappa1)
    s2 = np.maximum(s - half, 0.0)
    x2, y2, yaw2 = _arc_offsets(s2, kappa2)
    xm, ym, yawm = _arc_offsets(np.array([half]), kappa1)
    c, sn = np.cos(yawm[0]), np.sin(yawm[0])
    on_second = s > half
    x = np.where(on_second, xm[0] + c * x2 - sn * y2, x)
    y = np.where(on_second, ym[0] + sn * x2 + c * y2, y)
    yaw = np.where(on_second, yawm[0] + yaw2, yaw)
    return np.column_stack([x, y, yaw])


def generate_dense(n=DENSE_DEFAULT, length=DEFAULT_LENGTH,
                   kappa_max=DEFAULT_KAPPA_MAX, ds=DEFAULT_DS):
    """Generate the dense library over a uniform curvature grid.

    n must be a perfect square; ids are assigned row-major over the
    (kappa1, kappa2) grid so the straight path exists whenever the grid
    side is odd.
    """
    m = int(round(math.sqrt(n)))
    if m * m != n:
        raise ValueError(f"dense library size {n} is not a perfect square")
    if length <= 0 or ds <= 0 or ds > length:
        raise ValueError("invalid length/ds")
    kappas = np.linspace(-kappa_max, kappa_max, m) if m > 1 else np.array([0.0])
    out = []
    for i, k1 in enumerate(kappas):
        for j, k2 in enumerate(kappas):
            out.append(Trajectory(traj_id=i * m + j, kappa1=float(k1),
                                  kappa2=float(k2), ds=ds,
                                  samples=_two_arc_samples(k1, k2, length, ds)))
    return out


def trajectory_distance(a, b):
    """Max distance between matched arc-length samples."""
    if a.samples.shape != b.samples.shape:
        raise ValueError("trajectories must share sampling")
    d = a.samples[:, :2] - b.samples[:, :2]
    return float(np.sqrt((d * d).sum(axis=1)).max())


def straightest_index(trajectories):
    """Index of the straight path (ties to the lower id)."""
    curv = [max(abs(t.kappa1), abs(t.kappa2)) for t in trajectories]
    return int(np.argmin(curv))


def select_dispersion(trajectories, k=SELECT_DEFAULT):
    """Greedy maximum-dispersion subset; returns chosen ids in pick order.

    Starts from the straight path, then repeatedly adds the trajectory
    farthest from the chosen set. Ties break to the lower id. Prefix
    property: the first k' entries are the selection for k'.
    """
    n = len(trajectories)
    if not (1 <= k <= n):
        raise ValueError(f"k={k} outside [1, {n}]")
    xs = np.ascontiguousarray(
        np.stack([t.samples[:, 0] for t in trajectories]))
    ys = np.ascontiguousarray(
        np.stack([t.samples[:, 1] for t in trajectories]))
    first = straightest_index(trajectories)
    idx = kernels.greedy_dispersion(xs, ys, k, first)
    return [trajectories[i].traj_id for i in idx]


@dataclass
class TrajectoryLibrary:
    """Dense candidates plus the dispersed subset actually planned over."""

    dense: list
    selected_ids: list
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, n=DENSE_DEFAULT, k=SELECT_DEFAULT, length=DEFAULT_LENGTH,
              kappa_max=DEFAULT_KAPPA_MAX, ds=DEFAULT_DS):
        dense = generate_dense(n, length, kappa_max, ds)
        return cls(dense=dense, selected_ids=select_dispersion(dense, k))

    @property
    def selected(self):
        by_id = {t.traj_id: t for t in self.dense}
        return [by_id[i] for i in self.selected_ids]

    @property
    def selected_stack(self):
        """Body-frame samples of the selected set as one (K, S, 3) array,
        plus the matching id vector; cached for the planner's hot loop."""
        if "stack" not in self._cache:
            sel = self.selected
            self._cache["stack"] = np.stack([t.samples for t in sel])
            self._cache["ids"] = np.array([t.traj_id for t in sel],
                                          dtype=np.int64)
        return self._cache["stack"], self._cache["ids"]

    def save(self, path):
        t0 = self.dense[0]
        lines = ["# rhnav trajectory library v1",
                 f"meta ds {t0.ds!r} n {len(self.dense)}"]
        lines.append("selected " + " ".join(str(i) for i in self.selected_ids))
        for t in self.dense:
            pts = " ".join(f"{x!r} {y!r} {yaw!r}" for x, y, yaw in t.samples)
            lines.append(f"traj {t.traj_id} {t.kappa1!r} {t.kappa2!r} {pts}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        dense = []
        selected = []
        ds = DEFAULT_DS
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if parts[0] == "meta":
                    ds = float(parts[2])
                elif parts[0] == "selected":
                    selected = [int(v) for v in parts[1:]]
                elif parts[0] == "traj":
                    tid = int(parts[1])
                    k1, k2 = float(parts[2]), float(parts[3])
                    vals = np.array([float(v) for v in parts[4:]])
                    dense.append(Trajectory(
                        traj_id=tid, kappa1=k1, kappa2=k2, ds=ds,
                        samples=vals.reshape(-1, 3)))
                else:
                    raise ValueError(f"unknown library record: {parts[0]}")
        if not dense:
            raise ValueError("empty trajectory library file")
        return cls(dense=dense, selected_ids=selected)


def transform_to_world(samples, pose):
    """Body-frame (S, 3) samples to the world frame at pose (x, y, yaw)."""
    x0, y0, yaw = float(pose[0]), float(pose[1]), float(pose[2])
    c, s = math.cos(yaw), math.sin(yaw)
    out = np.empty_like(samples)
    out[:, 0] = x0 + c * samples[:, 0] - s * samples[:, 1]
    out[:, 1] = y0 + s * samples[:, 0] + c * samples[:, 1]
    out[:, 2] = samples[:, 2] + yaw
    return out
