"""Synthetic forest world: tree placement, planar vehicle dynamics, pinhole
rendering with ground-truth depth, and collision tests.

The world is a flat plane scattered with vertical cylinder trees of infinite
height. The vehicle flies at a fixed altitude, so planning state lives in 2D
(x, y, yaw), but frames are rendered per pixel so the perception stack sees
honest image structure: per-tree procedural bark bands whose image-space
frequency scales with range, distance haze, and a ground/sky gradient.
Everything is deterministic given (scenario seed, pose).
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels

DEFAULT_D_MAX = 20.0


def wrap_angle(a):
    """Normalize an angle (scalar or array) to (-pi, pi]."""
    return (np.asarray(a) - np.pi) % (-2.0 * np.pi) + np.pi


def splitmix64(x):
    """Deterministic integer hash; x is a uint64 scalar or array."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def hash01(x):
    """Map integers to deterministic floats in [0, 1)."""
    return splitmix64(x).astype(np.float64) / 2.0**64


def _bark_amplitude(u):
    """Bimodal bark contrast: smooth trunks stay below sensor noise, rough
    ones sit clearly above it. The gap between the modes keeps weak, barely
    resolvable texture from forming a third appearance class."""
    u = np.asarray(u, dtype=np.float64)
    smooth = 0.004 * (u / 0.55)
    rough = 0.05 + 0.25 * ((u - 0.55) / 0.45) ** 2
    return np.where(u < 0.55, smooth, rough)


@dataclass(frozen=True)
class VehicleState:
    """Planar kinematic state; yaw normalized to (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    speed: float = 0.0
    time: float = 0.0

    @property
    def position(self):
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera. horizontal_fov in radians; mount is 'forward'
    (level, looking along vehicle yaw) or 'downward'."""

    width: int = 320
    height: int = 240
    horizontal_fov: float = math.radians(75.0)
    mount: str = "forward"
    altitude: float = 2.0

    @property
    def focal_px(self) -> float:
        return (self.width / 2.0) / math.tan(self.horizontal_fov / 2.0)

    @classmethod
    def from_focal(cls, width, height, focal_px, **kw):
        fov = 2.0 * math.atan((width / 2.0) / focal_px)
        return cls(width=width, height=height, horizontal_fov=fov, **kw)


@dataclass
class Frame:
    """One rendered grayscale frame plus its ground truth.

    pixels: (H, W) intensities in [0, 1]. true_depth: (H, W) ray depths in
    meters, in (0, d_max]. camera_pose: (x, y, yaw) the frame was rendered
    from. Pixels outside every tree carry depth d_max.
    """

    pixels: np.ndarray
    true_depth: np.ndarray
    camera_pose: np.ndarray
    timestamp: float
    camera: CameraModel
    d_max: float = DEFAULT_D_MAX


@dataclass
class ForestScenario:
    """A generated forest: trees is (N, 3) rows of x, y, radius."""

    trees: np.ndarray
    bounds: tuple
    density: float
    seed: int
    goal_direction: tuple = (1.0, 0.0)
    _tex: dict = field(default_factory=dict, repr=False)

    @property
    def n_trees(self) -> int:
        return int(self.trees.shape[0])

    def start_position(self):
        """Conventional start: 2 m inside the low-x edge, mid-height."""
        x0, y0, x1, y1 = self.bounds
        return np.array([x0 + 2.0, 0.5 * (y0 + y1)])

    def texture_params(self):
        """Per-tree procedural texture parameters, derived from the seed.

        Returns dict of arrays: albedo, amplitude, freq, freq2, phase,
        phase2, one entry per tree.
        """
        if not self._tex:
            n = self.n_trees
            base = splitmix64(np.uint64(self.seed) * np.uint64(0x9E3779B1))
            ids = np.arange(n, dtype=np.uint64) + base
            # Bark brightness clusters around the scene's atmospheric level:
            # everything shares one illuminant, so unlit trunks sit near the
            # veiling brightness rather than spanning an arbitrary range.
            self._tex = {
                "albedo": np.clip(self.haze_level
                                  + 0.14 * (hash01(ids) - 0.5), 0.05, 0.95),
                "amplitude": _bark_amplitude(hash01(ids + np.uint64(1))),
                "freq": 0.5 + 5.5 * hash01(ids + np.uint64(2)),
                "freq2": 1.5 + 6.5 * hash01(ids + np.uint64(3)),
                "phase": hash01(ids + np.uint64(4)),
                "phase2": hash01(ids + np.uint64(5)),
            }
        return self._tex

    @property
    def haze_level(self) -> float:
        """Scene-wide brightness that hazed surfaces and open sky fade to.

        Varies per scenario so background brightness is not a fixed
        constant an estimator could anchor on.
        """
        u = hash01(np.array([self.seed * 0x9E3779B1 + 0x5A], dtype=np.uint64))
        return float(0.46 + 0.22 * u[0])

    def save(self, path):
        save_scenario(self, path)


def generate_scenario(density, bounds, seed, radius_range=(0.05, 0.5),
                      clear_radius=2.0, goal_direction=(1.0, 0.0),
                      attempts_per_tree=200):
    """Place trees by dart-throwing Poisson disk sampling.

    Targets density * area trees; raises ValueError if fewer than 90% of the
    target can be placed (density infeasible for the bounds and radii). No
    two tree centers end up closer than the sum of their radii, and a disk
    of clear_radius around the conventional start position stays empty.
    Deterministic for a given seed.
    """
    x0, y0, x1, y1 = bounds
    if x1 <= x0 or y1 <= y0:
        raise ValueError("degenerate bounds")
    area = (x1 - x0) * (y1 - y0)
    target = int(round(density * area))
    rng = np.random.default_rng(seed)
    start = np.array([x0 + 2.0, 0.5 * (y0 + y1)])

    xs = np.empty(target)
    ys = np.empty(target)
    rs = np.empty(target)
    placed = 0
    budget = attempts_per_tree * max(target, 1)
    while placed < target and budget > 0:
        budget -= 1
        x = rng.uniform(x0, x1)
        y = rng.uniform(y0, y1)
        r = rng.uniform(radius_range[0], radius_range[1])
        if (x - start[0]) ** 2 + (y - start[1]) ** 2 <= (clear_radius + r) ** 2:
            continue
        if placed:
            d2 = (xs[:placed] - x) ** 2 + (ys[:placed] - y) ** 2
            if np.any(d2 <= (rs[:placed] + r) ** 2):
                continue
        xs[placed] = x
        ys[placed] = y
        rs[placed] = r
        placed += 1
    if placed < math.ceil(0.9 * target):
        raise ValueError(
            f"density {density:g} infeasible for bounds {bounds}: placed "
            f"{placed} of {target} trees")
    trees = np.column_stack([xs[:placed], ys[:placed], rs[:placed]])
    return ForestScenario(trees=trees, bounds=tuple(bounds), density=density,
                          seed=seed, goal_direction=tuple(goal_direction))


def save_scenario(scenario, path):
    lines = ["# rhnav forest scenario v1"]
    lines.append("bounds " + " ".join(repr(float(v)) for v in scenario.bounds))
    lines.append(f"density {scenario.density!r}")
    lines.append(f"seed {scenario.seed}")
    lines.append("goal " + " ".join(repr(float(v)) for v in scenario.goal_direction))
    for x, y, r in scenario.trees:
        lines.append(f"tree {x!r} {y!r} {r!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_scenario(path):
    bounds = None
    density = None
    seed = 0
    goal = (1.0, 0.0)
    trees = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag, rest = parts[0], parts[1:]
            if tag == "bounds":
                bounds = tuple(float(v) for v in rest)
            elif tag == "density":
                density = float(rest[0])
            elif tag == "seed":
                seed = int(rest[0])
            elif tag == "goal":
                goal = (float(rest[0]), float(rest[1]))
            elif tag == "tree":
                trees.append([float(v) for v in rest])
            else:
                raise ValueError(f"unknown scenario record: {tag}")
    if bounds is None or density is None:
        raise ValueError("scenario file missing bounds or density")
    arr = np.array(trees if trees else np.empty((0, 3)))
    return ForestScenario(trees=arr.reshape(-1, 3), bounds=bounds,
                          density=density, seed=seed, goal_direction=goal)


_PIXEL_NOISE_CACHE = {}


def _pixel_noise(w, h, seed, scale=0.035):
    key = (w, h, seed)
    out = _PIXEL_NOISE_CACHE.get(key)
    if out is None:
        idx = np.arange(h * w, dtype=np.uint64) + splitmix64(np.uint64(seed) + np.uint64(77))
        out = (hash01(idx).reshape(h, w) - 0.5) * 2.0 * scale
        if len(_PIXEL_NOISE_CACHE) > 8:
            _PIXEL_NOISE_CACHE.clear()
        _PIXEL_NOISE_CACHE[key] = out
    return out


def render(scenario, camera_pose, camera, d_max=DEFAULT_D_MAX, timestamp=0.0):
    """Render one forward-camera frame from camera_pose = (x, y, yaw).

    Depth is the nearest ray/cylinder hit per pixel, capped at d_max; pixels
    whose column misses every tree get depth d_max and background shading.
    A pose outside the scenario bounds sees an empty world (all d_max).
    """
    if camera.mount != "forward":
        raise ValueError("render expects a forward-mounted camera")
    px, py, yaw = (float(camera_pose[0]), float(camera_pose[1]),
                   float(camera_pose[2]))
    w, h = camera.width, camera.height
    f = camera.focal_px
    x_px = (np.arange(w) + 0.5) - w / 2.0
    y_px = (np.arange(h) + 0.5) - h / 2.0

    x0, y0, x1, y1 = scenario.bounds
    inside = (x0 <= px <= x1) and (y0 <= py <= y1)
    if inside and scenario.n_trees:
        trees = scenario.trees
        # Cull trees that cannot be hit within d_max.
        d2 = (trees[:, 0] - px) ** 2 + (trees[:, 1] - py) ** 2
        keep = np.flatnonzero(d2 <= (d_max * 1.05 + trees[:, 2]) ** 2)
        dist, kidx, cos_inc = kernels.render_columns(
            px, py, yaw, f, x_px, np.ascontiguousarray(trees[keep]))
        idx = np.where(kidx >= 0, keep[np.clip(kidx, 0, None)], -1)
    else:
        dist = np.full(w, np.inf)
        idx = np.full(w, -1, dtype=np.int64)
        cos_inc = np.zeros(w)

    hor = np.sqrt(f * f + x_px * x_px)
    full = np.sqrt(hor[None, :] ** 2 + y_px[:, None] ** 2)
    sec = full / hor[None, :]
    depth = np.where(np.isfinite(dist)[None, :], dist[None, :] * sec, d_max)
    np.clip(depth, 1e-3, d_max, out=depth)

    pixels = _shade(scenario, dist, idx, cos_inc, depth, x_px, y_px, hor,
                    camera.altitude, d_max, (px, py, yaw), f, timestamp)
    return Frame(pixels=pixels, true_depth=depth,
                 camera_pose=np.array([px, py, yaw]), timestamp=timestamp,
                 camera=camera, d_max=d_max)


def _ground_clutter(px, py, yaw, x_px, y_px, hor, altitude, seed, d_max, f):
    """World-anchored ground mottling for below-horizon pixels, (H, W)."""
    h, w = len(y_px), len(x_px)
    out = np.zeros((h, w))
    below = np.flatnonzero(y_px > 0.5)
    if below.size == 0:
        return out
    fx, fy = math.cos(yaw), math.sin(yaw)
    rx, ry = math.sin(yaw), -math.cos(yaw)
    reach = np.minimum(altitude / y_px[below], 0.6)[:, None]
    gx = px + reach * (f * fx + x_px[None, :] * rx)
    gy = py + reach * (f * fy + x_px[None, :] * ry)
    rng_s = splitmix64(np.uint64(seed) + np.uint64(0xA5A5))
    mot = np.zeros_like(gx)
    for cell, amp in ((0.35, 0.06), (1.3, 0.05)):
        qx = np.floor(gx / cell).astype(np.int64).astype(np.uint64)
        qy = np.floor(gy / cell).astype(np.int64).astype(np.uint64)
        keys = qx * np.uint64(0x9E3779B97F4A7C15) + qy * np.uint64(0xC2B2AE3D) \
            + rng_s
        mot += (hash01(keys) - 0.5) * 2.0 * amp
    # distant ground washes into haze like everything else
    ray_len = reach * np.sqrt(hor[None, :] ** 2 + y_px[below][:, None] ** 2)
    fade = 1.0 - np.clip(ray_len / d_max, 0.0, 1.0) ** 2.2
    out[below] = mot * fade
    return out


def _canopy_clutter(yaw, x_px, y_px, f, seed):
    """Bearing-anchored far-canopy streaks for above-horizon pixels, (H, W)."""
    h, w = len(y_px), len(x_px)
    out = np.zeros((h, w))
    above = np.flatnonzero(y_px <= 0.5)
    if above.size == 0:
        return out
    az = yaw + np.arctan2(x_px, f)
    el = np.arctan2(-y_px[above], f)
    rng_s = splitmix64(np.uint64(seed) + np.uint64(0xBEEF))
    mot = np.zeros((above.size, w))
    for cell, amp in ((0.015, 0.035), (0.06, 0.030)):
        qa = np.floor(az / cell).astype(np.int64).astype(np.uint64)
        qe = np.floor(el / cell).astype(np.int64).astype(np.uint64)
        keys = qa[None, :] * np.uint64(0x9E3779B97F4A7C15) \
            + qe[:, None] * np.uint64(0xC2B2AE3D) + rng_s
        mot += (hash01(keys) - 0.5) * 2.0 * amp
    # Coarse gaps in the canopy: broad featureless sky holes between leaf
    # clusters, so not every above-horizon patch carries texture.
    gcell = 0.35
    qa = np.floor(az / gcell).astype(np.int64).astype(np.uint64)
    qe = np.floor(el / gcell).astype(np.int64).astype(np.uint64)
    gkeys = qa[None, :] * np.uint64(0x9E3779B97F4A7C15) \
        + qe[:, None] * np.uint64(0xC2B2AE3D) \
        + splitmix64(rng_s + np.uint64(0x51EE7))
    gate = np.clip((hash01(gkeys) - 0.12) / 0.25, 0.0, 1.0)
    out[above] = mot * gate
    return out


def _shade(scenario, dist, idx, cos_inc, depth, x_px, y_px, hor, altitude,
           d_max, cam_pose, focal, timestamp=0.0):
    h = len(y_px)
    w = len(x_px)
    # Flat base at the haze asymptote: any brightness ramp here would be a
    # stable signature separating open background from blank foreground.
    hz = scenario.haze_level
    img = np.full((h, w), hz)
    px, py, yaw = cam_pose
    img += _ground_clutter(px, py, yaw, x_px, y_px, hor, altitude,
                           scenario.seed, d_max, focal)
    img += _canopy_clutter(yaw, x_px, y_px, focal, scenario.seed)

    hit_cols = np.flatnonzero(np.isfinite(dist))
    if hit_cols.size:
        tex = scenario.texture_params()
        ti = idx[hit_cols]
        dc = dist[hit_cols]
        xs = x_px[hit_cols]
        hs = hor[hit_cols]
        # World height of each hit point; bark bands live in world space so
        # nearer trunks show coarser image-space banding.
        z = altitude - (dc[None, :] * y_px[:, None]) / hs[None, :]
        band = (np.sin(2 * np.pi * (tex["freq"][ti] * z + tex["phase"][ti]))
                + 0.6 * np.sin(2 * np.pi * (tex["freq2"][ti] * z + tex["phase2"][ti])))
        # 2D bark detail anchored to the trunk surface (height x azimuthal
        # arc), so textured bark shows corners, not just 1D bands.
        fx, fy = math.cos(yaw), math.sin(yaw)
        rx, ry = math.sin(yaw), -math.cos(yaw)
        hx = px + dc * (focal * fx + xs * rx) / hs
        hy = py + dc * (focal * fy + xs * ry) / hs
        trees = scenario.trees
        phi = np.arctan2(hy - trees[ti, 1], hx - trees[ti, 0])
        arc = phi * np.maximum(trees[ti, 2], 0.05)
        cell = 0.06
        qz = np.floor(z / cell).astype(np.int64).astype(np.uint64)
        qa = np.floor(arc / cell).astype(np.int64).astype(np.uint64)[None, :]
        tid = ti.astype(np.uint64)[None, :] * np.uint64(0x94D049BB133111EB)
        keys = qz * np.uint64(0x9E3779B97F4A7C15) \
            + qa * np.uint64(0xC2B2AE3D) + tid \
            + splitmix64(np.uint64(scenario.seed) + np.uint64(0x7EE5))
        grain = (hash01(keys) - 0.5) * 2.0
        base = (tex["albedo"][ti][None, :]
                + tex["amplitude"][ti][None, :] * (band + 0.9 * grain)
                + 0.08 * cos_inc[hit_cols][None, :])
        haze = np.clip(depth[:, hit_cols] / d_max, 0.0, 1.0) ** 2.2
        img[:, hit_cols] = base * (1.0 - haze) + hz * haze

    # Sensor noise redraws on a ~1.5 s clock: slow enough that low-texture
    # appearance (and any estimate built on it) stays coherent across a
    # short memory window, fast enough that no fixed per-position pattern
    # survives for a regressor to key on.
    t_key = (int(scenario.seed) * 0x9E3779B97F4A7C15
             + int(timestamp / 1.5)) & 0xFFFFFFFFFFFFFFFF
    img += _pixel_noise(w, h, int(splitmix64(np.uint64(t_key))))
    np.clip(img, 0.0, 1.0, out=img)
    return img


def step_vehicle(state, forward_speed, yaw_rate, dt):
    """Advance the unicycle exactly along a constant-curvature arc.

    Closed-form integration, so composing two half steps equals one full
    step up to float rounding. Requires 0 < dt <= 0.1.
    """
    if not (0.0 < dt <= 0.1):
        raise ValueError(f"dt must be in (0, 0.1], got {dt}")
    v = max(0.0, float(forward_speed))
    om = float(yaw_rate)
    yaw0 = state.yaw
    if abs(om) < 1e-12:
        x = state.x + v * dt * math.cos(yaw0)
        y = state.y + v * dt * math.sin(yaw0)
        yaw1 = yaw0
    else:
        radius = v / om
        yaw1 = yaw0 + om * dt
        x = state.x + radius * (math.sin(yaw1) - math.sin(yaw0))
        y = state.y - radius * (math.cos(yaw1) - math.cos(yaw0))
    return VehicleState(x=x, y=y, yaw=float(wrap_angle(yaw1)), speed=v,
                        time=state.time + dt)


def check_collision(scenario, position, robot_radius):
    """True when any tree disk strictly overlaps the robot disk.

    Tangency (distance exactly equal to the radius sum) is not a collision.
    position may be a VehicleState or an (x, y) pair.
    """
    if isinstance(position, VehicleState):
        x, y = position.x, position.y
    else:
        x, y = float(position[0]), float(position[1])
    if scenario.n_trees == 0:
        return False
    t = scenario.trees
    d2 = (t[:, 0] - x) ** 2 + (t[:, 1] - y) ** 2
    return bool(np.any(d2 < (t[:, 2] + robot_radius) ** 2))


def nearest_tree(scenario, position):
    """Index and center distance of the tree nearest to position."""
    t = scenario.trees
    if t.shape[0] == 0:
        return -1, np.inf
    d2 = (t[:, 0] - position[0]) ** 2 + (t[:, 1] - position[1]) ** 2
    i = int(np.argmin(d2))
    return i, float(np.sqrt(d2[i]))
