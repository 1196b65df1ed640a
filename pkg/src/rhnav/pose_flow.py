"""Optical-flow based relative pose estimation.

A downward camera watches the ground plane; flow on a sparse pixel grid is
the analytic projective motion field (translation plus rotation) corrupted
with pixel noise and occasional outliers. The estimator unrotates the field
with gyro readings, rejects outliers around the per-axis median, gates on
the surviving spread, and converts mean flow to body velocity. Velocity and
gyro yaw integrate to a drifting planar pose estimate.

This module also hosts the forward-camera analytic flow generator used by
the feature extractor: per-pixel image motion between two rendered poses,
derived from the frame's true depth.

Conventions: body frame is x forward, y left, z up. The downward camera has
x along body x, y along body right, z down; image u grows along camera x,
v along camera y.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .sim_world import wrap_angle


@dataclass(frozen=True)
class FlowNoise:
    """Per-point pixel noise, outlier probability, and outlier magnitude."""

    sigma_px: float = 0.2
    p_outlier: float = 0.05
    outlier_mag_px: float = 10.0


@dataclass(frozen=True)
class FlowEstimatorCfg:
    """Outlier rejection and validity gating for velocity estimation.

    sigma_gate_px defaults to 3x the expected per-point noise; reject_px to
    max(4 sigma, 0.5). decay is the per-update velocity decay applied while
    the gate holds the last estimate.
    """

    sigma_px: float = 0.2
    sigma_gate_px: float = None
    reject_px: float = None
    max_reject_fraction: float = 0.25
    decay: float = 0.9

    @property
    def gate(self) -> float:
        if self.sigma_gate_px is not None:
            return self.sigma_gate_px
        return 3.0 * self.sigma_px

    @property
    def reject(self) -> float:
        if self.reject_px is not None:
            return self.reject_px
        return max(4.0 * self.sigma_px, 0.5)


@dataclass
class FlowSample:
    """One grid of flow vectors in px/frame plus the grid geometry."""

    t: float
    vectors: np.ndarray  # (G, G, 2)
    u: np.ndarray        # (G, G) pixel offsets from the optical axis
    v: np.ndarray
    rate: float


@dataclass
class ImuReading:
    """Body-frame angular velocity sample (rad/s), noisy and biased."""

    t: float
    omega: np.ndarray  # (3,)


@dataclass
class PoseEstimate:
    """Planar pose integrated from flow velocities and gyro yaw."""

    x: float
    y: float
    yaw: float
    vx: float
    vy: float
    valid: bool
    t: float

    @property
    def position(self):
        return np.array([self.x, self.y])

    @property
    def pose(self):
        return np.array([self.x, self.y, self.yaw])


def _body_to_cam(vec3):
    """Body (x fwd, y left, z up) to downward-camera (x fwd, y right, z down)."""
    return np.array([vec3[0], -vec3[1], -vec3[2]])


_GRID_CACHE = {}


def flow_grid(camera, n_grid=8, span_fraction=0.35):
    """Pixel-offset grid (u, v) for the flow tracker, centered on the axis."""
    key = (camera.width, camera.height, n_grid, span_fraction)
    got = _GRID_CACHE.get(key)
    if got is None:
        half = span_fraction * min(camera.width, camera.height) / 2.0
        line = np.linspace(-half, half, n_grid)
        u, v = np.meshgrid(line, line, indexing="ij")
        u.setflags(write=False)
        v.setflags(write=False)
        got = _GRID_CACHE[key] = (u, v)
    return got


def rotation_flow(u, v, f, omega_cam, rate):
    """Rotational component of the motion field, px/frame."""
    wx, wy, wz = omega_cam
    du = (u * v / f) * wx - (f + u * u / f) * wy + v * wz
    dv = (f + v * v / f) * wx - (u * v / f) * wy - u * wz
    return np.stack([du, dv], axis=-1) / rate


def translation_flow(u, v, f, v_cam, depth, rate):
    """Translational component for a fronto-parallel plane at `depth`."""
    vx, vy, vz = v_cam
    du = (-f * vx + u * vz) / depth
    dv = (-f * vy + v * vz) / depth
    return np.stack([du, dv], axis=-1) / rate


def simulate_flow(v_body, omega_body, altitude, camera, noise=FlowNoise(),
                  rng=None, rate=100.0, n_grid=8, t=0.0):
    """Synthesize one downward-camera flow grid for the true motion.

    v_body is (vx, vy) in m/s, omega_body (3,) in rad/s. Gaussian pixel
    noise lands on every vector; with probability p_outlier a vector is
    replaced by a uniform draw of magnitude up to outlier_mag_px.
    """
    if altitude <= 0:
        raise ValueError("altitude must be positive")
    u, v = flow_grid(camera, n_grid)
    f = camera.focal_px
    v_cam = _body_to_cam(np.array([v_body[0], v_body[1], 0.0]))
    w_cam = _body_to_cam(np.asarray(omega_body, dtype=np.float64))
    field = (translation_flow(u, v, f, v_cam, altitude, rate)
             + rotation_flow(u, v, f, w_cam, rate))
    if rng is not None:
        field = field + rng.normal(0.0, noise.sigma_px, field.shape)
        out = rng.random(u.shape) < noise.p_outlier
        repl = rng.uniform(-noise.outlier_mag_px, noise.outlier_mag_px,
                           field.shape)
        field = np.where(out[..., None], repl, field)
    return FlowSample(t=t, vectors=field, u=u, v=v, rate=rate)


def unrotate(sample, imu_omega_body, camera):
    """Subtract the gyro-predicted rotational field from a flow sample."""
    w_cam = _body_to_cam(np.asarray(imu_omega_body, dtype=np.float64))
    rot = rotation_flow(sample.u, sample.v, camera.focal_px, w_cam,
                        sample.rate)
    return FlowSample(t=sample.t, vectors=sample.vectors - rot, u=sample.u,
                      v=sample.v, rate=sample.rate)


def estimate_velocity(sample, sonar_altitude, prev_velocity, camera,
                      cfg=FlowEstimatorCfg()):
    """Body-frame velocity from an unrotated flow sample.

    Vectors far from the per-axis median are rejected; if too many are
    rejected or the survivors' spread exceeds the gate, the sample is
    declared invalid and the previous velocity is returned decayed by
    cfg.decay. Otherwise v = -mean_flow * altitude * rate / f, mapped back
    to the body frame. Returns (velocity (2,), valid).
    """
    prev = np.asarray(prev_velocity, dtype=np.float64)
    flat = sample.vectors.reshape(-1, 2)
    med = np.median(flat, axis=0)
    dev = np.abs(flat - med)
    keep = (dev[:, 0] <= cfg.reject) & (dev[:, 1] <= cfg.reject)
    frac_rejected = 1.0 - keep.mean()
    if frac_rejected > cfg.max_reject_fraction:
        return cfg.decay * prev, False
    kept = flat[keep]
    if np.any(kept.std(axis=0) > cfg.gate):
        return cfg.decay * prev, False
    mean_flow = kept.mean(axis=0)
    f = camera.focal_px
    v_cam = -mean_flow * sonar_altitude * sample.rate / f
    v_body = np.array([v_cam[0], -v_cam[1]])
    return v_body, True


class PoseIntegrator:
    """Euler integration of flow velocities and gyro yaw into a planar pose.

    The estimate lives in the odometry frame anchored at the initial pose;
    it is never resynchronized to ground truth. Invalid velocity samples
    keep integrating the decayed velocity and extend the invalid timer.
    """

    def __init__(self, x=0.0, y=0.0, yaw=0.0, t=0.0):
        self.x = float(x)
        self.y = float(y)
        self.yaw = float(yaw)
        self.t = float(t)
        self.vx = 0.0
        self.vy = 0.0
        self.valid = True
        self.invalid_since = None

    def advance_yaw(self, yaw_rate, dt):
        self.yaw = float(wrap_angle(self.yaw + yaw_rate * dt))

    def advance_velocity(self, v_body, valid, dt, t=None):
        vx, vy = float(v_body[0]), float(v_body[1])
        c = math.cos(self.yaw)
        s = math.sin(self.yaw)
        self.x += (c * vx - s * vy) * dt
        self.y += (s * vx + c * vy) * dt
        self.vx = vx
        self.vy = vy
        if t is not None:
            self.t = t
        else:
            self.t += dt
        if valid:
            self.valid = True
            self.invalid_since = None
        else:
            self.valid = False
            if self.invalid_since is None:
                self.invalid_since = self.t

    def invalid_elapsed(self, now):
        if self.invalid_since is None:
            return 0.0
        return max(0.0, now - self.invalid_since)

    def estimate(self):
        return PoseEstimate(x=self.x, y=self.y, yaw=self.yaw, vx=self.vx,
                            vy=self.vy, valid=self.valid, t=self.t)


def integrate_pose(stream, dt, x0=0.0, y0=0.0, yaw0=0.0):
    """Fold a stream of (v_body, yaw_rate, valid) tuples into a pose.

    Convenience wrapper over PoseIntegrator for fixed-rate streams.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    integ = PoseIntegrator(x=x0, y=y0, yaw=yaw0)
    for v_body, yaw_rate, valid in stream:
        integ.advance_yaw(yaw_rate, dt)
        integ.advance_velocity(v_body, valid, dt)
    return integ.estimate()


class ImuSim:
    """Gyro with constant per-axis bias plus white noise."""

    def __init__(self, bias=(0.01, 0.01, 0.01), noise_std=0.005):
        self.bias = np.asarray(bias, dtype=np.float64)
        self.noise_std = float(noise_std)

    def sample(self, true_omega_body, t, rng=None):
        om = np.asarray(true_omega_body, dtype=np.float64) + self.bias
        if rng is not None and self.noise_std > 0:
            om = om + rng.normal(0.0, self.noise_std, 3)
        return ImuReading(t=t, omega=om)


# ---------------------------------------------------------------------------
# Forward-camera scene flow for the feature extractor.

# A matcher only measures flow where its support window is trackable in
# both directions (the smaller structure-tensor eigenvalue over the window
# clears a floor); flat regions and bare straight edges read as "no
# measurement" and yield zero flow.
FLOW_MIN_EIG = 1.5e-3
FLOW_TEXTURE_WINDOW = 5
FLOW_DEPTH_RATIO = 0.35


def _continuity_mask(depth, window=FLOW_TEXTURE_WINDOW,
                     max_ratio=FLOW_DEPTH_RATIO):
    """True where the matching window sits on one surface.

    A window that straddles a depth discontinuity mixes two image motions
    (foreground silhouette and background sliding behind it) and a matcher
    cannot lock onto either, so those pixels are dropped.
    """
    hi = ndimage.maximum_filter(depth, size=window)
    lo = ndimage.minimum_filter(depth, size=window)
    return (hi - lo) <= max_ratio * depth


def _texture_mask(pixels, window=FLOW_TEXTURE_WINDOW, min_eig=FLOW_MIN_EIG):
    gy, gx = np.gradient(pixels)
    jxx = ndimage.uniform_filter(gx * gx, size=window)
    jyy = ndimage.uniform_filter(gy * gy, size=window)
    jxy = ndimage.uniform_filter(gx * gy, size=window)
    half_tr = 0.5 * (jxx + jyy)
    rad = np.sqrt(np.maximum(0.25 * (jxx - jyy) ** 2 + jxy * jxy, 0.0))
    return (half_tr - rad) >= min_eig


def forward_scene_flow(frame, prev_frame, sigma_px=0.5, seed=0):
    """Per-pixel image motion between two rendered poses, matcher-style.

    For every pixel of `frame` the world point at its true ray depth is
    projected into `prev_frame`'s camera; the flow is current minus
    previous pixel position, plus Gaussian pixel noise. Points that fall
    behind the previous camera, pixels whose local window is too flat for
    a matcher to lock onto, and pixels whose window straddles a depth
    discontinuity get zero flow. Returns (H, W, 2).
    """
    cam = frame.camera
    h, w = frame.true_depth.shape
    f = cam.focal_px
    x_px = (np.arange(w) + 0.5) - w / 2.0
    y_px = (np.arange(h) + 0.5) - h / 2.0
    xg = np.broadcast_to(x_px[None, :], (h, w))
    yg = np.broadcast_to(y_px[:, None], (h, w))

    px, py, yaw = frame.camera_pose
    qx, qy, qyaw = prev_frame.camera_pose
    full = np.sqrt(f * f + xg * xg + yg * yg)
    t = frame.true_depth
    # World point of each pixel (camera at altitude; z relative to it).
    fx, fy = math.cos(yaw), math.sin(yaw)
    rx, ry = math.sin(yaw), -math.cos(yaw)
    wx = px + t * (f * fx + xg * rx) / full
    wy = py + t * (f * fy + xg * ry) / full
    wz = t * (-yg) / full

    gx, gy = math.cos(qyaw), math.sin(qyaw)
    hx, hy = math.sin(qyaw), -math.cos(qyaw)
    relx = wx - qx
    rely = wy - qy
    fwd = relx * gx + rely * gy
    rgt = relx * hx + rely * hy
    ok = fwd > 1e-6
    safe = np.where(ok, fwd, 1.0)
    u_prev = f * rgt / safe
    v_prev = -f * wz / safe
    flow = np.stack([xg - u_prev, yg - v_prev], axis=-1)
    flow[~ok] = 0.0
    if sigma_px > 0:
        rng = np.random.default_rng(seed)
        flow = flow + rng.normal(0.0, sigma_px, flow.shape)
    flow[~_texture_mask(frame.pixels)] = 0.0
    flow[~_continuity_mask(frame.true_depth)] = 0.0
    return flow
