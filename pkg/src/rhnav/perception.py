"""Per-patch depth prediction and its expansion into obstacle points.

A frame becomes a DepthGrid (one depth per patch). Depending on the mode
the grid expands into one interpretation (the point estimate) or three
(near / point / far via the error LUT), and each interpretation projects to
weighted 2D obstacle points for the costmap: one point per patch along the
patch-center ray, skipping patches that look open (depth beyond
OPEN_FRACTION of d_max).
"""

from dataclasses import dataclass, replace

import numpy as np

from .features import PatchGrid, extract_patch_features
from .learn import apply_lut

OPEN_FRACTION = 0.95
PREDICT_CLAMP_MIN = 0.5

MODE_SINGLE = "single"
MODE_MULTIPLE = "multiple"
MODE_ORACLE = "oracle"


@dataclass
class DepthGrid:
    """Per-patch depths (rows, cols) for one frame, in (0, d_max]."""

    depth: np.ndarray
    patch_size: int
    timestamp: float
    camera_pose: np.ndarray
    d_max: float

    @property
    def rows(self) -> int:
        return int(self.depth.shape[0])

    @property
    def cols(self) -> int:
        return int(self.depth.shape[1])


@dataclass
class InterpretationSet:
    """Depth grids for one frame plus their tags.

    Single/oracle modes carry ('point',); multiple carries
    ('near', 'point', 'far') with near <= point <= far elementwise up to
    the LUT's 0.5 m bin rounding.
    """

    mode: str
    grids: tuple
    tags: tuple

    def __post_init__(self):
        if len(self.grids) != len(self.tags):
            raise ValueError("grid/tag count mismatch")


def predict_depth(frame, prev_frame, model, budget_plan=None, flow_seed=None):
    """Predict a DepthGrid from one frame with a trained DepthModel.

    When a budget plan is given its group set must equal the model's
    training layout; predictions are clamped into [0.5, d_max].
    """
    groups = model.group_names
    if budget_plan is not None:
        if tuple(budget_plan.group_names) != tuple(groups):
            raise ValueError(
                f"budget plan groups {budget_plan.group_names} do not match "
                f"model layout {groups}")
    grid = PatchGrid.for_frame(frame.pixels.shape[1], frame.pixels.shape[0],
                               model.patch_size)
    fs = extract_patch_features(frame, prev_frame, grid, groups,
                                flow_sigma_px=model.flow_sigma_px,
                                flow_seed=flow_seed)
    pred = model.regressor.predict(fs.values)
    pred = np.clip(pred, PREDICT_CLAMP_MIN, model.d_max)
    return DepthGrid(depth=pred.reshape(grid.rows, grid.cols),
                     patch_size=model.patch_size, timestamp=frame.timestamp,
                     camera_pose=frame.camera_pose.copy(), d_max=model.d_max)


def oracle_predict(frame, patch_size=16, noise_sigma=0.0, rng=None):
    """Ground-truth DepthGrid: min true ray depth within each patch.

    Optional multiplicative log-normal noise (noise_sigma in log space)
    models an imperfect sensor while keeping depths positive.
    """
    grid = PatchGrid.for_frame(frame.pixels.shape[1], frame.pixels.shape[0],
                               patch_size)
    p, r, c = patch_size, grid.rows, grid.cols
    d = frame.true_depth[:r * p, :c * p].reshape(r, p, c, p).min(axis=(1, 3))
    if noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        d = d * np.exp(rng.normal(0.0, noise_sigma, d.shape))
        d = np.clip(d, 1e-3, frame.d_max)
    return DepthGrid(depth=d, patch_size=patch_size,
                     timestamp=frame.timestamp,
                     camera_pose=frame.camera_pose.copy(), d_max=frame.d_max)


def expand_interpretations(grid, lut, mode):
    """Expand a point-estimate grid per the runtime mode."""
    if mode in (MODE_SINGLE, MODE_ORACLE):
        return InterpretationSet(mode=mode, grids=(grid,), tags=("point",))
    if mode == MODE_MULTIPLE:
        if lut is None:
            raise ValueError("multiple-interpretation mode needs an error LUT")
        near, far = apply_lut(lut, grid)
        return InterpretationSet(mode=mode, grids=(near, grid, far),
                                 tags=("near", "point", "far"))
    raise ValueError(f"unknown mode: {mode}")


def _patch_centers_px(grid_shape, patch_size, width, height):
    rows, cols = grid_shape
    cx = (np.arange(cols) + 0.5) * patch_size - width / 2.0
    cy = (np.arange(rows) + 0.5) * patch_size - height / 2.0
    return cx, cy


def project_to_points(depth_grid, camera, pose, stride=1):
    """Project non-open patches to weighted 2D world points.

    pose is the (x, y, yaw) the points should be anchored at, normally the
    odometry-frame pose of the camera when the frame was taken. Each point
    sits along its patch-center ray at the predicted ray depth, projected
    onto the ground plane. Weights are the patch solid angle normalized so
    the central patch weighs 1. Returns (points (M, 2), weights (M,)).
    """
    rows, cols = depth_grid.depth.shape
    p = depth_grid.patch_size
    f = camera.focal_px
    width, height = camera.width, camera.height
    cx, cy = _patch_centers_px((rows, cols), p, width, height)

    rsel = np.arange(0, rows, stride)
    csel = np.arange(0, cols, stride)
    d = depth_grid.depth[np.ix_(rsel, csel)]
    keep = d < OPEN_FRACTION * depth_grid.d_max
    if not np.any(keep):
        return np.empty((0, 2)), np.empty(0)

    xg = np.broadcast_to(cx[csel][None, :], d.shape)[keep]
    yg = np.broadcast_to(cy[rsel][:, None], d.shape)[keep]
    t = d[keep]
    full = np.sqrt(f * f + xg * xg + yg * yg)
    x0, y0, yaw = float(pose[0]), float(pose[1]), float(pose[2])
    fx, fy = np.cos(yaw), np.sin(yaw)
    rx, ry = np.sin(yaw), -np.cos(yaw)
    wx = x0 + t * (f * fx + xg * rx) / full
    wy = y0 + t * (f * fy + xg * ry) / full
    weights = (f / full) ** 3
    return np.column_stack([wx, wy]), weights


def patch_point_3d(depth_grid, camera, pose, row, col):
    """3D world point of one patch's center ray at its stored depth."""
    f = camera.focal_px
    cx, cy = _patch_centers_px(depth_grid.depth.shape, depth_grid.patch_size,
                               camera.width, camera.height)
    xg, yg = cx[col], cy[row]
    t = depth_grid.depth[row, col]
    full = np.sqrt(f * f + xg * xg + yg * yg)
    x0, y0, yaw = float(pose[0]), float(pose[1]), float(pose[2])
    fx, fy = np.cos(yaw), np.sin(yaw)
    rx, ry = np.sin(yaw), -np.cos(yaw)
    return np.array([
        x0 + t * (f * fx + xg * rx) / full,
        y0 + t * (f * fy + xg * ry) / full,
        camera.altitude + t * (-yg) / full,
    ])


def patch_index_of(point3d, camera, pose, patch_size):
    """Back-project a 3D world point to the (row, col) patch it lands in."""
    x0, y0, yaw = float(pose[0]), float(pose[1]), float(pose[2])
    f = camera.focal_px
    rel = np.array([point3d[0] - x0, point3d[1] - y0,
                    point3d[2] - camera.altitude])
    fx, fy = np.cos(yaw), np.sin(yaw)
    rx, ry = np.sin(yaw), -np.cos(yaw)
    fwd = rel[0] * fx + rel[1] * fy
    if fwd <= 0:
        raise ValueError("point is behind the camera")
    rgt = rel[0] * rx + rel[1] * ry
    x_px = f * rgt / fwd
    y_px = -f * rel[2] / fwd
    u = x_px + camera.width / 2.0
    v = y_px + camera.height / 2.0
    return int(v // patch_size), int(u // patch_size)
