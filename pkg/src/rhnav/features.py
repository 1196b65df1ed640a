"""Patch-based image features for monocular depth regression.

The frame is gridded into non-overlapping square patches. Each patch is
described by features of three nested regions: the patch itself, the
same-width full-height column containing it, and the column three patches
wide centered on it (clipped at the frame border). Per region five feature
groups are available:

    flow_stats        mean / min / max measured-flow magnitude       (3)
    radon             top-2 line-integral sums at 12 angles          (24)
    structure_tensor  mean eigenvalues + coherence                   (3)
    laws              mean |response| of the 9 separable 3x3 masks   (9)
    hog               4-cell unsigned orientation histogram, 9 bins  (36)

A feature vector is the concatenation of the enabled groups, each group
contributing its patch, column, and wide-column block in that order. The
layout is identical for every patch and annotated with measured per-group
extraction costs so downstream budgeted selection can drop whole groups.

Whole-frame maps (gradients, filter responses) are computed once and
aggregated per region; the standalone per-region ops (`hog`, `radon`, ...)
apply the same definitions to an isolated region array and are what the
worked examples in the tests exercise.
"""

import time
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels

EPS = 1e-8

GROUP_ORDER = ("flow_stats", "radon", "structure_tensor", "laws", "hog")
GROUP_DIMS = {"flow_stats": 3, "radon": 24, "structure_tensor": 3,
              "laws": 9, "hog": 36}
N_REGIONS = 3
REGION_NAMES = ("patch", "column", "wide")

N_RADON_ANGLES = 12
N_HOG_BINS = 9

_L3 = np.array([1.0, 2.0, 1.0])
_E3 = np.array([-1.0, 0.0, 1.0])
_S3 = np.array([-1.0, 2.0, -1.0])
LAWS_VECTORS = (("L", _L3), ("E", _E3), ("S", _S3))


@dataclass(frozen=True)
class PatchGrid:
    """Non-overlapping square patch layout over a frame."""

    patch_size: int
    rows: int
    cols: int

    @classmethod
    def for_frame(cls, width, height, patch_size=16):
        if patch_size < 2 or patch_size % 2:
            raise ValueError("patch_size must be an even integer >= 2")
        rows = height // patch_size
        cols = width // patch_size
        if rows < 1 or cols < 1:
            raise ValueError("patch_size larger than the frame")
        return cls(patch_size=patch_size, rows=rows, cols=cols)

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class GroupSpan:
    """One group's slice of the feature layout."""

    name: str
    offset: int
    length: int
    cost_ms: float = 0.0


@dataclass
class PatchFeatureSet:
    """Feature matrix for every patch of one frame.

    values is (n_patches, D) in row-major patch order; layout maps groups to
    column spans. flow_valid is False when no previous frame was available
    (the flow block is then zero-filled).
    """

    values: np.ndarray
    layout: tuple
    grid: PatchGrid
    flow_valid: bool = True

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    def group_slice(self, name):
        for span in self.layout:
            if span.name == name:
                return slice(span.offset, span.offset + span.length)
        raise KeyError(name)

    def column_names(self):
        names = []
        for span in self.layout:
            per_region = span.length // N_REGIONS
            for region in REGION_NAMES:
                names.extend(f"{span.name}.{region}.{i}"
                             for i in range(per_region))
        return names


def layout_for(enabled_groups, costs=None):
    """Column layout for the given groups, in canonical order."""
    enabled = [g for g in GROUP_ORDER if g in enabled_groups]
    unknown = set(enabled_groups) - set(GROUP_ORDER)
    if unknown:
        raise ValueError(f"unknown feature groups: {sorted(unknown)}")
    spans = []
    off = 0
    for g in enabled:
        length = N_REGIONS * GROUP_DIMS[g]
        cost = float(costs.get(g, 0.0)) if costs else 0.0
        spans.append(GroupSpan(name=g, offset=off, length=length,
                               cost_ms=cost))
        off += length
    return tuple(spans)


# ---------------------------------------------------------------------------
# Region reductions shared by the batched extractors.

def _reduce_mean(map2d, grid):
    p, r, c = grid.patch_size, grid.rows, grid.cols
    m = map2d[:r * p, :c * p]
    patch = m.reshape(r, p, c, p).mean(axis=(1, 3))
    strip_sum = m.reshape(r * p, c, p).sum(axis=(0, 2))
    col = strip_sum / (r * p * p)
    csum = np.concatenate([[0.0], np.cumsum(strip_sum)])
    j = np.arange(c)
    lo = np.maximum(j - 1, 0)
    hi = np.minimum(j + 2, c)
    wide = (csum[hi] - csum[lo]) / ((hi - lo) * r * p * p)
    return patch, col, wide


def _reduce_extreme(map2d, grid, op):
    p, r, c = grid.patch_size, grid.rows, grid.cols
    m = map2d[:r * p, :c * p]
    patch = op.reduce(m.reshape(r, p, c, p), axis=(1, 3))
    strip = op.reduce(m.reshape(r * p, c, p), axis=(0, 2))
    wide = strip.copy()
    wide[1:] = op(wide[1:], strip[:-1])
    wide[:-1] = op(wide[:-1], strip[1:])
    return patch, strip, wide


# ---------------------------------------------------------------------------
# Radon group.

_RADON_PLAN_CACHE = {}


def _radon_plan(h, w, n_angles):
    key = (h, w, n_angles)
    plan = _RADON_PLAN_CACHE.get(key)
    if plan is None:
        ang = np.arange(n_angles) * (np.pi / n_angles)
        xc = (np.arange(w) + 0.5) - w / 2.0
        yc = (np.arange(h) + 0.5) - h / 2.0
        proj = (np.cos(ang)[:, None, None] * xc[None, None, :]
                + np.sin(ang)[:, None, None] * yc[None, :, None])
        pmin = proj.min(axis=(1, 2), keepdims=True)
        bins = np.floor(proj - pmin).astype(np.int64).reshape(n_angles, h * w)
        nbins = bins.max(axis=1) + 1
        plan = (np.ascontiguousarray(bins), nbins.astype(np.int64))
        _RADON_PLAN_CACHE[key] = plan
    return plan


def _radon_stack(stacked, h, w, n_angles):
    """Top-2 projection sums for mean-removed stacked regions (R, h*w)."""
    bins, nbins = _radon_plan(h, w, n_angles)
    vals = stacked - stacked.mean(axis=1, keepdims=True)
    out = kernels.radon_topk(np.ascontiguousarray(vals), bins, nbins)
    return out.reshape(stacked.shape[0], 2 * n_angles)


def radon(region, n_angles=N_RADON_ANGLES):
    """Top-2 line-integral sums of the mean-removed region per angle.

    Angles span [0, pi); a constant region yields all zeros. Returns a
    (2 * n_angles,) vector ordered angle-major, largest sum first.
    """
    region = np.asarray(region, dtype=np.float64)
    h, w = region.shape
    return _radon_stack(region.reshape(1, h * w), h, w, n_angles)[0]


# ---------------------------------------------------------------------------
# HOG group.

def _orientation_maps(gx, gy):
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    bins = np.minimum((theta / (np.pi / N_HOG_BINS)).astype(np.int64),
                      N_HOG_BINS - 1)
    mag = np.hypot(gx, gy)
    return bins, mag


def _normalize_cells(hists):
    """L2-normalize trailing 9-vectors; zero-norm cells stay zero."""
    norm = np.sqrt((hists * hists).sum(axis=-1, keepdims=True))
    return np.where(norm > EPS, hists / np.maximum(norm, EPS), 0.0)


def hog(region, bins=N_HOG_BINS):
    """Unsigned gradient orientation histogram of one region.

    The region splits into 2x2 cells (so cell sides are half the region,
    never below half a patch width); each cell's histogram over [0, pi) is
    L2-normalized and the four are concatenated row-major. A flat region
    returns all zeros.
    """
    region = np.asarray(region, dtype=np.float64)
    if region.shape[0] < 2 or region.shape[1] < 2:
        raise ValueError("hog needs a region of at least 2x2 pixels")
    gy, gx = np.gradient(region)
    bidx, mag = _orientation_maps(gx, gy)
    h, w = region.shape
    hs, ws = h // 2, w // 2
    out = np.empty((2, 2, bins))
    for qr, rows in enumerate((slice(0, hs), slice(hs, h))):
        for qc, cols in enumerate((slice(0, ws), slice(ws, w))):
            hist = np.bincount(bidx[rows, cols].ravel(),
                               weights=mag[rows, cols].ravel(),
                               minlength=bins)
            out[qr, qc] = hist
    return _normalize_cells(out).ravel()


def _hog_group(img, grid):
    p, r, c = grid.patch_size, grid.rows, grid.cols
    gy, gx = np.gradient(img)
    bidx, mag = _orientation_maps(gx, gy)
    cell = p // 2
    base = kernels.cell_hist(np.ascontiguousarray(bidx),
                             np.ascontiguousarray(mag), cell, N_HOG_BINS)
    hc, wc = base.shape[0], base.shape[1]  # hc = 2r, wc = 2c

    patch = base.reshape(r, 2, c, 2, N_HOG_BINS).transpose(0, 2, 1, 3, 4)
    patch = _normalize_cells(patch).reshape(r, c, 4 * N_HOG_BINS)

    # Row halves of the full-height columns, then per-column cell pairs.
    half = hc // 2
    rowhalf = np.stack([base[:half].sum(axis=0), base[half:].sum(axis=0)])
    col = rowhalf.reshape(2, c, 2, N_HOG_BINS).transpose(1, 0, 2, 3)
    col = _normalize_cells(col).reshape(c, 4 * N_HOG_BINS)

    csum = np.concatenate([np.zeros((2, 1, N_HOG_BINS)),
                           np.cumsum(rowhalf, axis=1)], axis=1)
    j = np.arange(c)
    lo = np.maximum(2 * j - 2, 0)
    hi = np.minimum(2 * j + 4, wc)
    mid = lo + (hi - lo) // 2
    wide = np.empty((c, 2, 2, N_HOG_BINS))
    wide[:, :, 0] = (csum[:, mid] - csum[:, lo]).transpose(1, 0, 2)
    wide[:, :, 1] = (csum[:, hi] - csum[:, mid]).transpose(1, 0, 2)
    wide = _normalize_cells(wide).reshape(c, 4 * N_HOG_BINS)
    return patch, col, wide


# ---------------------------------------------------------------------------
# Structure tensor group.

def _tensor_maps(img, sigma=1.5):
    gy, gx = np.gradient(img)
    jxx = ndimage.gaussian_filter(gx * gx, sigma, mode="nearest")
    jyy = ndimage.gaussian_filter(gy * gy, sigma, mode="nearest")
    jxy = ndimage.gaussian_filter(gx * gy, sigma, mode="nearest")
    half_tr = 0.5 * (jxx + jyy)
    rad = np.sqrt(np.maximum(0.25 * (jxx - jyy) ** 2 + jxy * jxy, 0.0))
    lam1 = half_tr + rad
    lam2 = np.maximum(half_tr - rad, 0.0)
    return lam1, lam2


def _coherence(lam1, lam2):
    return (lam1 - lam2) / (lam1 + lam2 + EPS)


def structure_tensor(region, sigma=1.5):
    """Mean structure-tensor eigenvalues of a region plus their coherence.

    Returns (mean lam1, mean lam2, coherence of the means); coherence is in
    [0, 1] and zero for an isotropic or flat region.
    """
    region = np.asarray(region, dtype=np.float64)
    lam1, lam2 = _tensor_maps(region, sigma)
    m1 = float(lam1.mean())
    m2 = float(lam2.mean())
    return np.array([m1, m2, _coherence(m1, m2)])


def _tensor_group(img, grid):
    lam1, lam2 = _tensor_maps(img)
    p1, c1, w1 = _reduce_mean(lam1, grid)
    p2, c2, w2 = _reduce_mean(lam2, grid)
    patch = np.stack([p1, p2, _coherence(p1, p2)], axis=-1)
    col = np.stack([c1, c2, _coherence(c1, c2)], axis=-1)
    wide = np.stack([w1, w2, _coherence(w1, w2)], axis=-1)
    return patch, col, wide


# ---------------------------------------------------------------------------
# Laws masks group.

def _laws_responses(img):
    img0 = img - img.mean()
    maps = []
    for _, v in LAWS_VECTORS:
        rows = ndimage.correlate1d(img0, v, axis=0, mode="nearest")
        for _, u in LAWS_VECTORS:
            maps.append(np.abs(ndimage.correlate1d(rows, u, axis=1,
                                                   mode="nearest")))
    return maps


def laws_masks(region):
    """Mean absolute response of the nine 3x3 separable masks.

    Masks are outer products of L3, E3, S3 (vertical x horizontal, row
    major: LL, LE, LS, EL, ...). The region mean is removed first, so a
    constant region scores zero on every mask.
    """
    region = np.asarray(region, dtype=np.float64)
    return np.array([m.mean() for m in _laws_responses(region)])


def _laws_group(img, grid):
    parts = [_reduce_mean(m, grid) for m in _laws_responses(img)]
    patch = np.stack([p for p, _, _ in parts], axis=-1)
    col = np.stack([c for _, c, _ in parts], axis=-1)
    wide = np.stack([w for _, _, w in parts], axis=-1)
    return patch, col, wide


# ---------------------------------------------------------------------------
# Flow statistics group.

def flow_stats(flow_field, region=None):
    """Mean, min, max flow magnitude over the measured vectors of a region.

    flow_field is (H, W, 2); region is an optional (row_slice, col_slice).
    Exact-zero vectors mark pixels where the matcher found nothing and are
    excluded; a region with no measured vectors returns three zeros.
    """
    flow_field = np.asarray(flow_field, dtype=np.float64)
    mag = np.hypot(flow_field[..., 0], flow_field[..., 1])
    if region is not None:
        mag = mag[region]
    if mag.size == 0:
        raise ValueError("empty flow region")
    valid = mag > 0.0
    if not valid.any():
        return np.zeros(3)
    got = mag[valid]
    return np.array([got.mean(), got.min(), got.max()])


def _flow_group(flow_mag, grid):
    valid = (flow_mag > 0.0).astype(np.float64)
    sums = _reduce_mean(flow_mag, grid)
    counts = _reduce_mean(valid, grid)
    lifted = np.where(valid > 0, flow_mag, np.inf)
    mins = _reduce_extreme(lifted, grid, np.minimum)
    maxs = _reduce_extreme(flow_mag, grid, np.maximum)
    out = []
    for s, n, mn, mx in zip(sums, counts, mins, maxs):
        mean = np.where(n > 0, s / np.maximum(n, EPS), 0.0)
        mn = np.where(np.isfinite(mn), mn, 0.0)
        out.append(np.stack([mean, mn, mx], axis=-1))
    return tuple(out)


# ---------------------------------------------------------------------------
# Batched extraction.

def _assemble(patch, col, wide, grid):
    r, c = grid.rows, grid.cols
    d = patch.shape[-1]
    block = np.concatenate([
        patch,
        np.broadcast_to(col[None, :, :], (r, c, d)),
        np.broadcast_to(wide[None, :, :], (r, c, d)),
    ], axis=-1)
    return block.reshape(r * c, 3 * d)


def _patch_stack(img, grid):
    p, r, c = grid.patch_size, grid.rows, grid.cols
    m = img[:r * p, :c * p]
    return (m.reshape(r, p, c, p).transpose(0, 2, 1, 3)
            .reshape(r * c, p * p))


def _column_stack(img, grid):
    p, r, c = grid.patch_size, grid.rows, grid.cols
    m = img[:r * p, :c * p]
    return m.reshape(r * p, c, p).transpose(1, 0, 2).reshape(c, r * p * p)


def _radon_group(img, grid):
    p, r, c = grid.patch_size, grid.rows, grid.cols
    h = r * p
    m = img[:h, :c * p]
    patch = _radon_stack(_patch_stack(img, grid), p, p,
                         N_RADON_ANGLES).reshape(r, c, 2 * N_RADON_ANGLES)
    col = _radon_stack(_column_stack(img, grid), h, p, N_RADON_ANGLES)

    wide = np.empty((c, 2 * N_RADON_ANGLES))
    if c >= 3:
        interior = np.stack([m[:, (j - 1) * p:(j + 2) * p].reshape(-1)
                             for j in range(1, c - 1)])
        wide[1:c - 1] = _radon_stack(interior, h, 3 * p, N_RADON_ANGLES)
    edge = np.stack([m[:, :min(2 * p, c * p)].reshape(-1),
                     m[:, max(0, (c - 2) * p):].reshape(-1)])
    ew = min(2, c) * p
    res = _radon_stack(edge, h, ew, N_RADON_ANGLES)
    wide[0] = res[0]
    wide[c - 1] = res[1]
    return patch, col, wide


def extract_patch_features(frame, prev_frame, grid, enabled_groups=GROUP_ORDER,
                           flow_sigma_px=0.5, flow_seed=None, costs=None):
    """Compute per-patch feature vectors for one frame.

    prev_frame may be None: the flow group is then zero-filled and the
    result is flagged flow_valid=False. Identical inputs give identical
    output. Group layout follows the canonical group order restricted to
    enabled_groups.
    """
    layout = layout_for(enabled_groups, costs)
    img = np.asarray(frame.pixels, dtype=np.float64)
    h, w = img.shape
    if grid.rows * grid.patch_size > h or grid.cols * grid.patch_size > w:
        raise ValueError("patch grid does not fit the frame")

    blocks = []
    flow_valid = True
    for span in layout:
        if span.name == "flow_stats":
            if prev_frame is None:
                blocks.append(np.zeros((grid.n_patches,
                                        N_REGIONS * GROUP_DIMS["flow_stats"])))
                flow_valid = False
                continue
            from .pose_flow import forward_scene_flow
            if flow_seed is None:
                flow_seed = int(frame.timestamp * 1e6) & 0x7FFFFFFF
            field = forward_scene_flow(frame, prev_frame,
                                       sigma_px=flow_sigma_px,
                                       seed=flow_seed)
            mag = np.hypot(field[..., 0], field[..., 1])
            parts = _flow_group(mag, grid)
        elif span.name == "radon":
            parts = _radon_group(img, grid)
        elif span.name == "structure_tensor":
            parts = _tensor_group(img, grid)
        elif span.name == "laws":
            parts = _laws_group(img, grid)
        else:
            parts = _hog_group(img, grid)
        blocks.append(_assemble(*parts, grid))

    values = (np.concatenate(blocks, axis=1) if blocks
              else np.zeros((grid.n_patches, 0)))
    return PatchFeatureSet(values=values, layout=layout, grid=grid,
                           flow_valid=flow_valid)


def measure_group_costs(width=320, height=240, patch_size=16, n_reps=3,
                        groups=GROUP_ORDER, seed=0):
    """Wall-clock cost in ms of extracting each group alone.

    Uses a synthetic frame pair of the requested size; the median over
    n_reps repeats is reported. Shared precomputations (gradients etc.) are
    charged to every group that needs them.
    """
    from .sim_world import CameraModel, Frame

    rng = np.random.default_rng(seed)
    cam = CameraModel(width=width, height=height)
    pix = rng.random((height, width))
    depth = rng.uniform(2.0, 18.0, size=(height, width))
    cur = Frame(pixels=pix, true_depth=depth,
                camera_pose=np.array([0.3, 0.0, 0.0]), timestamp=0.2,
                camera=cam)
    prev = Frame(pixels=pix, true_depth=depth,
                 camera_pose=np.array([0.0, 0.0, 0.0]), timestamp=0.0,
                 camera=cam)
    grid = PatchGrid.for_frame(width, height, patch_size)
    costs = {}
    for g in groups:
        extract_patch_features(cur, prev, grid, (g,), flow_seed=0)  # warm
        times = []
        for _ in range(n_reps):
            t0 = time.perf_counter()
            extract_patch_features(cur, prev, grid, (g,), flow_seed=0)
            times.append((time.perf_counter() - t0) * 1e3)
        costs[g] = float(np.median(times))
    return costs


def export_csv(feature_set, path, depths=None):
    """Write one row per patch; optional final target_depth column."""
    names = feature_set.column_names()
    cols = feature_set.values
    if depths is not None:
        names = names + ["target_depth"]
        cols = np.column_stack([cols, np.asarray(depths).ravel()])
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for row in cols:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
