"""Pure-NumPy implementations of the hot kernels.

Vectorized equivalents of the jitted loops in impl_numba. Both backends
expose the same signatures and are kept numerically interchangeable (same
math, possibly different summation order), which the kernel tests check.
"""

import numpy as np

# Cell keys pack (ix, iy) grid coordinates into one int64. Coordinates are
# offset by _KEY_OFF so negatives stay valid; anything within ~1e5 cells of
# the origin fits.
_KEY_OFF = 1 << 20
_KEY_MUL = 1 << 21


def encode_cells(ix, iy):
    """Pack integer cell coordinates into sortable int64 keys."""
    return (ix.astype(np.int64) + _KEY_OFF) * _KEY_MUL + (iy.astype(np.int64) + _KEY_OFF)


def render_columns(px, py, yaw, f, x_px, trees):
    """Nearest ray/cylinder hit per image column, in the horizontal plane.

    px, py, yaw: camera pose. f: focal length in pixels. x_px: per-column
    pixel offsets from the optical axis. trees: (T, 3) array of x, y, radius.

    Returns (dist, idx, cos_inc): horizontal hit distance per column (inf on
    miss), index of the hit tree (-1 on miss), and the cosine of the
    incidence angle at the hit point (0 on miss).
    """
    w = x_px.shape[0]
    dist = np.full(w, np.inf)
    idx = np.full(w, -1, dtype=np.int64)
    cos_inc = np.zeros(w)
    if trees.shape[0] == 0:
        return dist, idx, cos_inc

    hor = np.sqrt(f * f + x_px * x_px)
    dxc = (f * np.cos(yaw) + x_px * np.sin(yaw)) / hor
    dyc = (f * np.sin(yaw) - x_px * np.cos(yaw)) / hor

    rx = trees[:, 0:1] - px
    ry = trees[:, 1:2] - py
    r = trees[:, 2:3]
    b = rx * dxc[None, :] + ry * dyc[None, :]
    cc = rx * rx + ry * ry - r * r
    disc = b * b - cc
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    s1 = b - sq
    s2 = b + sq
    # Entry point ahead of the camera; if the camera sits inside a cylinder
    # the hit is pinned to a tiny positive distance.
    s = np.where(s1 > 1e-9, s1, np.where(s2 > 1e-9, 1e-3, np.inf))
    s = np.where(hit, s, np.inf)

    ti = np.argmin(s, axis=0)
    cols = np.arange(w)
    best = s[ti, cols]
    ok = np.isfinite(best)
    dist[ok] = best[ok]
    idx[ok] = ti[ok]
    if np.any(ok):
        hx = px + best[ok] * dxc[ok]
        hy = py + best[ok] * dyc[ok]
        tx = trees[idx[ok], 0]
        ty = trees[idx[ok], 1]
        tr = trees[idx[ok], 2]
        nx = (hx - tx) / tr
        ny = (hy - ty) / tr
        ci = -(dxc[ok] * nx + dyc[ok] * ny)
        cos_inc[ok] = np.clip(ci, 0.0, 1.0)
    return dist, idx, cos_inc


def radon_topk(values, bins, nbins):
    """Top-2 line-integral sums per projection angle for stacked regions.

    values: (R, P) pixel values, one row per region (all regions share a
    shape). bins: (A, P) per-angle bin index of every pixel. nbins: (A,)
    bin counts. Returns (R, A, 2) with the two largest sums, descending.
    """
    n_regions, n_pix = values.shape
    n_angles = bins.shape[0]
    out = np.empty((n_regions, n_angles, 2))
    vals = values.ravel()
    row_base = np.arange(n_regions, dtype=np.int64)[:, None]
    for a in range(n_angles):
        nb = int(nbins[a])
        comb = (row_base * nb + bins[a][None, :]).ravel()
        sums = np.bincount(comb, weights=vals, minlength=n_regions * nb)
        sums = sums.reshape(n_regions, nb)
        if nb == 1:
            out[:, a, 0] = sums[:, 0]
            out[:, a, 1] = sums[:, 0]
        else:
            top2 = np.partition(sums, nb - 2, axis=1)[:, nb - 2:]
            out[:, a, 0] = top2.max(axis=1)
            out[:, a, 1] = top2.min(axis=1)
    return out


def cell_hist(bin_idx, mag, cell, n_bins):
    """Per-cell orientation histograms over a regular cell grid.

    bin_idx, mag: (H, W) orientation bin per pixel and gradient magnitude.
    cell: cell side in pixels (must divide H and W). Returns
    (H // cell, W // cell, n_bins) magnitude-weighted histograms.
    """
    h, w = bin_idx.shape
    hc = h // cell
    wc = w // cell
    rows = np.arange(h) // cell
    cols = np.arange(w) // cell
    cid = rows[:, None] * wc + cols[None, :]
    comb = (cid * n_bins + bin_idx).ravel()
    hist = np.bincount(comb, weights=mag.ravel(), minlength=hc * wc * n_bins)
    return hist.reshape(hc, wc, n_bins)


def _ranges_to_indices(starts, counts):
    # Expand [start, start+count) ranges into one flat index vector.
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    rep = np.repeat(starts, counts)
    shift = np.repeat(np.cumsum(counts) - counts, counts)
    return rep + (np.arange(total, dtype=np.int64) - shift)


def score_points(samples, pts, w, uniq_keys, starts, cell, radius):
    """Sum of point weights within `radius` of each sample position.

    pts and w must already be permuted into grid-sorted order; uniq_keys and
    starts describe the cell ranges of that ordering (CSR layout).
    Returns (S,) accumulated weights.
    """
    n_samples = samples.shape[0]
    out = np.zeros(n_samples)
    if pts.shape[0] == 0 or n_samples == 0:
        return out
    r2 = radius * radius
    ix = np.floor(samples[:, 0] / cell).astype(np.int64)
    iy = np.floor(samples[:, 1] / cell).astype(np.int64)
    n_uniq = uniq_keys.shape[0]
    sample_ids = np.arange(n_samples, dtype=np.int64)
    for ox in (-1, 0, 1):
        for oy in (-1, 0, 1):
            key = (ix + ox + _KEY_OFF) * _KEY_MUL + (iy + oy + _KEY_OFF)
            j = np.searchsorted(uniq_keys, key)
            found = (j < n_uniq)
            found[found] = uniq_keys[j[found]] == key[found]
            if not np.any(found):
                continue
            jj = j[found]
            a = starts[jj]
            counts = starts[jj + 1] - a
            gather = _ranges_to_indices(a, counts)
            owner = np.repeat(sample_ids[found], counts)
            dx = pts[gather, 0] - samples[owner, 0]
            dy = pts[gather, 1] - samples[owner, 1]
            m = dx * dx + dy * dy < r2
            np.add.at(out, owner[m], w[gather[m]])
    return out


def greedy_dispersion(xs, ys, k, first):
    """Greedy max-dispersion subset of trajectories.

    xs, ys: (N, S) sampled coordinates per trajectory. Distance between two
    trajectories is the max over matched samples of point distance. Picks
    `first`, then repeatedly the trajectory farthest from the chosen set
    (ties -> lowest index). Returns (k,) chosen indices in pick order.
    """
    n = xs.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = first
    dx = xs - xs[first]
    dy = ys - ys[first]
    mind = np.sqrt(dx * dx + dy * dy).max(axis=1)
    mind[first] = -1.0
    for i in range(1, k):
        j = int(np.argmax(mind))
        chosen[i] = j
        dx = xs - xs[j]
        dy = ys - ys[j]
        d = np.sqrt(dx * dx + dy * dy).max(axis=1)
        np.minimum(mind, d, out=mind)
        mind[j] = -1.0
    return chosen
