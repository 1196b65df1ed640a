"""Jitted implementations of the hot kernels.

Same signatures as impl_numpy; explicit loops compiled with numba. Compiled
artifacts are cached on disk, so only the first call in a fresh environment
pays the compile cost.
"""

import numpy as np
from numba import njit

_KEY_OFF = 1 << 20
_KEY_MUL = 1 << 21


def encode_cells(ix, iy):
    """Pack integer cell coordinates into sortable int64 keys."""
    return (ix.astype(np.int64) + _KEY_OFF) * _KEY_MUL + (iy.astype(np.int64) + _KEY_OFF)


@njit(cache=True)
def render_columns(px, py, yaw, f, x_px, trees):
    w = x_px.shape[0]
    n_trees = trees.shape[0]
    dist = np.full(w, np.inf)
    idx = np.full(w, -1, dtype=np.int64)
    cos_inc = np.zeros(w)
    cy = np.cos(yaw)
    sy = np.sin(yaw)
    for c in range(w):
        hor = np.sqrt(f * f + x_px[c] * x_px[c])
        dxc = (f * cy + x_px[c] * sy) / hor
        dyc = (f * sy - x_px[c] * cy) / hor
        best = np.inf
        best_i = -1
        for t in range(n_trees):
            rx = trees[t, 0] - px
            ry = trees[t, 1] - py
            r = trees[t, 2]
            b = rx * dxc + ry * dyc
            disc = b * b - (rx * rx + ry * ry - r * r)
            if disc < 0.0:
                continue
            sq = np.sqrt(disc)
            s1 = b - sq
            if s1 > 1e-9:
                s = s1
            elif b + sq > 1e-9:
                s = 1e-3
            else:
                continue
            if s < best:
                best = s
                best_i = t
        if best_i >= 0:
            dist[c] = best
            idx[c] = best_i
            hx = px + best * dxc
            hy = py + best * dyc
            r = trees[best_i, 2]
            nx = (hx - trees[best_i, 0]) / r
            ny = (hy - trees[best_i, 1]) / r
            ci = -(dxc * nx + dyc * ny)
            if ci < 0.0:
                ci = 0.0
            elif ci > 1.0:
                ci = 1.0
            cos_inc[c] = ci
    return dist, idx, cos_inc


@njit(cache=True)
def radon_topk(values, bins, nbins):
    n_regions, n_pix = values.shape
    n_angles = bins.shape[0]
    out = np.empty((n_regions, n_angles, 2))
    max_bins = 0
    for a in range(n_angles):
        if nbins[a] > max_bins:
            max_bins = nbins[a]
    scratch = np.zeros(max_bins)
    for reg in range(n_regions):
        for a in range(n_angles):
            nb = nbins[a]
            for i in range(nb):
                scratch[i] = 0.0
            for p in range(n_pix):
                scratch[bins[a, p]] += values[reg, p]
            top1 = -np.inf
            top2 = -np.inf
            for i in range(nb):
                v = scratch[i]
                if v > top1:
                    top2 = top1
                    top1 = v
                elif v > top2:
                    top2 = v
            if nb == 1:
                top2 = top1
            out[reg, a, 0] = top1
            out[reg, a, 1] = top2
    return out


@njit(cache=True)
def cell_hist(bin_idx, mag, cell, n_bins):
    h, w = bin_idx.shape
    hc = h // cell
    wc = w // cell
    out = np.zeros((hc, wc, n_bins))
    for i in range(h):
        ci = i // cell
        for j in range(w):
            out[ci, j // cell, bin_idx[i, j]] += mag[i, j]
    return out


@njit(cache=True)
def score_points(samples, pts, w, uniq_keys, starts, cell, radius):
    n_samples = samples.shape[0]
    out = np.zeros(n_samples)
    if pts.shape[0] == 0 or n_samples == 0:
        return out
    r2 = radius * radius
    n_uniq = uniq_keys.shape[0]
    for s in range(n_samples):
        sx = samples[s, 0]
        sy = samples[s, 1]
        ix = np.int64(np.floor(sx / cell))
        iy = np.int64(np.floor(sy / cell))
        acc = 0.0
        for ox in range(-1, 2):
            for oy in range(-1, 2):
                key = (ix + ox + _KEY_OFF) * _KEY_MUL + (iy + oy + _KEY_OFF)
                j = np.searchsorted(uniq_keys, key)
                if j >= n_uniq or uniq_keys[j] != key:
                    continue
                for p in range(starts[j], starts[j + 1]):
                    dx = pts[p, 0] - sx
                    dy = pts[p, 1] - sy
                    if dx * dx + dy * dy < r2:
                        acc += w[p]
        out[s] = acc
    return out


@njit(cache=True)
def greedy_dispersion(xs, ys, k, first):
    n, n_s = xs.shape
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = first
    mind = np.empty(n)
    for i in range(n):
        m = 0.0
        for s in range(n_s):
            dx = xs[i, s] - xs[first, s]
            dy = ys[i, s] - ys[first, s]
            d = np.sqrt(dx * dx + dy * dy)
            if d > m:
                m = d
        mind[i] = m
    mind[first] = -1.0
    for pick in range(1, k):
        j = 0
        best = -np.inf
        for i in range(n):
            if mind[i] > best:
                best = mind[i]
                j = i
        chosen[pick] = j
        for i in range(n):
            m = 0.0
            for s in range(n_s):
                dx = xs[i, s] - xs[j, s]
                dy = ys[i, s] - ys[j, s]
                d = np.sqrt(dx * dx + dy * dy)
                if d > m:
                    m = d
            if m < mind[i]:
                mind[i] = m
        mind[j] = -1.0
    return chosen
