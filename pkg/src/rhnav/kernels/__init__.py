"""Hot numeric kernels with two interchangeable backends.

The jitted path (impl_numba) is the default when numba imports cleanly; the
vectorized pure-NumPy path (impl_numpy) is the fallback. Selection happens
once at import time via the RHNAV_NUMBA environment variable:

    RHNAV_NUMBA=0   force the NumPy path
    RHNAV_NUMBA=1   require the numba path (ImportError if numba is missing)
    unset           numba if available, NumPy otherwise

`rhnav bench` times both backends side by side.
"""

import importlib.util
import os


def _pick_backend() -> bool:
    flag = os.environ.get("RHNAV_NUMBA", "").strip().lower()
    if flag in {"0", "false", "off", "no"}:
        return False
    have = importlib.util.find_spec("numba") is not None
    if flag in {"1", "true", "on", "yes"}:
        if not have:
            raise ImportError("RHNAV_NUMBA=1 but numba is not installed")
        return True
    return have


USE_NUMBA = _pick_backend()

if USE_NUMBA:
    from . import impl_numba as _impl
else:
    from . import impl_numpy as _impl

encode_cells = _impl.encode_cells
render_columns = _impl.render_columns
radon_topk = _impl.radon_topk
cell_hist = _impl.cell_hist
score_points = _impl.score_points
greedy_dispersion = _impl.greedy_dispersion


def backend() -> str:
    """Name of the live kernel backend."""
    return "numba" if USE_NUMBA else "numpy"


def warmup():
    """Run every kernel once on tiny inputs so jit compilation happens
    before anything is timed."""
    import numpy as np

    x_px = np.array([-1.0, 0.0, 1.0])
    trees = np.array([[3.0, 0.0, 0.5]])
    render_columns(0.0, 0.0, 0.0, 2.0, x_px, trees)
    vals = np.ones((2, 4))
    bins = np.zeros((2, 4), dtype=np.int64)
    bins[1] = np.arange(4) % 2
    radon_topk(vals, bins, np.array([1, 2], dtype=np.int64))
    cell_hist(np.zeros((4, 4), dtype=np.int64), np.ones((4, 4)), 2, 9)
    pts = np.array([[0.1, 0.1], [5.0, 5.0]])
    keys = encode_cells(np.floor(pts[:, 0]).astype(np.int64),
                        np.floor(pts[:, 1]).astype(np.int64))
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    uniq, first = np.unique(keys, return_index=True)
    starts = np.append(first, len(keys)).astype(np.int64)
    score_points(np.zeros((1, 2)), pts[order], np.ones(2), uniq, starts, 1.0, 0.5)
    xs = np.arange(12, dtype=float).reshape(4, 3)
    greedy_dispersion(xs, xs[::-1].copy(), 2, 0)
