"""Benchmarks: numba vs numpy kernel backends, and the end-to-end
planning cycle (full feature extraction plus trajectory scoring against
populated clouds) that the 5 Hz loop has to fit inside."""

import math
import time

import numpy as np

from . import costmap, kernels, learn, perception, planner, sim_world, traj_lib
from . import features as features_mod
from .kernels import impl_numpy

try:
    from .kernels import impl_numba
except ImportError:
    impl_numba = None


def _time_call(fn, args, reps):
    best = math.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def _kernel_workloads(rng):
    trees = np.column_stack([rng.uniform(2, 40, 200), rng.uniform(-20, 20, 200),
                             rng.uniform(0.05, 0.5, 200)])
    x_px = (np.arange(320) + 0.5) - 160.0

    r, p, a = 900, 256, 12
    values = rng.random((r, p))
    bins = rng.integers(0, 31, (a, p)).astype(np.int64)

    bin_idx = rng.integers(0, 9, (300, 256)).astype(np.int64)
    mag = rng.random((300, 256))

    pts = rng.uniform(0, 30, (10_000, 2))
    cell = 0.35
    ix = np.floor(pts[:, 0] / cell).astype(np.int64)
    iy = np.floor(pts[:, 1] / cell).astype(np.int64)
    keys = impl_numpy.encode_cells(ix, iy)
    order = np.argsort(keys, kind="stable")
    uniq, counts = np.unique(keys[order], return_counts=True)
    starts = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    samples = np.ascontiguousarray(rng.uniform(0, 30, (78 * 21, 2)))
    w = np.ones(len(pts))
    spts = np.ascontiguousarray(pts[order])

    xs = rng.uniform(-3, 3, (2401, 21))
    ys = rng.uniform(-3, 3, (2401, 21))

    return [
        ("render_columns", (20.0, 0.0, 0.0, 208.0, x_px, trees)),
        ("radon_topk", (values, bins, 31)),
        ("cell_hist", (bin_idx, mag, 8, 9)),
        ("score_points", (samples, spts, w, uniq, starts, cell, cell)),
        ("greedy_dispersion", (xs, ys, 78, 1200)),
    ]


def bench_kernels(reps=5, seed=0):
    """Per-kernel best-of-reps timing for each backend. Returns rows of
    (kernel, numpy_ms, numba_ms or None, speedup or None)."""
    rng = np.random.default_rng(seed)
    rows = []
    for name, args in _kernel_workloads(rng):
        np_ms = _time_call(getattr(impl_numpy, name), args, reps)
        nb_ms = None
        if impl_numba is not None:
            fn = getattr(impl_numba, name)
            fn(*args)  # compile outside the timed region
            nb_ms = _time_call(fn, args, reps)
        rows.append((name, np_ms, nb_ms,
                     None if nb_ms is None else np_ms / nb_ms))
    return rows


def format_kernel_table(rows):
    lines = [f"{'kernel':<20}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}"]
    for name, np_ms, nb_ms, speedup in rows:
        nb = f"{nb_ms:12.3f}" if nb_ms is not None else f"{'n/a':>12}"
        sp = f"{speedup:10.1f}" if speedup is not None else f"{'n/a':>10}"
        lines.append(f"{name:<20}{np_ms:12.3f}{nb}{sp}")
    lines.append(f"active backend: {kernels.backend()}")
    return "\n".join(lines)


def _constant_model(width, height, patch_size, d_max=20.0):
    """Model with realistic layout dims but trivial weights; exercises the
    full feature path while staying training-free."""
    dim = features_mod.layout_for(features_mod.GROUP_ORDER)[-1]
    dim = dim.offset + dim.length
    reg = learn.StagewiseRegressor(
        stages=[(np.zeros(dim), 10.0)], ridge_lambda=1e-2,
        mu=np.zeros(dim), sigma=np.ones(dim))
    bins = np.arange(0, int(d_max) + 1, dtype=np.float64)
    lut = learn.ErrorLUT(d_near=bins * 0.8, d_far=np.minimum(bins * 1.2, d_max),
                         n_near=np.full(bins.size, 100, dtype=np.int64),
                         n_far=np.full(bins.size, 100, dtype=np.int64),
                         d_max=d_max, min_count=20)
    return learn.DepthModel(regressor=reg, group_names=features_mod.GROUP_ORDER,
                            patch_size=patch_size, d_max=d_max, lut=lut)


def bench_planning_cycle(n_cycles=100, width=320, height=240, patch_size=16,
                         n_points=10_000, seed=0):
    """Timed loop of predict -> interpret -> project -> score 78 x 3.

    Clouds are preloaded with n_points points each; the frame is rendered
    once outside the timed region (the camera, not the pipeline, pays for
    it on a robot). Returns dict with mean/p95/max ms over n_cycles.
    """
    rng = np.random.default_rng(seed)
    scenario = sim_world.generate_scenario(1 / 36.0, (0, 0, 60, 60), seed=3)
    camera = sim_world.CameraModel(width=width, height=height)
    start = scenario.start_position()
    pose = (float(start[0]), float(start[1]), 0.0)
    frame = sim_world.render(scenario, pose, camera)
    prev = sim_world.render(scenario, (pose[0] - 0.3, pose[1], 0.0), camera,
                            timestamp=-0.2)
    model = _constant_model(width, height, patch_size)

    clouds = []
    for _ in range(3):
        cloud = costmap.ScoredCloud(costmap.CloudConfig(capacity=n_points))
        pts = np.column_stack([rng.uniform(0, 40, n_points),
                               rng.uniform(10, 50, n_points)])
        cloud.insert(pts, np.ones(n_points), 0.0)
        clouds.append(cloud)
    library = traj_lib.TrajectoryLibrary.build()
    plan_cfg = planner.PlannerConfig()

    # Warm every code path (and the numba JIT) before timing.
    kernels.warmup()
    times = []
    for i in range(n_cycles + 1):
        t0 = time.perf_counter()
        grid = perception.predict_depth(frame, prev, model, flow_seed=i)
        interp = perception.expand_interpretations(
            grid, model.lut, perception.MODE_MULTIPLE)
        for cloud, g in zip(clouds, interp.grids):
            perception.project_to_points(g, camera, pose)
        planner.plan(library, clouds, pose, plan_cfg, 0.0)
        if i > 0:  # first pass warms caches
            times.append((time.perf_counter() - t0) * 1e3)
    arr = np.array(times)
    return {
        "cycles": n_cycles,
        "mean_ms": float(arr.mean()),
        "p95_ms": float(np.percentile(arr, 95)),
        "max_ms": float(arr.max()),
        "backend": kernels.backend(),
    }
