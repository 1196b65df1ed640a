"""Experiment orchestration: lockstep episode simulation, corpus
generation, model training glue, and paired-seed evaluation.

All module rates (perception, control, flow, IMU) are integer divisors of
one base tick rate and are interleaved deterministically in a single
logical thread, so an episode is a pure function of its RunConfig. Within
a tick the order is sensors (IMU, flow), perception + planning, control,
then vehicle physics.

Ground truth lives in the world frame; the perception clouds, planner,
and tracker all operate in the drifting odometry frame anchored at the
true start pose and never resynchronized.
"""

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import control as control_mod
from . import costmap, learn, perception, planner, pose_flow, traj_lib
from . import features as features_mod
from . import sim_world

MODE_ORACLE = perception.MODE_ORACLE
MODE_SINGLE = perception.MODE_SINGLE
MODE_MULTIPLE = perception.MODE_MULTIPLE
MODES = (MODE_ORACLE, MODE_SINGLE, MODE_MULTIPLE)

OUTCOME_GOAL = "goal_reached"
OUTCOME_COLLISION = "collision"
OUTCOME_MAX_DISTANCE = "max_distance"

FAILURE_LARGE = "large_tree"
FAILURE_THIN = "thin_tree"
FAILURE_FOLIAGE = "foliage_proxy"
FAILURE_NARROW_FOV = "narrow_fov"

ENCOUNTER_RADIUS = 3.0
LARGE_TREE_RADIUS = 0.25
FOLIAGE_RADIUS = 0.10
FOV_LOOKBACK = 2.0


@dataclass
class RunConfig:
    """Everything one episode depends on. Defaults are the full-scale
    settings; tests shrink frames and distances to stay fast."""

    mode: str = MODE_MULTIPLE
    density: float = 1.0 / 36.0
    bounds: tuple = (0.0, 0.0, 60.0, 60.0)
    seed: int = 0
    goal_direction: tuple = (1.0, 0.0)

    v_cruise: float = 1.5
    max_distance: float = 40.0
    t_max: float = 0.0          # 0 -> derived from max_distance

    frame_width: int = 320
    frame_height: int = 240
    horizontal_fov_deg: float = 75.0
    patch_size: int = 16
    d_max: float = 20.0
    altitude: float = 2.0

    tau: float = costmap.DEFAULT_TAU
    cloud_capacity: int = costmap.DEFAULT_CAPACITY
    robot_radius: float = 0.35
    w_dir: float = planner.DEFAULT_W_DIR
    w_trans: float = planner.DEFAULT_W_TRANS

    lookahead: float = 1.0
    kp: float = 3.0
    kd: float = 0.05
    yaw_rate_max: float = 1.2
    # Bank-transient proxy: the realized turn rate chases the commanded one
    # at this slew, so late dodges cost real distance.
    yaw_accel_max: float = 3.0

    base_rate: int = 600
    perception_rate: int = 5
    control_rate: int = 50
    flow_rate: int = 100
    imu_rate: int = 200

    flow_sigma_px: float = 0.2
    flow_p_outlier: float = 0.05
    flow_outlier_mag: float = 10.0
    imu_bias: float = 0.01
    imu_noise: float = 0.005

    oracle_noise: float = 0.0
    feature_flow_sigma_px: float = 0.5
    use_true_pose: bool = False
    perception_latency_cycles: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        for name in ("perception_rate", "control_rate", "flow_rate",
                     "imu_rate"):
            rate = getattr(self, name)
            if rate <= 0 or self.base_rate % rate != 0:
                raise ValueError(
                    f"{name}={rate} must divide base_rate={self.base_rate}")
        if self.v_cruise <= 0 or self.max_distance <= 0:
            raise ValueError("v_cruise and max_distance must be positive")

    @property
    def goal_bearing(self) -> float:
        return math.atan2(self.goal_direction[1], self.goal_direction[0])

    def forward_camera(self):
        return sim_world.CameraModel(
            width=self.frame_width, height=self.frame_height,
            horizontal_fov=math.radians(self.horizontal_fov_deg),
            mount="forward", altitude=self.altitude)

    def down_camera(self):
        # Fixed-focal downward camera; 300 px keeps flow magnitudes in a
        # realistic range at 100 Hz and 2 m altitude.
        return sim_world.CameraModel.from_focal(
            320, 240, 300.0, mount="downward", altitude=self.altitude)

    def derived_t_max(self) -> float:
        return self.t_max if self.t_max > 0 else 3.0 * self.max_distance / self.v_cruise


def save_config(cfg, path):
    with open(path, "w") as fh:
        fh.write("# rhnav run config v1\n")
        for f in dataclasses.fields(cfg):
            v = getattr(cfg, f.name)
            if isinstance(v, tuple):
                fh.write(f"{f.name} " + " ".join(repr(float(x)) for x in v) + "\n")
            else:
                fh.write(f"{f.name} {v!r}\n")


def load_config(path, **overrides):
    kw = {}
    field_types = {f.name: f for f in dataclasses.fields(RunConfig)}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, rest = line.split(None, 1)
            if name not in field_types:
                raise ValueError(f"unknown config key {name!r}")
            default = getattr(RunConfig, name)
            if isinstance(default, tuple):
                kw[name] = tuple(float(v) for v in rest.split())
            elif isinstance(default, bool):
                kw[name] = rest.strip() in ("True", "true", "1")
            elif isinstance(default, int):
                kw[name] = int(rest)
            elif isinstance(default, float):
                kw[name] = float(rest)
            else:
                kw[name] = rest.strip().strip("'\"")
    kw.update(overrides)
    return RunConfig(**kw)


@dataclass
class RunReport:
    mode: str
    density: float
    seed: int
    outcome: str
    distance_flown: float
    sim_time: float
    trees_encountered: int
    trees_avoided: int
    encountered_large: int
    encountered_small: int
    avoided_large: int
    avoided_small: int
    failure_type: str
    collided_tree: int
    timed_out: bool
    log_path: str


def report_json(report) -> str:
    return json.dumps(dataclasses.asdict(report), sort_keys=True,
                      separators=(",", ":"))


@dataclass
class EpisodeResult:
    report: RunReport
    path: np.ndarray = field(repr=False)       # (K, 4) t, x, y, yaw
    wall_ms: list = field(repr=False)
    scenario: object = field(repr=False, default=None)


def _progress_limit(bounds, start, direction):
    """Forward distance from start to the bounds edge along direction,
    minus a 2 m margin: crossing it counts as traversing the forest."""
    x0, y0, x1, y1 = bounds
    dx, dy = direction
    t_exit = math.inf
    if dx > 1e-12:
        t_exit = min(t_exit, (x1 - start[0]) / dx)
    elif dx < -1e-12:
        t_exit = min(t_exit, (x0 - start[0]) / dx)
    if dy > 1e-12:
        t_exit = min(t_exit, (y1 - start[1]) / dy)
    elif dy < -1e-12:
        t_exit = min(t_exit, (y0 - start[1]) / dy)
    return max(1.0, t_exit - 2.0)


def _visible_trees(scenario, pose, hfov, d_max):
    """Indices of trees whose center is inside the camera frustum."""
    if scenario.n_trees == 0:
        return np.empty(0, dtype=np.int64)
    dx = scenario.trees[:, 0] - pose[0]
    dy = scenario.trees[:, 1] - pose[1]
    dist = np.hypot(dx, dy)
    bearing = sim_world.wrap_angle(np.arctan2(dy, dx) - pose[2])
    return np.flatnonzero((dist <= d_max) & (np.abs(bearing) <= hfov / 2.0))


def _collided_tree(scenario, position, robot_radius):
    d = np.hypot(scenario.trees[:, 0] - position[0],
                 scenario.trees[:, 1] - position[1])
    gap = d - scenario.trees[:, 2] - robot_radius
    return int(np.argmin(gap))


def _classify_failure(scenario, tree_idx, visibility, t_col):
    seen = any(t >= t_col - FOV_LOOKBACK and tree_idx in vis
               for t, vis in visibility)
    if not seen:
        return FAILURE_NARROW_FOV
    r = scenario.trees[tree_idx, 2]
    if r < FOLIAGE_RADIUS:
        return FAILURE_FOLIAGE
    if r < LARGE_TREE_RADIUS:
        return FAILURE_THIN
    return FAILURE_LARGE


def _count_encounters(scenario, path_xy, robot_radius, collided):
    enc_large = enc_small = av_large = av_small = 0
    for i in range(scenario.n_trees):
        tx, ty, r = scenario.trees[i]
        d = np.hypot(path_xy[:, 0] - tx, path_xy[:, 1] - ty)
        if d.min() > ENCOUNTER_RADIUS:
            continue
        large = r >= LARGE_TREE_RADIUS
        hit = i == collided
        if large:
            enc_large += 1
            av_large += 0 if hit else 1
        else:
            enc_small += 1
            av_small += 0 if hit else 1
    return enc_large, enc_small, av_large, av_small


def run_episode(cfg, model=None, scenario=None, library=None,
                cycle_log_path=None):
    """Simulate one episode; returns an EpisodeResult.

    model may be None in oracle mode. scenario/library default to ones
    generated from the config (the library build is the slow part, pass
    it in when running batches).
    """
    if cfg.mode != MODE_ORACLE and model is None:
        raise ValueError(f"mode {cfg.mode!r} needs a trained model")
    if scenario is None:
        scenario = sim_world.generate_scenario(
            cfg.density, cfg.bounds, cfg.seed,
            goal_direction=cfg.goal_direction)
    if library is None:
        library = traj_lib.TrajectoryLibrary.build(
            kappa_max=cfg.yaw_rate_max / cfg.v_cruise)
    camera = cfg.forward_camera()
    down_cam = cfg.down_camera()
    hfov = camera.horizontal_fov

    ss = np.random.SeedSequence([cfg.seed, 0x5EED])
    rng_flow, rng_imu, rng_oracle = (np.random.default_rng(s)
                                     for s in ss.spawn(3))
    flow_noise = pose_flow.FlowNoise(sigma_px=cfg.flow_sigma_px,
                                     p_outlier=cfg.flow_p_outlier,
                                     outlier_mag_px=cfg.flow_outlier_mag)
    est_cfg = pose_flow.FlowEstimatorCfg(sigma_px=cfg.flow_sigma_px)
    imu = pose_flow.ImuSim(bias=(cfg.imu_bias,) * 3, noise_std=cfg.imu_noise)

    start = scenario.start_position()
    state = sim_world.VehicleState(x=float(start[0]), y=float(start[1]),
                                   yaw=cfg.goal_bearing, speed=0.0, time=0.0)
    integ = pose_flow.PoseIntegrator(x=state.x, y=state.y, yaw=state.yaw)

    n_clouds = 3 if cfg.mode == MODE_MULTIPLE else 1
    cloud_cfg = costmap.CloudConfig(tau=cfg.tau, capacity=cfg.cloud_capacity,
                                    cell=cfg.robot_radius)
    clouds = [costmap.ScoredCloud(cloud_cfg) for _ in range(n_clouds)]
    plan_cfg = planner.PlannerConfig(
        w_dir=cfg.w_dir, w_trans=cfg.w_trans, robot_radius=cfg.robot_radius,
        replan_period=1.0 / cfg.perception_rate,
        goal_direction=cfg.goal_direction)
    tracker = control_mod.PursuitTracker(control_mod.PursuitConfig(
        lookahead=cfg.lookahead, kp=cfg.kp, kd=cfg.kd, v_cruise=cfg.v_cruise,
        control_rate=float(cfg.control_rate),
        yaw_rate_max=cfg.yaw_rate_max))

    dt_base = 1.0 / cfg.base_rate
    every_perc = cfg.base_rate // cfg.perception_rate
    every_ctrl = cfg.base_rate // cfg.control_rate
    every_flow = cfg.base_rate // cfg.flow_rate
    every_imu = cfg.base_rate // cfg.imu_rate
    dt_flow = 1.0 / cfg.flow_rate
    dt_imu = 1.0 / cfg.imu_rate

    progress_limit = _progress_limit(cfg.bounds, start, cfg.goal_direction)
    t_max = cfg.derived_t_max()
    max_ticks = int(round(t_max * cfg.base_rate)) + 1

    trees = scenario.trees
    hit_r2 = (trees[:, 2] + cfg.robot_radius) ** 2 if scenario.n_trees else None

    cmd = control_mod.HOLD
    yaw_rate_act = 0.0
    latest_imu = pose_flow.ImuReading(t=0.0, omega=np.zeros(3))
    prev_frame = None
    pending_samples = None
    frame_index = 0
    distance = 0.0
    outcome = OUTCOME_MAX_DISTANCE
    timed_out = True
    visibility = []
    path = [(0.0, state.x, state.y, state.yaw)]
    wall_ms = []
    log_fh = open(cycle_log_path, "w") if cycle_log_path else None

    try:
        for i in range(max_ticks):
            t = i * dt_base
            true_omega = (0.0, 0.0, yaw_rate_act)

            if i % every_imu == 0:
                latest_imu = imu.sample(true_omega, t, rng_imu)
                integ.advance_yaw(latest_imu.omega[2], dt_imu)

            if i % every_flow == 0:
                sample = pose_flow.simulate_flow(
                    (state.speed, 0.0), true_omega, cfg.altitude, down_cam,
                    noise=flow_noise, rng=rng_flow, rate=float(cfg.flow_rate),
                    t=t)
                unrot = pose_flow.unrotate(sample, latest_imu.omega, down_cam)
                v_est, valid = pose_flow.estimate_velocity(
                    unrot, cfg.altitude, (integ.vx, integ.vy), down_cam,
                    est_cfg)
                integ.advance_velocity(v_est, valid, dt_flow, t=t)

            if i % every_perc == 0:
                t0 = time.perf_counter()
                frame = sim_world.render(scenario, (state.x, state.y,
                                                    state.yaw), camera,
                                         d_max=cfg.d_max, timestamp=t)
                est = (state.x, state.y, state.yaw) if cfg.use_true_pose \
                    else (integ.x, integ.y, integ.yaw)
                if cfg.mode == MODE_ORACLE:
                    grid = perception.oracle_predict(
                        frame, cfg.patch_size, cfg.oracle_noise, rng_oracle)
                    grids = [grid]
                else:
                    fseed = (cfg.seed * 1_000_003 + 7919 * frame_index) \
                        & 0x7FFFFFFF
                    grid = perception.predict_depth(frame, prev_frame, model,
                                                    flow_seed=fseed)
                    interp = perception.expand_interpretations(
                        grid, model.lut, cfg.mode)
                    grids = interp.grids
                for cloud, g in zip(clouds, grids):
                    pts, w = perception.project_to_points(g, camera, est)
                    cloud.insert(pts, w, t)
                result = planner.plan(library, clouds, est, plan_cfg, t)
                if cfg.perception_latency_cycles > 0:
                    if pending_samples is not None:
                        tracker.set_trajectory(pending_samples)
                    pending_samples = result.world_samples
                else:
                    tracker.set_trajectory(result.world_samples)
                visibility.append(
                    (t, _visible_trees(scenario, (state.x, state.y,
                                                  state.yaw), hfov,
                                       cfg.d_max)))
                ms = (time.perf_counter() - t0) * 1e3
                wall_ms.append(ms)
                if log_fh is not None:
                    planner.write_log_line(
                        log_fh, result,
                        extra={"wall_ms": ms, "n_points":
                               int(sum(len(c) for c in clouds))})
                prev_frame = frame
                frame_index += 1

            if i % every_ctrl == 0:
                if cfg.use_true_pose:
                    cmd = tracker.step((state.x, state.y, state.yaw), 0.0)
                else:
                    cmd = tracker.step(integ.estimate(),
                                       integ.invalid_elapsed(t))
                path.append((t, state.x, state.y, state.yaw))

            step_lim = cfg.yaw_accel_max * dt_base
            yaw_rate_act += min(step_lim,
                                max(-step_lim, cmd.yaw_rate - yaw_rate_act))
            state = sim_world.step_vehicle(state, cmd.forward_speed,
                                           yaw_rate_act, dt_base)
            distance += cmd.forward_speed * dt_base

            if scenario.n_trees:
                d2 = (trees[:, 0] - state.x) ** 2 + (trees[:, 1] - state.y) ** 2
                if np.any(d2 < hit_r2):
                    outcome = OUTCOME_COLLISION
                    timed_out = False
                    break
            progress = ((state.x - start[0]) * cfg.goal_direction[0]
                        + (state.y - start[1]) * cfg.goal_direction[1])
            if progress >= progress_limit:
                outcome = OUTCOME_GOAL
                timed_out = False
                break
            if distance >= cfg.max_distance:
                outcome = OUTCOME_MAX_DISTANCE
                timed_out = False
                break
    finally:
        if log_fh is not None:
            log_fh.close()

    path.append((state.time, state.x, state.y, state.yaw))
    path = np.array(path)
    collided = -1
    failure = ""
    if outcome == OUTCOME_COLLISION:
        collided = _collided_tree(scenario, (state.x, state.y),
                                  cfg.robot_radius)
        failure = _classify_failure(scenario, collided, visibility,
                                    state.time)
    enc_l, enc_s, av_l, av_s = _count_encounters(
        scenario, path[:, 1:3], cfg.robot_radius, collided)
    report = RunReport(
        mode=cfg.mode, density=cfg.density, seed=cfg.seed, outcome=outcome,
        distance_flown=distance, sim_time=state.time,
        trees_encountered=enc_l + enc_s, trees_avoided=av_l + av_s,
        encountered_large=enc_l, encountered_small=enc_s,
        avoided_large=av_l, avoided_small=av_s, failure_type=failure,
        collided_tree=collided, timed_out=timed_out,
        log_path=cycle_log_path or "")
    return EpisodeResult(report=report, path=path, wall_ms=wall_ms,
                         scenario=scenario)


# ---------------------------------------------------------------------------
# Corpus generation and training glue.

def _clear_of_trees(scenario, x, y, margin=0.6):
    if not scenario.n_trees:
        return True
    d = np.hypot(scenario.trees[:, 0] - x, scenario.trees[:, 1] - y)
    return np.min(d - scenario.trees[:, 2]) >= margin


def _random_flight_pose(scenario, rng, margin=2.0):
    x0, y0, x1, y1 = scenario.bounds
    for _ in range(200):
        x = rng.uniform(x0 + margin, x1 - margin)
        y = rng.uniform(y0 + margin, y1 - margin)
        if not _clear_of_trees(scenario, x, y):
            continue
        return x, y, rng.uniform(-math.pi, math.pi)
    raise ValueError("could not place a clear corpus pose")


def _tree_facing_pose(scenario, rng):
    """Pose a few meters from a random tree, looking roughly at it.

    Keeps the close-depth bins of the corpus populated; purely random
    poses rarely stand near an obstacle."""
    x0, y0, x1, y1 = scenario.bounds
    for _ in range(200):
        i = int(rng.integers(0, scenario.n_trees))
        tx, ty, _ = scenario.trees[i]
        bearing = rng.uniform(-math.pi, math.pi)
        dist = rng.uniform(1.5, 9.0)
        x = tx - dist * math.cos(bearing)
        y = ty - dist * math.sin(bearing)
        if not (x0 + 1 < x < x1 - 1 and y0 + 1 < y < y1 - 1):
            continue
        if not _clear_of_trees(scenario, x, y):
            continue
        return x, y, sim_world.wrap_angle(bearing + rng.uniform(-0.35, 0.35))
    raise ValueError("could not place a tree-facing corpus pose")


def build_corpus(n_scenarios=8, frames_per_scenario=60, seed=0, width=320,
                 height=240, patch_size=16, densities=(1 / 36.0, 1 / 144.0),
                 bounds=(0.0, 0.0, 60.0, 60.0), d_max=20.0,
                 flow_sigma_px=0.5, holdout_fraction=0.1,
                 horizontal_fov_deg=75.0, close_fraction=0.4):
    """Render random fly-through frame pairs and extract training rows.

    Returns a dict with features (N, D), depths (N,), frame_ids (N,),
    train_mask (N,), and the metadata needed to rebuild the layout. The
    holdout split is by frame so patches from one image never straddle
    the split.
    """
    camera = sim_world.CameraModel(
        width=width, height=height,
        horizontal_fov=math.radians(horizontal_fov_deg), mount="forward")
    grid = features_mod.PatchGrid.for_frame(width, height, patch_size)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0B0]))
    dt = 0.2
    rows_x = []
    rows_y = []
    frame_ids = []
    fid = 0
    for s in range(n_scenarios):
        scenario = sim_world.generate_scenario(
            densities[s % len(densities)], bounds, seed * 1000 + s)
        for _ in range(frames_per_scenario):
            if scenario.n_trees and rng.random() < close_fraction:
                x, y, yaw = _tree_facing_pose(scenario, rng)
            else:
                x, y, yaw = _random_flight_pose(scenario, rng)
            v = rng.uniform(1.5, 3.5)
            w = rng.uniform(-0.6, 0.6)
            cur = sim_world.VehicleState(x=x, y=y, yaw=yaw, speed=v)
            for _ in range(2):  # two half steps; dt is capped at 0.1 s
                cur = sim_world.step_vehicle(cur, v, w, dt / 2.0)
            t0 = fid * 3.0
            prev = sim_world.render(scenario, (x, y, yaw), camera,
                                    d_max=d_max, timestamp=t0)
            frame = sim_world.render(scenario, (cur.x, cur.y, cur.yaw),
                                     camera, d_max=d_max, timestamp=t0 + dt)
            fs = features_mod.extract_patch_features(
                frame, prev, grid, flow_sigma_px=flow_sigma_px,
                flow_seed=int(rng.integers(0, 2**31 - 1)))
            truth = perception.oracle_predict(frame, patch_size)
            rows_x.append(fs.values)
            rows_y.append(truth.depth.ravel())
            frame_ids.append(np.full(grid.n_patches, fid, dtype=np.int64))
            fid += 1
    x_all = np.concatenate(rows_x)
    y_all = np.concatenate(rows_y)
    frame_ids = np.concatenate(frame_ids)
    order = np.random.default_rng(
        np.random.SeedSequence([seed, 0x5117])).permutation(fid)
    n_hold = max(1, int(round(holdout_fraction * fid)))
    hold_frames = set(order[:n_hold].tolist())
    train_mask = np.array([f not in hold_frames for f in frame_ids])
    return {
        "features": x_all, "depths": y_all, "frame_ids": frame_ids,
        "train_mask": train_mask,
        "group_names": np.array(features_mod.GROUP_ORDER),
        "patch_size": np.int64(patch_size), "width": np.int64(width),
        "height": np.int64(height), "d_max": np.float64(d_max),
        "flow_sigma_px": np.float64(flow_sigma_px), "seed": np.int64(seed),
    }


def save_corpus(corpus, path):
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **corpus)


def load_corpus(path):
    with np.load(path, allow_pickle=False) as z:
        return {k: z[k] if z[k].ndim else z[k][()] for k in z.files}


def group_blocks(x, group_names=features_mod.GROUP_ORDER):
    """Split a full feature matrix into per-group column blocks."""
    layout = features_mod.layout_for(tuple(group_names))
    return {s.name: x[:, s.offset:s.offset + s.length] for s in layout}


def subset_columns(x, chosen, group_names=features_mod.GROUP_ORDER):
    """Columns of x for the chosen groups, in canonical group order."""
    blocks = group_blocks(x, group_names)
    keep = [g for g in group_names if g in chosen]
    return np.concatenate([blocks[g] for g in keep], axis=1), tuple(keep)


def train_model(corpus, n_stages=6, ridge_lambda=1e-2, budget_ms=None,
                costs=None, lut_min_count=20):
    """Corpus dict -> DepthModel (+ BudgetPlan when a budget was given)."""
    x = np.asarray(corpus["features"], dtype=np.float64)
    y = np.asarray(corpus["depths"], dtype=np.float64)
    mask = np.asarray(corpus["train_mask"], dtype=bool)
    group_names = tuple(str(g) for g in corpus["group_names"])
    plan = None
    chosen = group_names
    if budget_ms is not None:
        if costs is None:
            costs = features_mod.measure_group_costs(
                width=int(corpus["width"]), height=int(corpus["height"]),
                patch_size=int(corpus["patch_size"]))
        blocks = group_blocks(x[mask], group_names)
        plan = learn.select_budgeted_groups(
            [blocks[g] for g in group_names], y[mask],
            [costs[g] for g in group_names], budget_ms)
        picked = set(plan.group_names)
        chosen = tuple(g for g in group_names if g in picked)
        if not chosen:
            raise ValueError("budget admits no feature group")
    x_sel, chosen = subset_columns(x, chosen, group_names)
    reg = learn.train_stagewise(x_sel[mask], y[mask], n_stages=n_stages,
                                ridge_lambda=ridge_lambda)
    lut = learn.build_error_lut(reg.predict, x_sel[~mask], y[~mask],
                                d_max=float(corpus["d_max"]),
                                min_count=lut_min_count)
    model = learn.DepthModel(
        regressor=reg, group_names=chosen,
        patch_size=int(corpus["patch_size"]), d_max=float(corpus["d_max"]),
        lut=lut, flow_sigma_px=float(corpus["flow_sigma_px"]))
    return model, plan


def holdout_rmse(model, corpus, n_stages=None):
    x = np.asarray(corpus["features"], dtype=np.float64)
    y = np.asarray(corpus["depths"], dtype=np.float64)
    mask = np.asarray(corpus["train_mask"], dtype=bool)
    group_names = tuple(str(g) for g in corpus["group_names"])
    x_sel, _ = subset_columns(x, model.group_names, group_names)
    pred = model.regressor.predict(x_sel[~mask], n_stages=n_stages)
    return float(np.sqrt(np.mean((pred - y[~mask]) ** 2)))


# ---------------------------------------------------------------------------
# Paired-seed evaluation.

def run_pair(cfg_kwargs, model, seeds, modes=(MODE_SINGLE, MODE_MULTIPLE),
             library=None):
    """Run every mode on identical scenarios; returns {mode: [reports]}."""
    if library is None:
        base = RunConfig(seed=0, **cfg_kwargs)
        library = traj_lib.TrajectoryLibrary.build(
            kappa_max=base.yaw_rate_max / base.v_cruise)
    out = {m: [] for m in modes}
    for seed in seeds:
        scenario = None
        for mode in modes:
            cfg = RunConfig(mode=mode, seed=seed, **cfg_kwargs)
            if scenario is None:
                scenario = sim_world.generate_scenario(
                    cfg.density, cfg.bounds, cfg.seed,
                    goal_direction=cfg.goal_direction)
            res = run_episode(cfg, model=model, scenario=scenario,
                              library=library)
            out[mode].append(res.report)
    return out


def sign_test_greater(a, b):
    """One-sided paired sign test p-value for median(a - b) > 0."""
    from scipy import stats
    diffs = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    nz = diffs[diffs != 0]
    if nz.size == 0:
        return 1.0
    wins = int((nz > 0).sum())
    return float(stats.binomtest(wins, nz.size,
                                 alternative="greater").pvalue)


def aggregate_reports(reports):
    n = len(reports)
    enc = sum(r.trees_encountered for r in reports)
    av = sum(r.trees_avoided for r in reports)
    enc_l = sum(r.encountered_large for r in reports)
    av_l = sum(r.avoided_large for r in reports)
    enc_s = sum(r.encountered_small for r in reports)
    av_s = sum(r.avoided_small for r in reports)
    failures = {}
    for r in reports:
        if r.failure_type:
            failures[r.failure_type] = failures.get(r.failure_type, 0) + 1
    total = float(sum(r.distance_flown for r in reports))
    collisions = sum(r.outcome == OUTCOME_COLLISION for r in reports)
    return {
        "episodes": n,
        "mean_distance": float(np.mean([r.distance_flown for r in reports])),
        "total_distance": total,
        "collisions": collisions,
        # Survival-style figure: total flown per collision; with a clean
        # record the total itself is the (censored) lower bound.
        "distance_before_collision": total / collisions if collisions
        else total,
        "avoidance_pct": 100.0 * av / enc if enc else 100.0,
        "avoidance_pct_large": 100.0 * av_l / enc_l if enc_l else 100.0,
        "avoidance_pct_small": 100.0 * av_s / enc_s if enc_s else 100.0,
        "failures": failures,
    }


def evaluate_suite(model, cfg_kwargs, densities, n_seeds,
                   modes=(MODE_SINGLE, MODE_MULTIPLE), seed0=0,
                   library=None):
    """Paired-seed sweep over densities x modes.

    Returns a dict: rows per (density, mode) with aggregates, plus the
    paired sign-test p-value of multiple vs single mean distance per
    density when both modes are present.
    """
    rows = []
    tests = {}
    pooled = {mode: [] for mode in modes}
    for density in densities:
        kwargs = dict(cfg_kwargs)
        kwargs["density"] = density
        seeds = [seed0 + i for i in range(n_seeds)]
        by_mode = run_pair(kwargs, model, seeds, modes=modes,
                           library=library)
        for mode in modes:
            agg = aggregate_reports(by_mode[mode])
            agg.update({"density": density, "mode": mode})
            rows.append(agg)
            pooled[mode].extend(by_mode[mode])
        if MODE_SINGLE in by_mode and MODE_MULTIPLE in by_mode:
            d_multi = [r.distance_flown for r in by_mode[MODE_MULTIPLE]]
            d_single = [r.distance_flown for r in by_mode[MODE_SINGLE]]
            tests[repr(density)] = {
                "mean_multiple": float(np.mean(d_multi)),
                "mean_single": float(np.mean(d_single)),
                "sign_test_p": sign_test_greater(d_multi, d_single),
            }
    overall = {}
    for mode in modes:
        agg = aggregate_reports(pooled[mode])
        agg.update({"density": "all", "mode": mode})
        overall[mode] = agg
    if MODE_SINGLE in overall and MODE_MULTIPLE in overall:
        d_multi = [r.distance_flown for r in pooled[MODE_MULTIPLE]]
        d_single = [r.distance_flown for r in pooled[MODE_SINGLE]]
        tests["all"] = {
            "mean_multiple": float(np.mean(d_multi)),
            "mean_single": float(np.mean(d_single)),
            "sign_test_p": sign_test_greater(d_multi, d_single),
        }
    return {"rows": rows, "paired_tests": tests, "overall": overall}


def write_suite_csv(suite, path):
    cols = ["density", "mode", "episodes", "mean_distance", "total_distance",
            "collisions", "distance_before_collision", "avoidance_pct",
            "avoidance_pct_large", "avoidance_pct_small"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in suite["rows"] + list(suite.get("overall", {}).values()):
            fh.write(",".join(str(row[c]) for c in cols) + "\n")


# ---------------------------------------------------------------------------
# Scripted fading-memory scenario: dodge one tree line, get forced back
# by a second, and rely on remembered points to not clip the first.

def fov_memory_scenario():
    """Hand-placed scene for the narrow-FOV memory test.

    A walled funnel ends at a blocker fence that forces a sharp left
    turn. The inner-corner tree sits on the left flank at the turn
    point, well outside the 50 degree field of view by then; it was
    only visible during the straight approach. With memory the planner
    turns wide of it, without memory the escape arc sweeps into it.
    """
    trees = np.array([
        # funnel walls
        [6.0, 28.8, 0.45], [8.0, 28.8, 0.45], [10.0, 28.8, 0.45],
        [6.0, 31.2, 0.45], [8.0, 31.2, 0.45],
        # inner corner: the tree the memoryless planner forgets
        [10.8, 31.4, 0.45],
        # blocker fence closing the funnel
        [11.8, 30.0, 0.45], [11.8, 28.8, 0.45],
        [11.8, 27.6, 0.45], [11.8, 26.4, 0.45],
    ])
    return sim_world.ForestScenario(
        trees=trees, bounds=(0.0, 20.0, 24.0, 40.0), density=0.0,
        seed=0, goal_direction=(1.0, 0.0))


def fov_memory_config(tau, seed=0):
    return RunConfig(
        mode=MODE_ORACLE, seed=seed, tau=tau,
        bounds=(0.0, 20.0, 24.0, 40.0), max_distance=25.0,
        horizontal_fov_deg=50.0, frame_width=160, frame_height=120,
        patch_size=8)


def run_fov_memory_test(tau, seeds=(0, 1, 2), library=None):
    """Run the scripted scene at a given memory constant.

    Returns the list of reports (one per seed)."""
    scenario = fov_memory_scenario()
    if library is None:
        cfg0 = fov_memory_config(tau, 0)
        library = traj_lib.TrajectoryLibrary.build(
            kappa_max=cfg0.yaw_rate_max / cfg0.v_cruise)
    reports = []
    for seed in seeds:
        cfg = fov_memory_config(tau, seed)
        res = run_episode(cfg, model=None, scenario=scenario,
                          library=library)
        reports.append(res.report)
    return reports
