"""Receding-horizon trajectory scoring and selection.

Each planning cycle every selected library trajectory is transformed to
the planning frame at the current pose estimate and scored with three
terms:

  total = mean over interpretation clouds of summed collision score
        + w_dir * |end yaw - goal bearing|
        + w_trans * perpendicular endpoint offset from the goal line

The argmin wins; exact ties go to the lower trajectory id. Collision is
averaged across interpretations so a path that is safe in every scene
hypothesis beats one that gambles on a single depth map being right.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .sim_world import wrap_angle
from .traj_lib import transform_to_world

DEFAULT_W_DIR = 0.3
DEFAULT_W_TRANS = 0.05
DEFAULT_ROBOT_RADIUS = 0.35
DEFAULT_REPLAN_PERIOD = 0.2


@dataclass(frozen=True)
class PlannerConfig:
    w_dir: float = DEFAULT_W_DIR
    w_trans: float = DEFAULT_W_TRANS
    robot_radius: float = DEFAULT_ROBOT_RADIUS
    replan_period: float = DEFAULT_REPLAN_PERIOD
    goal_direction: tuple = (1.0, 0.0)

    def __post_init__(self):
        if self.w_dir < 0 or self.w_trans < 0:
            raise ValueError("penalty weights must be >= 0")
        if self.replan_period <= 0:
            raise ValueError("replan_period must be positive")

    @property
    def goal_bearing(self) -> float:
        return math.atan2(self.goal_direction[1], self.goal_direction[0])


@dataclass(frozen=True)
class TrajectoryScore:
    traj_id: int
    collision: float
    direction_penalty: float
    translation_penalty: float
    total: float


@dataclass
class PlanResult:
    traj_id: int
    world_samples: np.ndarray
    scores: list = field(repr=False)
    timestamp: float = 0.0

    def top(self, n=5):
        return sorted(self.scores, key=lambda s: (s.total, s.traj_id))[:n]

    def log_record(self):
        return {
            "t": self.timestamp,
            "chosen": self.traj_id,
            "top": [
                {"id": s.traj_id, "collision": s.collision,
                 "dir": s.direction_penalty, "trans": s.translation_penalty,
                 "total": s.total}
                for s in self.top(5)
            ],
        }


def score_trajectory(traj, clouds, vehicle_pose, config, now,
                     world_samples=None):
    """Score one trajectory against the per-interpretation clouds.

    vehicle_pose is (x, y, yaw) in the planning frame. world_samples may
    be passed to reuse an already transformed (S, 3) array.
    """
    if world_samples is None:
        world_samples = transform_to_world(traj.samples, vehicle_pose)
    collision = 0.0
    if clouds:
        xy = world_samples[:, :2]
        for cloud in clouds:
            collision += float(
                cloud.score_samples(xy, now, config.robot_radius).sum())
        collision /= len(clouds)
    gb = config.goal_bearing
    direction = abs(wrap_angle(world_samples[-1, 2] - gb))
    dx = world_samples[-1, 0] - vehicle_pose[0]
    dy = world_samples[-1, 1] - vehicle_pose[1]
    translation = abs(math.cos(gb) * dy - math.sin(gb) * dx)
    total = collision + config.w_dir * direction + config.w_trans * translation
    return TrajectoryScore(traj_id=traj.traj_id, collision=collision,
                           direction_penalty=direction,
                           translation_penalty=translation, total=total)


def _stack_and_ids(library):
    if hasattr(library, "selected_stack"):
        return library.selected_stack
    trajectories = library.selected if hasattr(library, "selected") else library
    if not trajectories:
        raise ValueError("empty trajectory set")
    return (np.stack([t.samples for t in trajectories]),
            np.array([t.traj_id for t in trajectories], dtype=np.int64))


def plan(library, clouds, vehicle_pose, config, now):
    """Pick the lowest-total trajectory; ties go to the lower id.

    library is a TrajectoryLibrary or a plain list of trajectories.
    Returns a PlanResult carrying the chosen trajectory in the planning
    frame, ready for the tracker. All trajectories are scored in one
    batch per cloud; results match score_trajectory exactly.
    """
    body, ids = _stack_and_ids(library)
    n, s_count, _ = body.shape
    x0, y0, yaw0 = (float(vehicle_pose[0]), float(vehicle_pose[1]),
                    float(vehicle_pose[2]))
    c, s = math.cos(yaw0), math.sin(yaw0)
    world = np.empty_like(body)
    world[:, :, 0] = x0 + c * body[:, :, 0] - s * body[:, :, 1]
    world[:, :, 1] = y0 + s * body[:, :, 0] + c * body[:, :, 1]
    world[:, :, 2] = body[:, :, 2] + yaw0

    collision = np.zeros(n)
    if clouds:
        flat = np.ascontiguousarray(world[:, :, :2].reshape(-1, 2))
        for cloud in clouds:
            per_sample = cloud.score_samples(flat, now, config.robot_radius)
            collision += per_sample.reshape(n, s_count).sum(axis=1)
        collision /= len(clouds)

    gb = config.goal_bearing
    direction = np.abs(wrap_angle(world[:, -1, 2] - gb))
    dx = world[:, -1, 0] - x0
    dy = world[:, -1, 1] - y0
    translation = np.abs(math.cos(gb) * dy - math.sin(gb) * dx)
    totals = collision + config.w_dir * direction + config.w_trans * translation

    order = np.lexsort((ids, totals))
    best = int(order[0])
    scores = [TrajectoryScore(traj_id=int(ids[i]), collision=float(collision[i]),
                              direction_penalty=float(direction[i]),
                              translation_penalty=float(translation[i]),
                              total=float(totals[i]))
              for i in range(n)]
    return PlanResult(traj_id=int(ids[best]), world_samples=world[best],
                      scores=scores, timestamp=float(now))


def write_log_line(fh, result, extra=None):
    rec = result.log_record()
    if extra:
        rec.update(extra)
    fh.write(json.dumps(rec, sort_keys=True) + "\n")
