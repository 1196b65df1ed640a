"""Pure pursuit trajectory tracking with PD heading control.

The tracker finds the closest trajectory sample to the estimated
position, aims at the sample one lookahead arc length further along
(clamped to the trajectory end), and drives heading error to zero with a
PD law. Speed is open loop at v_cruise, tapering to zero over the last
lookahead of remaining path. A pose estimate that has been invalid for
more than HOLD_AFTER_INVALID seconds commands a zero-speed hold.
"""

import math
from dataclasses import dataclass

import numpy as np

from .sim_world import wrap_angle

HOLD_AFTER_INVALID = 0.5


@dataclass(frozen=True)
class PursuitConfig:
    lookahead: float = 1.0
    kp: float = 3.0
    kd: float = 0.05
    v_cruise: float = 1.5
    control_rate: float = 50.0
    yaw_rate_max: float = 1.2
    v_max: float = 3.0

    def __post_init__(self):
        if self.lookahead <= 0:
            raise ValueError("lookahead must be positive")
        if self.kp < 0 or self.kd < 0:
            raise ValueError("gains must be >= 0")
        if self.control_rate <= 0:
            raise ValueError("control_rate must be positive")


@dataclass(frozen=True)
class ControlCommand:
    forward_speed: float
    yaw_rate: float


HOLD = ControlCommand(forward_speed=0.0, yaw_rate=0.0)


def _as_pose(pose_estimate):
    pose = getattr(pose_estimate, "pose", pose_estimate)
    return float(pose[0]), float(pose[1]), float(pose[2])


def pursuit_step(samples, pose_estimate, config, prev_error):
    """One tracking step against world-frame samples (S, 3).

    Returns (ControlCommand, heading_error); feed the error back in as
    prev_error on the next call for the derivative term.
    """
    if samples is None or len(samples) == 0:
        raise ValueError("empty trajectory")
    x, y, yaw = _as_pose(pose_estimate)
    d2 = (samples[:, 0] - x) ** 2 + (samples[:, 1] - y) ** 2
    i_close = int(np.argmin(d2))

    seg = np.diff(samples[:, :2], axis=0)
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])
    target_s = arc[i_close] + config.lookahead
    i_way = int(np.searchsorted(arc, target_s))
    i_way = min(i_way, len(samples) - 1)

    wx, wy = samples[i_way, 0], samples[i_way, 1]
    if i_way == i_close:
        # Degenerate: waypoint collapsed onto the closest sample (end of
        # path); steer along the final sample heading instead of toward
        # a point we are standing on.
        err = wrap_angle(samples[-1, 2] - yaw)
    else:
        err = wrap_angle(math.atan2(wy - y, wx - x) - yaw)

    yaw_rate = config.kp * err + config.kd * (err - prev_error) * config.control_rate
    yaw_rate = float(np.clip(yaw_rate, -config.yaw_rate_max, config.yaw_rate_max))

    remaining = arc[-1] - arc[i_close]
    speed = config.v_cruise * min(1.0, remaining / config.lookahead)
    speed = float(np.clip(speed, 0.0, config.v_max))
    return ControlCommand(forward_speed=speed, yaw_rate=yaw_rate), float(err)


class PursuitTracker:
    """Stateful wrapper: holds the active trajectory and the previous
    heading error; tolerates trajectory replacement between ticks."""

    def __init__(self, config: PursuitConfig | None = None):
        self.config = config or PursuitConfig()
        self.prev_error = 0.0
        self.samples = None

    def set_trajectory(self, world_samples):
        self.samples = world_samples

    def step(self, pose_estimate, invalid_elapsed=0.0):
        if self.samples is None or invalid_elapsed > HOLD_AFTER_INVALID:
            return HOLD
        cmd, err = pursuit_step(self.samples, pose_estimate, self.config,
                                self.prev_error)
        self.prev_error = err
        return cmd
