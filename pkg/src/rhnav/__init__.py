"""Receding-horizon monocular navigation: synthetic forest simulation,
patch-feature depth regression, multi-interpretation planning over a
dispersion-selected trajectory library, and flow-based relative pose.

Set RHNAV_NUMBA=0 to force the pure-numpy kernel backend, RHNAV_NUMBA=1
to require numba; unset auto-detects.
"""

__version__ = "0.1.0"

from . import (bench, control, costmap, features, harness, kernels, learn,
               perception, planner, pose_flow, sim_world, traj_lib)

__all__ = [
    "bench", "control", "costmap", "features", "harness", "kernels",
    "learn", "perception", "planner", "pose_flow", "sim_world", "traj_lib",
    "__version__",
]
