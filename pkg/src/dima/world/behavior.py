"""Discrete motion/speed labels derived from a trajectory."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dima.errors import DimensionError
from dima.world.types import Scene

MOTIONS = ("stopped", "going straight", "steering left", "steering right", "reversing")
SPEED_CLASSES = ("not moving", "slow", "moderate", "fast")

_STRAIGHT_BAND = math.radians(5.0)
_EPS = 1e-9


@dataclass(frozen=True)
class BehaviorLabel:
    motion: str
    speed: str


def _speed_class(mean_speed: float) -> str:
    if mean_speed < _EPS:
        return "not moving"
    if mean_speed < 2.0:
        return "slow"
    if mean_speed <= 6.0:
        return "moderate"
    return "fast"


def behavior_label(trajectory: np.ndarray, speeds) -> BehaviorLabel:
    """Label a trajectory (first point = current position) plus step speeds.

    Stopped pairs exactly with the "not moving" speed class.  Otherwise the
    motion comes from the net heading change between the first and last moving
    segments (under 5 degrees is straight, the sign picks the steering side),
    except that a net displacement opposing the initial heading is reversing.
    """
    traj = np.asarray(trajectory, dtype=np.float64)
    if traj.ndim != 2 or traj.shape[1] != 2 or len(traj) < 2:
        raise DimensionError("behavior_label needs at least two (x, y) points")
    speeds = np.atleast_1d(np.asarray(speeds, dtype=np.float64))
    mean_speed = float(np.abs(speeds).mean()) if speeds.size else 0.0
    speed = _speed_class(mean_speed)
    if speed == "not moving":
        return BehaviorLabel("stopped", speed)

    deltas = np.diff(traj, axis=0)
    moving = np.linalg.norm(deltas, axis=1) > _EPS
    if not moving.any():
        return BehaviorLabel("stopped", "not moving")
    first = deltas[moving][0]
    last = deltas[moving][-1]
    displacement = traj[-1] - traj[0]
    if float(displacement @ first) < 0.0:
        return BehaviorLabel("reversing", speed)
    dtheta = math.atan2(last[1], last[0]) - math.atan2(first[1], first[0])
    dtheta = math.atan2(math.sin(dtheta), math.cos(dtheta))  # wrap to (-pi, pi]
    if abs(dtheta) < _STRAIGHT_BAND:
        return BehaviorLabel("going straight", speed)
    return BehaviorLabel("steering left" if dtheta > 0 else "steering right", speed)


def ego_behavior(scene: Scene) -> BehaviorLabel:
    """Behavior of the ego ground truth (origin prepended as the t=0 pose)."""
    traj = np.vstack([[0.0, 0.0], scene.ego.gt_trajectory])
    speeds = np.linalg.norm(np.diff(traj, axis=0), axis=1) / scene.dt
    return behavior_label(traj, speeds)
