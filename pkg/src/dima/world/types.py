"""Scene record types.

All scenes live in the ego frame at their base time: the ego box is at the
origin heading along +x.  Every float field is quantized to 9 significant
digits at construction so that dataset round trips are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dima.errors import DimensionError, DomainError

AGENT_CATEGORIES = ("car", "truck", "pedestrian", "bicycle")
MAP_KINDS = ("lane-center", "boundary", "crossing")


def q9(values):
    """Round to 9 significant digits (idempotent; keeps file IO lossless)."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("non-finite value in scene data")
    out = np.array([float(f"{v:.9g}") for v in arr.flat], dtype=np.float64).reshape(arr.shape)
    out = out + 0.0  # fold -0.0 into 0.0 so serialization is stable
    return float(out) if out.shape == () else out


@dataclass
class Agent:
    """A traffic participant.  ``trajectory[0]`` is its pose at t=0."""

    id: int
    category: str
    length: float
    width: float
    heading: float
    speed: float
    trajectory: np.ndarray  # (horizon, 2)

    def __post_init__(self):
        if self.category not in AGENT_CATEGORIES:
            raise DomainError(f"unknown agent category {self.category!r}")
        self.length = q9(self.length)
        self.width = q9(self.width)
        self.heading = q9(self.heading)
        self.speed = q9(self.speed)
        self.trajectory = q9(np.asarray(self.trajectory, dtype=np.float64))
        if self.trajectory.ndim != 2 or self.trajectory.shape[1] != 2:
            raise DimensionError(f"agent trajectory must be (h, 2), got {self.trajectory.shape}")
        if self.length <= 0 or self.width <= 0:
            raise DomainError("agent box dims must be positive")


def agent_position_at(agent: Agent, t: float, dt: float) -> np.ndarray:
    """Position at continuous time t, linearly extrapolated past the horizon."""
    traj = agent.trajectory
    if len(traj) == 1:
        return traj[0]
    u = t / dt
    last = len(traj) - 1
    if u >= last:
        return traj[last] + (u - last) * (traj[last] - traj[last - 1])
    lo = int(np.floor(max(u, 0.0)))
    frac = u - lo
    return traj[lo] * (1.0 - frac) + traj[lo + 1] * frac


@dataclass
class MapPolyline:
    id: int
    kind: str
    points: np.ndarray  # (m, 2), m >= 2

    def __post_init__(self):
        if self.kind not in MAP_KINDS:
            raise DomainError(f"unknown map polyline kind {self.kind!r}")
        self.points = q9(np.asarray(self.points, dtype=np.float64))
        if self.points.ndim != 2 or self.points.shape[1] != 2 or len(self.points) < 2:
            raise DimensionError("polyline needs at least two (x, y) points")


@dataclass
class EgoState:
    length: float
    width: float
    speeds: np.ndarray  # speed history up to t=0, oldest first
    gt_trajectory: np.ndarray  # (horizon, 2) future waypoints at dt, 2dt, ...

    def __post_init__(self):
        self.length = q9(self.length)
        self.width = q9(self.width)
        self.speeds = q9(np.atleast_1d(np.asarray(self.speeds, dtype=np.float64)))
        self.gt_trajectory = q9(np.asarray(self.gt_trajectory, dtype=np.float64))
        if self.gt_trajectory.ndim != 2 or self.gt_trajectory.shape[1] != 2:
            raise DimensionError("ego trajectory must be (h, 2)")


@dataclass
class Scene:
    scene_id: str
    kind: str
    ego: EgoState
    agents: list[Agent] = field(default_factory=list)
    map_lines: list[MapPolyline] = field(default_factory=list)
    horizon: int = 6
    dt: float = 0.5

    def __post_init__(self):
        self.dt = q9(self.dt)
        if len(self.ego.gt_trajectory) != self.horizon:
            raise DimensionError(
                f"ego trajectory has {len(self.ego.gt_trajectory)} steps, horizon {self.horizon}"
            )
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise DomainError(f"duplicate agent ids in scene {self.scene_id}")
        mids = [m.id for m in self.map_lines]
        if len(set(mids)) != len(mids):
            raise DomainError(f"duplicate map polyline ids in scene {self.scene_id}")
        for agent in self.agents:
            if len(agent.trajectory) != self.horizon:
                raise DimensionError(
                    f"agent {agent.id} trajectory has {len(agent.trajectory)} steps,"
                    f" horizon {self.horizon}"
                )
