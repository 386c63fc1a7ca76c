"""Swept ego footprint along a planned or logged trajectory.

Used to answer "does anything cross the ego's path" questions and to score
scene edits: an agent interacts with the plan iff its footprint, advanced to
the matching timestep, intersects the (optionally inflated) ego box swept
along the waypoints.
"""

from __future__ import annotations

import math

import numpy as np

from dima.world.geometry import OrientedBox, boxes_intersect
from dima.world.types import Agent, Scene, agent_position_at


def sweep_boxes(trajectory: np.ndarray, length: float, width: float,
                margin: float = 0.0) -> list[OrientedBox]:
    """Ego boxes at t=0 (origin) and at every waypoint, one per timestep.

    Headings follow the waypoint diffs; a stationary step keeps the previous
    heading (initially +x, the ego frame convention).
    """
    points = np.vstack([[0.0, 0.0], np.asarray(trajectory, dtype=np.float64)])
    boxes = []
    heading = 0.0
    for i, p in enumerate(points):
        if i > 0:
            step = points[i] - points[i - 1]
            if np.linalg.norm(step) > 1e-9:
                heading = math.atan2(step[1], step[0])
        boxes.append(OrientedBox(float(p[0]), float(p[1]), heading,
                                 length + 2 * margin, width + 2 * margin))
    return boxes


def agent_boxes_at_steps(agent: Agent, n_steps: int, dt: float) -> list[OrientedBox]:
    """Agent footprint at t = 0, dt, ..., n_steps * dt (constant heading)."""
    out = []
    for i in range(n_steps + 1):
        p = agent_position_at(agent, i * dt, dt)
        out.append(OrientedBox(float(p[0]), float(p[1]), agent.heading,
                               agent.length, agent.width))
    return out


def agent_crosses_plan(scene: Scene, agent: Agent, trajectory: np.ndarray,
                       margin: float = 0.0) -> bool:
    """True iff the agent's swept footprint meets the ego corridor at any step."""
    ego = sweep_boxes(trajectory, scene.ego.length, scene.ego.width, margin)
    ag = agent_boxes_at_steps(agent, len(ego) - 1, scene.dt)
    return any(boxes_intersect(e, a) for e, a in zip(ego, ag))
