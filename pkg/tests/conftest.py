"""Shared scene builders for the test suite."""

import numpy as np
import pytest

from dima.world import Agent, EgoState, MapPolyline, Scene

HORIZON = 6
DT = 0.5


def still_traj(x, y):
    return np.tile([float(x), float(y)], (HORIZON, 1))


def moving_traj(x, y, vx, vy, dt=DT):
    steps = np.arange(HORIZON)[:, None] * dt
    return np.array([x, y]) + steps * np.array([vx, vy])


def make_agent(agent_id=0, x=0.0, y=0.0, heading=0.0, length=4.0, width=2.0,
               speed=0.0, category="car", traj=None):
    if traj is None:
        traj = still_traj(x, y)
    return Agent(id=agent_id, category=category, length=length, width=width,
                 heading=heading, speed=speed, trajectory=traj)


def make_scene(agents=(), map_lines=None, gt=None, speeds=None, kind="straight",
               scene_id="test-scene"):
    if map_lines is None:
        map_lines = [MapPolyline(0, "lane-center",
                                 np.array([[-14.0, 0.0], [26.0, 0.0]]))]
    if gt is None:
        gt = moving_traj(0.0, 0.0, 4.0, 0.0)[1:]
        gt = np.vstack([gt, gt[-1] + (gt[-1] - gt[-2])])
    if speeds is None:
        speeds = np.full(4, 4.0)
    return Scene(scene_id=scene_id, kind=kind,
                 ego=EgoState(4.0, 1.8, speeds, np.asarray(gt, dtype=np.float64)),
                 agents=list(agents), map_lines=list(map_lines),
                 horizon=HORIZON, dt=DT)


@pytest.fixture
def lone_agent_scene():
    """One stationary car straddling the ego path at x=6."""
    return make_scene(agents=[make_agent(agent_id=3, x=6.0, y=0.0)])


def named_arrays(params):
    """Flatten a weight dict into (sorted names, arrays) for grad_check."""
    names = sorted(params)
    return names, [params[n].data.copy() for n in names]
