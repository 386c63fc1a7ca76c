"""Deterministic scenario generator.

Each (kind, seed) pair maps to exactly one scene.  Scenes are ego centric:
the ego box sits at the origin heading +x, two lanes run along the maneuver
path (ego lane center y=0, neighbor lane y=+3.5) between boundary lines, and
every maneuver leaves its distinctive signature inside the near field so that
a rasterized view identifies the kind: turns curve the lanes, a three-point
turn faces a dead end, resume-from-stop faces a crossing stripe, an overtake
faces a slow blocker in lane, and a stopped ego sits behind a stationary car.
"""

from __future__ import annotations

import math

import numpy as np

from dima.errors import DomainError
from dima.world.corridor import sweep_boxes
from dima.world.geometry import OrientedBox, boxes_intersect
from dima.world.types import Agent, EgoState, MapPolyline, Scene, agent_position_at

KINDS = (
    "straight",
    "turn-left",
    "turn-right",
    "three-point-turn",
    "resume-from-stop",
    "overtake",
)

EGO_LENGTH = 4.0
EGO_WIDTH = 1.8
LANE_WIDTH = 3.5
HORIZON = 6
DT = 0.5
_HISTORY = 4  # speed history samples kept per scene
_CORRIDOR_MARGIN = 0.4  # placement keeps agents this clear of the ego sweep


def _rng_for(kind: str, seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), KINDS.index(kind))))


# ---------------------------------------------------------------------------
# path model: arc-length -> (position, heading)


def _path_point(d: float, s0: float, radius: float, phi: float, sign: float):
    """Straight run of s0, then an arc of angle phi, then straight again."""
    if d <= s0:
        return np.array([d, 0.0]), 0.0
    a = (d - s0) / radius
    if a <= phi:
        cx, cy = s0, sign * radius
        return np.array([cx + radius * math.sin(a), cy - sign * radius * math.cos(a)]), sign * a
    end_heading = sign * phi
    ex = s0 + radius * math.sin(phi)
    ey = sign * radius * (1.0 - math.cos(phi))
    rest = d - s0 - radius * phi
    return (
        np.array([ex + rest * math.cos(end_heading), ey + rest * math.sin(end_heading)]),
        end_heading,
    )


class _Path:
    """Ego-lane centerline; straight when phi == 0."""

    def __init__(self, s0: float = 0.0, radius: float = 1.0, phi: float = 0.0, sign: float = 1.0):
        self.s0, self.radius, self.phi, self.sign = s0, radius, phi, sign

    def at(self, d: float):
        return _path_point(d, self.s0, self.radius, self.phi, self.sign)

    def offset_polyline(self, lateral: float, d0: float, d1: float, step: float = 1.5) -> np.ndarray:
        ds = np.arange(d0, d1 + step / 2, step)
        points = []
        for d in ds:
            p, h = self.at(float(d))
            normal = np.array([-math.sin(h), math.cos(h)])
            points.append(p + lateral * normal)
        return np.array(points)


def _road_lines(path: _Path, d0: float = -14.0, d1: float = 26.0) -> list[MapPolyline]:
    return [
        MapPolyline(0, "lane-center", path.offset_polyline(0.0, d0, d1)),
        MapPolyline(1, "lane-center", path.offset_polyline(LANE_WIDTH, d0, d1)),
        MapPolyline(2, "boundary", path.offset_polyline(-LANE_WIDTH / 2.0, d0, d1)),
        MapPolyline(3, "boundary", path.offset_polyline(LANE_WIDTH * 1.5, d0, d1)),
    ]


def _agent_boxes(agent: Agent, dt: float) -> list[OrientedBox]:
    """Boxes at t = 0 .. horizon*dt inclusive (one step past the trajectory)."""
    boxes = []
    for i in range(len(agent.trajectory) + 1):
        p = agent_position_at(agent, i * dt, dt)
        boxes.append(OrientedBox(float(p[0]), float(p[1]), agent.heading,
                                 agent.length, agent.width))
    return boxes


_CATEGORY_DIMS = {
    "car": ((3.8, 4.8), (1.7, 2.0)),
    "truck": ((6.0, 9.0), (2.2, 2.6)),
    "pedestrian": ((0.5, 0.8), (0.5, 0.8)),
    "bicycle": ((1.6, 2.0), (0.5, 0.7)),
}


def _sample_category(rng: np.random.Generator) -> str:
    return str(rng.choice(["car", "truck", "pedestrian", "bicycle"], p=[0.6, 0.15, 0.15, 0.1]))


def _const_velocity_traj(start: np.ndarray, heading: float, speed: float) -> np.ndarray:
    steps = np.arange(HORIZON) * DT * speed
    direction = np.array([math.cos(heading), math.sin(heading)])
    return start[None, :] + steps[:, None] * direction[None, :]


def _lane_agent(rng: np.random.Generator, path: _Path, agent_id: int,
                oncoming: bool, d_max: float) -> Agent:
    category = _sample_category(rng)
    if category in ("pedestrian", "bicycle"):
        # keep the footways busy: roadside position, slow drift
        side = rng.choice([-1.0, 1.0])
        pos = np.array([rng.uniform(-12.0, min(14.0, d_max)), side * rng.uniform(3.2, 6.5)])
        heading = rng.uniform(-math.pi, math.pi)
        speed = rng.uniform(0.0, 1.2)
    else:
        d = rng.uniform(-16.0, d_max)
        lateral = LANE_WIDTH if oncoming else 0.0
        p, h = path.at(float(d))
        normal = np.array([-math.sin(h), math.cos(h)])
        pos = p + lateral * normal
        heading = h + math.pi if oncoming else h
        speed = rng.uniform(2.0, 7.0)
    (l_lo, l_hi), (w_lo, w_hi) = _CATEGORY_DIMS[category]
    return Agent(
        id=agent_id,
        category=category,
        length=rng.uniform(l_lo, l_hi),
        width=rng.uniform(w_lo, w_hi),
        heading=heading,
        speed=speed,
        trajectory=_const_velocity_traj(pos, heading, speed),
    )


def _place_agents(rng: np.random.Generator, path: _Path, gt: np.ndarray,
                  count: int, fixed: list[Agent], d_max: float = 18.0) -> list[Agent]:
    """Rejection-sample agents clear of each other and of the ego sweep."""
    sweep = sweep_boxes(gt, EGO_LENGTH, EGO_WIDTH, _CORRIDOR_MARGIN)
    placed = list(fixed)
    next_id = max((a.id for a in placed), default=-1) + 1
    for _ in range(count):
        for _attempt in range(40):
            cand = _lane_agent(rng, path, next_id, oncoming=bool(rng.random() < 0.4),
                               d_max=d_max)
            boxes = _agent_boxes(cand, DT)
            if any(boxes_intersect(boxes[0], _agent_boxes(o, DT)[0]) for o in placed):
                continue
            if any(boxes_intersect(b, s) for b in boxes for s in sweep):
                continue
            placed.append(cand)
            next_id += 1
            break
    return placed


def _speed_history(current: float) -> np.ndarray:
    return np.full(_HISTORY, current, dtype=np.float64)


def _waypoints_along(path: _Path, speeds: np.ndarray) -> np.ndarray:
    d = np.cumsum(speeds * DT)
    return np.array([path.at(float(x))[0] for x in d])


def _gen_straight(rng: np.random.Generator):
    path = _Path()
    lines = _road_lines(path)
    fixed: list[Agent] = []
    if rng.random() < 0.12:
        # stopped ego boxed in behind a stationary car
        gt = np.zeros((HORIZON, 2))
        history = _speed_history(0.0)
        blocker_x = rng.uniform(4.5, 5.5)
        fixed = [Agent(0, "car", rng.uniform(3.8, 4.6), rng.uniform(1.7, 2.0), 0.0, 0.0,
                       np.tile([blocker_x, 0.0], (HORIZON, 1)))]
    else:
        v = rng.uniform(5.0, 7.5)
        gt = _waypoints_along(path, np.full(HORIZON, v))
        history = _speed_history(v)
    return path, lines, gt, history, fixed


def _gen_turn(rng: np.random.Generator, sign: float):
    s0 = rng.uniform(2.0, 4.0)
    v = rng.uniform(3.5, 5.5)
    phi = math.radians(rng.uniform(28.0, 55.0))
    radius = (v * DT * HORIZON - s0) / phi
    path = _Path(s0, radius, phi, sign)
    lines = _road_lines(path)
    gt = _waypoints_along(path, np.full(HORIZON, v))
    return path, lines, gt, _speed_history(v), []


def _gen_three_point_turn(rng: np.random.Generator):
    path = _Path()
    end = rng.uniform(5.5, 7.5)
    lines = [
        MapPolyline(0, "lane-center", path.offset_polyline(0.0, -14.0, end - 1.0)),
        MapPolyline(1, "lane-center", path.offset_polyline(LANE_WIDTH, -14.0, end - 1.0)),
        MapPolyline(2, "boundary", path.offset_polyline(-LANE_WIDTH / 2.0, -14.0, end)),
        MapPolyline(3, "boundary", path.offset_polyline(LANE_WIDTH * 1.5, -14.0, end)),
        MapPolyline(4, "boundary", np.array([[end, -LANE_WIDTH / 2.0],
                                             [end, LANE_WIDTH * 1.5]])),
    ]
    jitter = rng.uniform(-6.0, 6.0, size=6)
    headings = np.radians(np.array([35.0, 75.0, 105.0, 135.0, 160.0, 178.0]) + jitter)
    speeds = np.array([2.2, 2.0, -1.8, -1.6, 2.0, 2.2]) * rng.uniform(0.9, 1.1)
    pos = np.zeros(2)
    gt = []
    for h, s in zip(headings, speeds):
        pos = pos + s * DT * np.array([math.cos(h), math.sin(h)])
        gt.append(pos.copy())
    return path, lines, np.array(gt), _speed_history(abs(speeds[0])), []


def _gen_resume(rng: np.random.Generator):
    path = _Path()
    lines = _road_lines(path)
    xc = rng.uniform(3.0, 4.5)
    lines.append(MapPolyline(4, "crossing", np.array([[xc, -LANE_WIDTH / 2.0],
                                                      [xc, LANE_WIDTH * 1.5]])))
    accel = rng.uniform(1.2, 2.2)
    speeds = np.minimum(accel * DT * np.arange(1, HORIZON + 1), rng.uniform(4.0, 6.0))
    gt = _waypoints_along(path, speeds)
    return path, lines, gt, _speed_history(0.0), []


def _gen_overtake(rng: np.random.Generator):
    path = _Path()
    lines = _road_lines(path)
    v = rng.uniform(5.5, 6.5)
    profile = np.array([0.6, 1.0, 1.0, 1.0, 0.8, 0.3]) * LANE_WIDTH
    x = np.cumsum(np.full(HORIZON, v * DT))
    gt = np.column_stack([x, profile])
    lead_x = rng.uniform(8.0, 9.5)
    lead_v = rng.uniform(0.3, 0.7)
    lead = Agent(0, "car", rng.uniform(3.8, 4.6), rng.uniform(1.7, 2.0), 0.0, lead_v,
                 _const_velocity_traj(np.array([lead_x, 0.0]), 0.0, lead_v))
    return path, lines, gt, _speed_history(v), [lead]


_AGENT_RANGE = {
    "straight": (1, 6),
    "turn-left": (1, 6),
    "turn-right": (1, 6),
    "three-point-turn": (0, 3),
    "resume-from-stop": (1, 6),
    "overtake": (0, 4),
}


def generate_scene(kind: str, seed: int) -> Scene:
    """One deterministic scene of the given kind."""
    if kind not in KINDS:
        raise DomainError(f"unknown scenario kind {kind!r}")
    rng = _rng_for(kind, seed)
    if kind == "straight":
        path, lines, gt, history, fixed = _gen_straight(rng)
    elif kind == "turn-left":
        path, lines, gt, history, fixed = _gen_turn(rng, +1.0)
    elif kind == "turn-right":
        path, lines, gt, history, fixed = _gen_turn(rng, -1.0)
    elif kind == "three-point-turn":
        path, lines, gt, history, fixed = _gen_three_point_turn(rng)
    elif kind == "resume-from-stop":
        path, lines, gt, history, fixed = _gen_resume(rng)
    else:
        path, lines, gt, history, fixed = _gen_overtake(rng)

    lo, hi = _AGENT_RANGE[kind]
    d_max = 18.0
    if kind == "three-point-turn":
        # nothing drives past the dead end
        d_max = float(lines[4].points[0, 0]) - 3.0
    agents = _place_agents(rng, path, gt, int(rng.integers(lo, hi + 1)), fixed, d_max=d_max)
    scene = Scene(
        scene_id=f"{kind}-{seed:08d}",
        kind=kind,
        ego=EgoState(EGO_LENGTH, EGO_WIDTH, history, gt),
        agents=agents,
        map_lines=lines,
        horizon=HORIZON,
        dt=DT,
    )
    _assert_gt_clear(scene)
    return scene


def _assert_gt_clear(scene: Scene) -> None:
    """The ground truth must never collide with any agent at any step."""
    sweep = sweep_boxes(scene.ego.gt_trajectory, scene.ego.length, scene.ego.width)
    for agent in scene.agents:
        for i, ego_box in enumerate(sweep):
            p = agent_position_at(agent, i * scene.dt, scene.dt)
            box = OrientedBox(float(p[0]), float(p[1]), agent.heading,
                              agent.length, agent.width)
            if boxes_intersect(ego_box, box):
                raise DomainError(
                    f"scene {scene.scene_id}: ground truth hits agent {agent.id} at step {i}"
                )


def advance(scene: Scene) -> Scene:
    """The same world one step later, kept in the base ego frame.

    Agents slide along their trajectories (constant-velocity extrapolation at
    the tail), the ego ground truth shifts by one waypoint, and nothing is
    re-centered, so a fully static scene advances to an identical one.
    """
    agents = []
    for agent in scene.agents:
        traj = np.array([
            agent_position_at(agent, (k + 1) * scene.dt, scene.dt) for k in range(scene.horizon)
        ])
        agents.append(Agent(agent.id, agent.category, agent.length, agent.width,
                            agent.heading, agent.speed, traj))
    gt = scene.ego.gt_trajectory
    tail = gt[-1] + (gt[-1] - gt[-2]) if len(gt) >= 2 else gt[-1]
    new_gt = np.vstack([gt[1:], tail])
    step_speed = float(np.linalg.norm(gt[0]) / scene.dt)
    speeds = np.append(scene.ego.speeds[1:], step_speed)
    return Scene(
        scene_id=f"{scene.scene_id}+1",
        kind=scene.kind,
        ego=EgoState(scene.ego.length, scene.ego.width, speeds, new_gt),
        agents=agents,
        map_lines=scene.map_lines,
        horizon=scene.horizon,
        dt=scene.dt,
    )
