"""Auxiliary training tasks: token masking, future prediction, scene edits.

Masking happens after scene encoding: sampled grid-token rows are swapped for
one learned embedding and the reconstruction head must restore the originals.
Future prediction regresses the encoder's own grid tokens on advanced frames
(targets gradient-blocked).  Scene edits add or remove an agent, produce a
matching QA pair, and constrain the edit head's waypoints against the edited
agent set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

import dima.numerics as nm
from dima.numerics import Tensor
from dima.errors import ConfigError, DimensionError, FeasibilityError, NotFoundError
from dima.language.templates import QaPair, edit_qa_pair
from dima.world import (
    Agent,
    OrientedBox,
    Scene,
    agent_crosses_plan,
    boxes_intersect,
)

MASK_RATIO_MIN = 0.2
MASK_RATIO_MAX = 0.4

_EDIT_RADIUS = 12.0
_EDIT_QA_MARGIN = 0.5
_ADD_ATTEMPTS = 40


@dataclass(frozen=True)
class MaskSpec:
    ratio: float
    seed: int

    def __post_init__(self):
        if not MASK_RATIO_MIN <= self.ratio <= MASK_RATIO_MAX:
            raise ConfigError(
                f"mask ratio {self.ratio} outside [{MASK_RATIO_MIN}, {MASK_RATIO_MAX}]")


def mask_count(n_tokens: int, ratio: float) -> int:
    return int(math.ceil(ratio * n_tokens))


def apply_mask(b: Tensor, spec: MaskSpec, mask_embed: Tensor) -> tuple[Tensor, np.ndarray]:
    """Replace sampled token rows with the learned embedding.

    Returns (masked tokens, sorted masked row indices); unmasked rows pass
    through bit-equal.  Differentiable into both ``b`` and ``mask_embed``.
    """
    n = b.shape[0]
    rng = np.random.default_rng(spec.seed)
    idx = np.sort(rng.choice(n, size=mask_count(n, spec.ratio), replace=False))
    keep = np.ones((n, b.shape[1]))
    keep[idx] = 0.0
    ind = np.zeros((n, 1))
    ind[idx] = 1.0
    masked = nm.add(nm.mul(b, nm.constant(keep)),
                    nm.matmul(nm.constant(ind), mask_embed))
    return masked, idx


def recon_loss(b_hat: Tensor, b: Tensor, masked_rows: np.ndarray | None = None) -> Tensor:
    """Eq-style reconstruction error; all rows by default, masked-only option."""
    if masked_rows is None:
        return nm.l2_loss(b_hat, b)
    rows = np.asarray(masked_rows, dtype=np.int64)
    return nm.l2_loss(nm.gather_rows(b_hat, rows), nm.gather_rows(b, rows))


@dataclass(frozen=True)
class FutureTargets:
    b_next: Tensor    # grid tokens one step ahead, gradient-blocked
    b_next2: Tensor


def future_loss(future_pred: Tensor, targets: FutureTargets) -> Tensor:
    """Sum of the two horizon terms; ``future_pred`` stacks them row-wise."""
    hw = targets.b_next.shape[0]
    if future_pred.shape[0] != 2 * hw:
        raise DimensionError("future prediction must stack two frames")
    first = nm.l2_loss(nm.slice_rows(future_pred, 0, hw), targets.b_next)
    second = nm.l2_loss(nm.slice_rows(future_pred, hw, 2 * hw), targets.b_next2)
    return nm.add(first, second)


@dataclass(frozen=True)
class EditOp:
    kind: str                      # add | remove
    category: str | None = None    # add only: car | truck
    pose: tuple[float, float, float] | None = None   # add only: x, y, heading
    dims: tuple[float, float] | None = None          # add only: length, width
    speed: float | None = None     # add only
    target_id: int | None = None   # remove only


def _map_bounds(scene: Scene) -> tuple[float, float, float, float]:
    pts = np.vstack([np.asarray(ln.points) for ln in scene.map_lines])
    return pts[:, 0].min(), pts[:, 0].max(), pts[:, 1].min(), pts[:, 1].max()


def _scene_boxes(scene: Scene) -> list[OrientedBox]:
    boxes = [OrientedBox(0.0, 0.0, 0.0, scene.ego.length, scene.ego.width)]
    for ag in scene.agents:
        boxes.append(OrientedBox(float(ag.trajectory[0][0]), float(ag.trajectory[0][1]),
                                 ag.heading, ag.length, ag.width))
    return boxes


def _add_candidate(scene: Scene, rng: np.random.Generator) -> EditOp:
    lanes = [ln for ln in scene.map_lines if ln.kind == "lane-center"]
    if not lanes:
        raise FeasibilityError("no lane centers to place along")
    lane = lanes[int(rng.integers(len(lanes)))]
    pts = np.asarray(lane.points)
    near = np.flatnonzero(np.linalg.norm(pts[:-1], axis=1) <= _EDIT_RADIUS)
    if near.size == 0:
        raise FeasibilityError("no lane vertex within placement radius")
    i = int(near[int(rng.integers(near.size))])
    seg = pts[i + 1] - pts[i]
    heading = math.atan2(seg[1], seg[0])
    if rng.random() < 0.5:
        heading = math.atan2(math.sin(heading + math.pi), math.cos(heading + math.pi))
    category = "car" if rng.random() < 0.7 else "truck"
    if category == "car":
        dims = (float(rng.uniform(3.8, 4.8)), float(rng.uniform(1.7, 2.0)))
    else:
        # stays under twice the ego footprint
        dims = (float(rng.uniform(6.0, 7.5)), float(rng.uniform(2.2, 2.6)))
    speed = float(rng.uniform(0.0, 5.0))
    return EditOp("add", category=category,
                  pose=(float(pts[i][0]), float(pts[i][1]), heading),
                  dims=dims, speed=speed)


def _edit_agent(scene: Scene, op: EditOp) -> Agent:
    x, y, heading = op.pose
    lo_x, hi_x, lo_y, hi_y = _map_bounds(scene)
    direction = np.array([math.cos(heading), math.sin(heading)])
    steps = np.arange(scene.horizon) * scene.dt
    traj = np.array([x, y]) + op.speed * steps[:, None] * direction
    traj[:, 0] = np.clip(traj[:, 0], lo_x, hi_x)
    traj[:, 1] = np.clip(traj[:, 1], lo_y, hi_y)
    fresh = max((a.id for a in scene.agents), default=-1) + 1
    return Agent(fresh, op.category, op.dims[0], op.dims[1], heading, op.speed, traj)


def propose_edit(scene: Scene, seed: int, kind: str | None = None) -> EditOp:
    """Sample a feasible edit; deterministic per (scene, seed).

    ``kind`` forces add or remove; otherwise the rng picks.  Raises
    FeasibilityError when the requested kind cannot be satisfied (callers
    usually fall back to the other kind).
    """
    rng = np.random.default_rng(seed)
    if kind is None:
        kind = "remove" if (scene.agents and rng.random() < 0.5) else "add"
    if kind == "remove":
        if not scene.agents:
            raise FeasibilityError("no agents to remove")
        return EditOp("remove", target_id=scene.agents[int(rng.integers(len(scene.agents)))].id)
    if kind != "add":
        raise ConfigError(f"unknown edit kind {kind!r}")

    existing = _scene_boxes(scene)
    max_l, max_w = 2 * scene.ego.length, 2 * scene.ego.width
    lo_x, hi_x, lo_y, hi_y = _map_bounds(scene)
    for _ in range(_ADD_ATTEMPTS):
        op = _add_candidate(scene, rng)
        x, y, heading = op.pose
        if op.dims[0] > max_l or op.dims[1] > max_w:
            continue
        if not (lo_x <= x <= hi_x and lo_y <= y <= hi_y):
            continue
        box = OrientedBox(x, y, heading, op.dims[0], op.dims[1])
        if any(boxes_intersect(box, other) for other in existing):
            continue
        return op
    raise FeasibilityError(f"no free placement found in scene {scene.scene_id}")


def apply_edit(scene: Scene, op: EditOp) -> Scene:
    if op.kind == "add":
        agents = list(scene.agents) + [_edit_agent(scene, op)]
    elif op.kind == "remove":
        agents = [a for a in scene.agents if a.id != op.target_id]
        if len(agents) == len(scene.agents):
            raise NotFoundError(f"agent id {op.target_id} not in scene")
    else:
        raise ConfigError(f"unknown edit kind {op.kind!r}")
    return Scene(scene_id=f"{scene.scene_id}~{op.kind}", kind=scene.kind, ego=scene.ego,
                 agents=agents, map_lines=scene.map_lines,
                 horizon=scene.horizon, dt=scene.dt)


def _side_of_ego(x: float, y: float) -> str:
    if x >= abs(y):
        return "ahead of"
    if -x >= abs(y):
        return "behind"
    return "left of" if y > 0 else "right of"


def edit_qa(scene: Scene, op: EditOp, edited: Scene) -> QaPair:
    """QA pair describing the edit; the answer follows the corridor oracle."""
    if op.kind == "add":
        agent = edited.agents[-1]
        category, template = op.category, "edit-add"
    else:
        agent = next(a for a in scene.agents if a.id == op.target_id)
        category, template = agent.category, "edit-remove"
    affects = agent_crosses_plan(scene, agent, scene.ego.gt_trajectory, _EDIT_QA_MARGIN)
    side = _side_of_ego(float(agent.trajectory[0][0]), float(agent.trajectory[0][1]))
    return edit_qa_pair(template, category, side, affects)


def edit_loss(pred_waypoints: Tensor, edited: Scene, margin: float = 1.0) -> Tensor:
    """Collision constraint of the predicted plan against the edited agents."""
    from dima.planner import collision_penalty

    return collision_penalty(pred_waypoints, edited, margin)
