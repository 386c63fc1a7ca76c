"""Trajectory head on top of the scene tokens.

The ego token cross-attends the full token set, and a final projection emits
six waypoints. The feature just before that projection is the planner's
summary of the scene; the language branch is pulled toward it during joint
training, and fused inference swaps a blend back in before decoding.
"""

from __future__ import annotations

import numpy as np

import dima.numerics as nm
from dima.numerics import Tensor
from dima import nn
from dima.encoder import BeamTokens
from dima.world import Scene, agent_position_at

HORIZON = 6
_EPS = 1e-12


def init_planner(rng, dims: nn.ModelDims) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    hidden = dims.d * dims.mlp_ratio
    for i in range(dims.planner_blocks):
        nn.init_block(p, f"planner/blk{i}", dims.d, dims.d, dims.d, hidden, rng)
    nn.init_linear(p, "planner/out", dims.d, 2 * HORIZON, rng)
    return p


def plan_features(tokens: BeamTokens, params: dict[str, Tensor], dims: nn.ModelDims) -> Tensor:
    """Refine the ego token against every scene token; returns a (1, d) feature."""
    mem = nm.concat_rows([tokens.b, tokens.e, tokens.a, tokens.m]
                         if tokens.a.shape[0] else [tokens.b, tokens.e, tokens.m])
    x = tokens.e
    for i in range(dims.planner_blocks):
        x = nn.block(params, f"planner/blk{i}", x, mem, dims.heads)
    return x


def decode_waypoints(features: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Project a (1, d) planning feature to (HORIZON, 2) waypoints."""
    return nm.reshape(nn.linear(params, "planner/out", features), (HORIZON, 2))


def plan(tokens: BeamTokens, params: dict[str, Tensor], dims: nn.ModelDims) -> tuple[Tensor, Tensor]:
    """Returns (waypoints (HORIZON, 2), planning feature (1, d))."""
    feat = plan_features(tokens, params, dims)
    return decode_waypoints(feat, params), feat


def collision_penalty(waypoints: Tensor, scene: Scene, margin: float = 1.0) -> Tensor:
    """Hinge on the distance from each waypoint to each agent box at that time.

    Differentiable in the waypoints; agent motion is a constant. Waypoint i
    corresponds to t = (i + 1) * dt.
    """
    if not scene.agents:
        return nm.constant(np.zeros(()))
    n = len(scene.agents)
    k = HORIZON * n
    centers = np.zeros((k, 2))
    cs = np.zeros((k, 2))       # rows (cos h, sin h)
    ns = np.zeros((k, 2))       # rows (-sin h, cos h)
    half = np.zeros((k, 2))
    for i in range(HORIZON):
        t = (i + 1) * scene.dt
        for j, ag in enumerate(scene.agents):
            r = i * n + j
            centers[r] = agent_position_at(ag, t, scene.dt)
            c, s = np.cos(ag.heading), np.sin(ag.heading)
            cs[r] = (c, s)
            ns[r] = (-s, c)
            half[r] = (ag.length / 2, ag.width / 2)

    rep = nm.gather_rows(waypoints, np.repeat(np.arange(HORIZON), n))
    delta = nm.sub(rep, nm.constant(centers))
    ones = nm.constant(np.ones((2, 1)))
    lx = nm.matmul(nm.mul(delta, nm.constant(cs)), ones)
    ly = nm.matmul(nm.mul(delta, nm.constant(ns)), ones)
    ax = nm.add(nm.relu(lx), nm.relu(nm.neg(lx)))
    ay = nm.add(nm.relu(ly), nm.relu(nm.neg(ly)))
    ox = nm.relu(nm.sub(ax, nm.constant(half[:, :1])))
    oy = nm.relu(nm.sub(ay, nm.constant(half[:, 1:])))
    sq = nm.add(nm.add(nm.mul(ox, ox), nm.mul(oy, oy)), nm.constant(np.full((k, 1), _EPS)))
    dist = nm.sqrt(sq)
    hinge = nm.relu(nm.sub(nm.constant(np.full((k, 1), margin)), dist))
    return nm.sum_all(hinge)


def planning_loss(waypoints: Tensor, scene: Scene, margin: float = 1.0,
                  lambda_col: float = 1.0) -> Tensor:
    """Imitation L2 to the logged future plus the weighted collision hinge."""
    l2 = nm.l2_loss(waypoints, nm.constant(np.asarray(scene.ego.gt_trajectory)))
    return nm.add(l2, nm.scale(collision_penalty(waypoints, scene, margin), lambda_col))
