"""Scene tokenizer shared by the planner and the language branch.

A scene becomes four token groups: ``b`` grid tokens from the rasterized
bird's-eye view, one ego token, one token per agent and one per map polyline.
Agent and map tokens start from learned query banks (bound to entities by
sorted-id rank) and only see the scene through cross-attention onto the grid,
so everything downstream consumes one shared representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

import dima.numerics as nm
from dima.numerics import Tensor
from dima import nn
from dima.errors import CapacityError
from dima.world import GridSpec, Scene, rasterize_bev

CATEGORIES = ("car", "truck", "pedestrian", "bicycle")
MAP_KINDS = ("lane-center", "boundary", "crossing")

AGENT_TARGET_DIM = 14   # x y cos sin length width speed cat(4) last_x last_y valid
MAP_TARGET_DIM = 7      # kind(3) x0 y0 x1 y1
_N_SPEEDS = 4           # ego speed history length expected by the ego feature


@dataclass
class BeamTokens:
    """Encoder output: grid, ego, agent and map token matrices."""

    b: Tensor
    e: Tensor
    a: Tensor
    m: Tensor


def grid_features(scene: Scene, grid: GridSpec) -> np.ndarray:
    """Raster channels plus a fixed sinusoidal position code, one row per cell."""
    raster = rasterize_bev(scene, grid)
    n = grid.cells_per_side
    flat = raster.reshape(n * n, 3)
    # cell centers in (0, 1), row-major to match the raster layout
    u = (np.arange(n) + 0.5) / n
    ux = np.repeat(u, n)
    uy = np.tile(u, n)
    pos = np.stack([ux, uy, np.sin(np.pi * ux), np.cos(np.pi * ux),
                    np.sin(np.pi * uy), np.cos(np.pi * uy)], axis=1)
    return np.concatenate([flat, pos], axis=1)


def _ego_feature(scene: Scene) -> np.ndarray:
    ego = scene.ego
    return np.array([[ego.length, ego.width, *ego.speeds]])


def init_encoder(rng, dims: nn.ModelDims) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    d, hidden = dims.d, dims.d * dims.mlp_ratio
    nn.init_linear(p, "encoder/input_proj", 9, d, rng)
    nn.init_linear(p, "encoder/ego_in", 2 + _N_SPEEDS, d, rng)
    p["encoder/agent_bank"] = nm.parameter(rng.standard_normal((dims.agent_bank, d)))
    p["encoder/map_bank"] = nm.parameter(rng.standard_normal((dims.map_bank, d)))
    p["encoder/ego_query"] = nm.parameter(rng.standard_normal((1, d)))
    p["encoder/mask_embed"] = nm.parameter(rng.standard_normal((1, d)))
    for i in range(dims.enc_blocks):
        for sub in ("b", "a", "m", "e1", "e2"):
            nn.init_block(p, f"encoder/blk{i}/{sub}", d, d, d, hidden, rng)
    nn.init_linear(p, "encoder/dec_agent", d, AGENT_TARGET_DIM, rng)
    nn.init_linear(p, "encoder/dec_map", d, MAP_TARGET_DIM, rng)
    return p


def _rank_of_sorted_id(ids: list[int]) -> np.ndarray:
    order = np.argsort(np.asarray(ids, dtype=np.int64), kind="stable")
    ranks = np.empty(len(ids), dtype=np.int64)
    ranks[order] = np.arange(len(ids))
    return ranks


def encode(scene: Scene, params: dict[str, Tensor], grid: GridSpec, dims: nn.ModelDims,
           features: np.ndarray | None = None) -> BeamTokens:
    """Tokenize a scene.

    ``features`` lets callers reuse a precomputed ``grid_features`` array.
    """
    n_agents = len(scene.agents)
    n_lines = len(scene.map_lines)
    if n_agents > dims.agent_bank:
        raise CapacityError(f"scene has {n_agents} agents, bank holds {dims.agent_bank}")
    if n_lines > dims.map_bank:
        raise CapacityError(f"scene has {n_lines} polylines, bank holds {dims.map_bank}")

    feat = nm.constant(grid_features(scene, grid) if features is None else features)
    b = nn.linear(params, "encoder/input_proj", feat)
    a = nm.gather_rows(params["encoder/agent_bank"],
                       _rank_of_sorted_id([ag.id for ag in scene.agents]))
    m = nm.gather_rows(params["encoder/map_bank"],
                       _rank_of_sorted_id([ln.id for ln in scene.map_lines]))
    e = nm.add(params["encoder/ego_query"],
               nn.linear(params, "encoder/ego_in", nm.constant(_ego_feature(scene))))

    for i in range(dims.enc_blocks):
        b = nn.block(params, f"encoder/blk{i}/b", b, b, dims.heads)
        if n_agents:
            a = nn.block(params, f"encoder/blk{i}/a", a, b, dims.heads)
        if n_lines:
            m = nn.block(params, f"encoder/blk{i}/m", m, b, dims.heads)
        entities = [t for t in (a, m) if t.shape[0]]
        if entities:
            ctx = nm.concat_rows(entities) if len(entities) > 1 else entities[0]
            e = nn.block(params, f"encoder/blk{i}/e1", e, ctx, dims.heads)
        e = nn.block(params, f"encoder/blk{i}/e2", e, b, dims.heads)
    return BeamTokens(b=b, e=e, a=a, m=m)


def agent_targets(scene: Scene) -> np.ndarray:
    """Per-agent regression targets for the auxiliary decode loss."""
    rows = np.zeros((len(scene.agents), AGENT_TARGET_DIM))
    for i, ag in enumerate(scene.agents):
        cat = np.zeros(4)
        cat[CATEGORIES.index(ag.category)] = 1.0
        rows[i] = [ag.trajectory[0][0], ag.trajectory[0][1],
                   np.cos(ag.heading), np.sin(ag.heading),
                   ag.length, ag.width, ag.speed, *cat,
                   ag.trajectory[-1][0], ag.trajectory[-1][1], 1.0]
    return rows


def map_targets(scene: Scene) -> np.ndarray:
    rows = np.zeros((len(scene.map_lines), MAP_TARGET_DIM))
    for i, ln in enumerate(scene.map_lines):
        kind = np.zeros(3)
        kind[MAP_KINDS.index(ln.kind)] = 1.0
        pts = np.asarray(ln.points)
        rows[i] = [*kind, pts[0, 0], pts[0, 1], pts[-1, 0], pts[-1, 1]]
    return rows


def decode_agents(params: dict[str, Tensor], a: Tensor) -> Tensor:
    return nn.linear(params, "encoder/dec_agent", a)


def decode_map(params: dict[str, Tensor], m: Tensor) -> Tensor:
    return nn.linear(params, "encoder/dec_map", m)


def decode_loss(params: dict[str, Tensor], tokens: BeamTokens, scene: Scene) -> Tensor:
    """L2 of both entity decoders against the scene; zero-safe for empty scenes."""
    terms = []
    if scene.agents:
        terms.append(nm.l2_loss(decode_agents(params, tokens.a),
                                nm.constant(agent_targets(scene))))
    if scene.map_lines:
        terms.append(nm.l2_loss(decode_map(params, tokens.m),
                                nm.constant(map_targets(scene))))
    if not terms:
        return nm.constant(np.zeros(()))
    total = terms[0]
    for t in terms[1:]:
        total = nm.add(total, t)
    return total
