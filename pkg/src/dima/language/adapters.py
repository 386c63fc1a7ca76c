"""Query adapters lifting scene tokens into the language model width.

One adapter per token group (grid, ego, agent, map): a bank of learned
queries cross-attends the group and emits a fixed-length projected sequence,
so the language model always sees 4 * n_q rows regardless of scene size.
Agent tokens are subsampled to half before adapting; the returned index map
records how original agents fold onto the kept rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

import dima.numerics as nm
from dima.numerics import Tensor
from dima import nn
from dima.encoder import BeamTokens

GROUPS = ("bev", "ego", "agent", "map")


@dataclass(frozen=True)
class AdaptedScene:
    """Projected sequence plus bookkeeping to find each group inside it."""

    seq: Tensor                       # (4 * n_q, d_l)
    slices: dict[str, slice]
    agent_keep: np.ndarray            # original-agent index -> kept row (or -1)


def init_adapters(rng, dims: nn.ModelDims) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    hidden = dims.d_l * dims.mlp_ratio
    for g in GROUPS:
        p[f"adapter/{g}/queries"] = nm.parameter(rng.standard_normal((dims.n_q, dims.d_l)))
        nn.init_linear(p, f"adapter/{g}/in", dims.d, dims.d_l, rng)
        nn.init_block(p, f"adapter/{g}/blk", dims.d_l, dims.d_l, dims.d_l, hidden, rng)
        nn.init_linear(p, f"adapter/{g}/out", dims.d_l, dims.d_l, rng)
    p["adapter/null_agent"] = nm.parameter(rng.standard_normal((1, dims.d)))
    return p


def subsample_agents(n_agents: int, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """(kept indices, original->kept map). Keeps ceil(n * fraction), stride 2."""
    if n_agents == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    kept = np.arange(0, n_agents, 2, dtype=np.int64)
    want = int(np.ceil(n_agents * fraction))
    kept = kept[:max(want, 1)]
    fold = np.minimum(np.arange(n_agents, dtype=np.int64) // 2, len(kept) - 1)
    return kept, fold


def _adapt_one(params: dict, group: str, tokens: Tensor, dims: nn.ModelDims) -> Tensor:
    x = params[f"adapter/{group}/queries"]
    mem = nn.linear(params, f"adapter/{group}/in", tokens)
    x = nn.block(params, f"adapter/{group}/blk", x, mem, dims.lm_heads)
    return nn.linear(params, f"adapter/{group}/out", x)


def adapt(tokens: BeamTokens, params: dict[str, Tensor], dims: nn.ModelDims) -> AdaptedScene:
    n_agents = tokens.a.shape[0]
    kept, fold = subsample_agents(n_agents, dims.subsample)
    agent_in = nm.gather_rows(tokens.a, kept) if n_agents else params["adapter/null_agent"]
    parts = [
        _adapt_one(params, "bev", tokens.b, dims),
        _adapt_one(params, "ego", tokens.e, dims),
        _adapt_one(params, "agent", agent_in, dims),
        _adapt_one(params, "map", tokens.m, dims),
    ]
    slices = {g: slice(i * dims.n_q, (i + 1) * dims.n_q) for i, g in enumerate(GROUPS)}
    keep = fold if n_agents else np.zeros(0, dtype=np.int64)
    return AdaptedScene(seq=nm.concat_rows(parts), slices=slices, agent_keep=keep)
