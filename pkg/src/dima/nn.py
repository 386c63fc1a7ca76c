"""Shared transformer building blocks over the numerics tape.

Weights live in flat ``dict[str, Tensor]`` maps with slash-separated names so
checkpoints can address every blob; ``init_*`` helpers populate a dict and the
apply helpers read it back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

import dima.numerics as nm
from dima.numerics import Tensor


@dataclass(frozen=True)
class ModelDims:
    """Architecture knobs shared by the encoder, planner and language branch."""

    d: int = 32              # scene token width
    heads: int = 4
    enc_blocks: int = 2
    planner_blocks: int = 2
    agent_bank: int = 16     # query bank sizes (max agents / polylines)
    map_bank: int = 16
    mlp_ratio: int = 2
    d_l: int = 64            # language model width
    lm_layers: int = 2
    lm_heads: int = 4
    n_q: int = 8             # adapter queries per component
    context: int = 256
    head_hidden: int = 64
    subsample: float = 0.5   # agent token fraction fed to the adapters


def init_linear(params: dict, name: str, n_in: int, n_out: int, rng, bias: bool = True) -> None:
    params[f"{name}/w"] = nm.parameter(rng.standard_normal((n_in, n_out)) / np.sqrt(n_in))
    if bias:
        params[f"{name}/b"] = nm.parameter(np.zeros((1, n_out)))


def linear(params: dict, name: str, x: Tensor) -> Tensor:
    out = nm.matmul(x, params[f"{name}/w"])
    b = params.get(f"{name}/b")
    return nm.add(out, b) if b is not None else out


def init_layer_norm(params: dict, name: str, d: int) -> None:
    params[f"{name}/g"] = nm.parameter(np.ones((1, d)))
    params[f"{name}/b"] = nm.parameter(np.zeros((1, d)))


def apply_layer_norm(params: dict, name: str, x: Tensor) -> Tensor:
    return nm.layer_norm(x, params[f"{name}/g"], params[f"{name}/b"])


def init_attention(params: dict, name: str, d_q: int, d_kv: int, d: int, rng) -> None:
    init_linear(params, f"{name}/wq", d_q, d, rng, bias=False)
    init_linear(params, f"{name}/wk", d_kv, d, rng, bias=False)
    init_linear(params, f"{name}/wv", d_kv, d, rng, bias=False)
    init_linear(params, f"{name}/wo", d, d, rng, bias=False)


def attention(params: dict, name: str, x: Tensor, mem: Tensor, heads: int,
              mask: np.ndarray | None = None) -> Tensor:
    """Multi-head attention of ``x`` over ``mem`` (equal widths after wq/wk)."""
    q = linear(params, f"{name}/wq", x)
    k = linear(params, f"{name}/wk", mem)
    v = linear(params, f"{name}/wv", mem)
    d = q.shape[1]
    dh = d // heads
    outs = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        outs.append(nm.scaled_dot_attention(
            nm.slice_cols(q, lo, hi), nm.slice_cols(k, lo, hi), nm.slice_cols(v, lo, hi),
            mask=mask,
        ))
    return linear(params, f"{name}/wo", nm.concat_cols(outs))


def init_block(params: dict, name: str, d_q: int, d_kv: int, d: int, hidden: int, rng) -> None:
    init_attention(params, f"{name}/attn", d_q, d_kv, d, rng)
    init_layer_norm(params, f"{name}/ln1", d)
    init_linear(params, f"{name}/mlp1", d, hidden, rng)
    init_linear(params, f"{name}/mlp2", hidden, d, rng)
    init_layer_norm(params, f"{name}/ln2", d)


def block(params: dict, name: str, x: Tensor, mem: Tensor, heads: int,
          mask: np.ndarray | None = None) -> Tensor:
    """Post-norm residual block: attend to mem, then a two-layer MLP."""
    x = apply_layer_norm(params, f"{name}/ln1",
                         nm.add(x, attention(params, f"{name}/attn", x, mem, heads, mask)))
    h = nm.relu(linear(params, f"{name}/mlp1", x))
    return apply_layer_norm(params, f"{name}/ln2", nm.add(x, linear(params, f"{name}/mlp2", h)))


def init_mlp3(params: dict, name: str, n_in: int, hidden: int, n_out: int, rng) -> None:
    """Three linear layers with interleaved ReLU, used by the decoder heads."""
    init_linear(params, f"{name}/l1", n_in, hidden, rng)
    init_linear(params, f"{name}/l2", hidden, hidden, rng)
    init_linear(params, f"{name}/l3", hidden, n_out, rng)


def mlp3(params: dict, name: str, x: Tensor) -> Tensor:
    h = nm.relu(linear(params, f"{name}/l1", x))
    h = nm.relu(linear(params, f"{name}/l2", h))
    return linear(params, f"{name}/l3", h)
