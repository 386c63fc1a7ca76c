"""Tiny causal language model plus the task decoder heads.

Sequences are packed as [projected scene | <bos> | question | <sep> | answer
| <eos>]; the model is trained with next-token prediction restricted to the
answer span.  A pass over just [projected scene | <bos>] yields the hidden
rows the surrogate heads and the distillation feature read from.
"""

from __future__ import annotations

import numpy as np

import dima.numerics as nm
from dima.numerics import Tensor
from dima import nn
from dima.errors import CapacityError
from dima.language.adapters import AdaptedScene
from dima.language.vocab import BOS, EOS, SEP, Vocabulary


def init_lm(rng, dims: nn.ModelDims, vocab_size: int, grid_cells: int) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    d_l, hidden = dims.d_l, dims.d_l * dims.mlp_ratio
    p["lm/token_emb"] = nm.parameter(rng.standard_normal((vocab_size, d_l)) * 0.5)
    p["lm/pos_emb"] = nm.parameter(rng.standard_normal((dims.context, d_l)) * 0.1)
    for i in range(dims.lm_layers):
        nn.init_block(p, f"lm/blk{i}", d_l, d_l, d_l, hidden, rng)
    nn.init_layer_norm(p, "lm/ln_f", d_l)
    nn.init_linear(p, "lm/head", d_l, vocab_size, rng)

    flat = dims.n_q * d_l
    nn.init_mlp3(p, "heads/recon", flat, dims.head_hidden, grid_cells * dims.d, rng)
    nn.init_mlp3(p, "heads/future", flat, dims.head_hidden, 2 * grid_cells * dims.d, rng)
    nn.init_mlp3(p, "heads/edit", flat, dims.head_hidden, 12, rng)
    nn.init_linear(p, "heads/ego_proj", d_l, dims.d, rng)
    nn.init_mlp3(p, "heads/ego", dims.d, dims.head_hidden, 12, rng)
    return p


def _causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def lm_hidden(seq: Tensor, params: dict[str, Tensor], dims: nn.ModelDims) -> Tensor:
    """Run the causal stack over an embedded sequence; rows stay positional."""
    n = seq.shape[0]
    if n > dims.context:
        raise CapacityError(f"sequence of {n} exceeds context {dims.context}")
    x = nm.add(seq, nm.slice_rows(params["lm/pos_emb"], 0, n))
    mask = _causal_mask(n)
    for i in range(dims.lm_layers):
        x = nn.block(params, f"lm/blk{i}", x, x, dims.lm_heads, mask=mask)
    return nn.apply_layer_norm(params, "lm/ln_f", x)


def logits_from_hidden(hidden: Tensor, params: dict[str, Tensor]) -> Tensor:
    return nn.linear(params, "lm/head", hidden)


def pack_qa(adapted: AdaptedScene, question: list[int], answer: list[int],
            params: dict[str, Tensor], vocab: Vocabulary) -> tuple[Tensor, slice]:
    """Embed [scene | bos q... sep | answer... eos]; returns (seq, answer span).

    The answer span marks the rows whose NEXT token is supervised: it starts
    at <sep> (predicting the first answer token) and ends before <eos>.
    """
    bos, sep, eos = vocab.ids[BOS], vocab.ids[SEP], vocab.ids[EOS]
    ids = [bos, *question, sep, *answer, eos]
    tok = nm.gather_rows(params["lm/token_emb"], np.asarray(ids, dtype=np.int64))
    seq = nm.concat_rows([adapted.seq, tok])
    n_scene = adapted.seq.shape[0]
    sep_pos = n_scene + 1 + len(question)
    return seq, slice(sep_pos, sep_pos + len(answer) + 1)


def vqa_loss(adapted: AdaptedScene, question: list[int], answer: list[int],
             params: dict[str, Tensor], dims: nn.ModelDims, vocab: Vocabulary) -> Tensor:
    """Mean cross entropy of next-token prediction over the answer span."""
    seq, span = pack_qa(adapted, question, answer, params, vocab)
    hidden = lm_hidden(seq, params, dims)
    logits = logits_from_hidden(nm.slice_rows(hidden, span.start, span.stop), params)
    targets = np.asarray([*answer, vocab.ids[EOS]], dtype=np.int64)
    return nm.cross_entropy(logits, targets)


def generate(adapted: AdaptedScene, question: list[int], params: dict[str, Tensor],
             dims: nn.ModelDims, vocab: Vocabulary, max_tokens: int = 24) -> list[int]:
    """Greedy decode of an answer; stops at <eos> (not included)."""
    bos, sep, eos = vocab.ids[BOS], vocab.ids[SEP], vocab.ids[EOS]
    ids = [bos, *question, sep]
    out: list[int] = []
    for _ in range(max_tokens):
        tok = nm.gather_rows(params["lm/token_emb"], np.asarray(ids, dtype=np.int64))
        hidden = lm_hidden(nm.concat_rows([adapted.seq, tok]), params, dims)
        last = nm.slice_rows(hidden, hidden.shape[0] - 1, hidden.shape[0])
        nxt = int(np.argmax(logits_from_hidden(last, params).data))
        if nxt == eos:
            break
        out.append(nxt)
        ids.append(nxt)
    return out


def scene_hidden(adapted: AdaptedScene, params: dict[str, Tensor], dims: nn.ModelDims,
                 vocab: Vocabulary) -> Tensor:
    """Hidden rows for [scene | <bos>]; the surrogate heads read these."""
    tok = nm.gather_rows(params["lm/token_emb"],
                         np.asarray([vocab.ids[BOS]], dtype=np.int64))
    return lm_hidden(nm.concat_rows([adapted.seq, tok]), params, dims)


def _segment_flat(hidden: Tensor, adapted: AdaptedScene, group: str, dims: nn.ModelDims) -> Tensor:
    s = adapted.slices[group]
    return nm.reshape(nm.slice_rows(hidden, s.start, s.stop), (1, dims.n_q * dims.d_l))


def recon_decode(hidden: Tensor, adapted: AdaptedScene, params: dict[str, Tensor],
                 dims: nn.ModelDims, grid_cells: int) -> Tensor:
    """Reconstruct all grid tokens from the adapted grid slots: (HW, d)."""
    flat = nn.mlp3(params, "heads/recon", _segment_flat(hidden, adapted, "bev", dims))
    return nm.reshape(flat, (grid_cells, dims.d))


def future_decode(hidden: Tensor, adapted: AdaptedScene, params: dict[str, Tensor],
                  dims: nn.ModelDims, grid_cells: int) -> Tensor:
    """Predict grid tokens one and two steps ahead, stacked: (2 * HW, d)."""
    flat = nn.mlp3(params, "heads/future", _segment_flat(hidden, adapted, "bev", dims))
    return nm.reshape(flat, (2 * grid_cells, dims.d))


def edit_decode(hidden: Tensor, adapted: AdaptedScene, params: dict[str, Tensor],
                dims: nn.ModelDims) -> Tensor:
    """Waypoints for the edited scene, from the agent slots: (6, 2)."""
    flat = nn.mlp3(params, "heads/edit", _segment_flat(hidden, adapted, "agent", dims))
    return nm.reshape(flat, (6, 2))


def ego_feature(hidden: Tensor, adapted: AdaptedScene, params: dict[str, Tensor],
                dims: nn.ModelDims) -> Tensor:
    """Pooled ego slots projected to the planner feature width: (1, d)."""
    s = adapted.slices["ego"]
    pooled = nm.mean_rows(nm.slice_rows(hidden, s.start, s.stop))
    return nn.linear(params, "heads/ego_proj", pooled)


def ego_decode(feature: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Waypoints from a (1, d) ego feature; shared by training and fusion."""
    return nm.reshape(nn.mlp3(params, "heads/ego", feature), (6, 2))
