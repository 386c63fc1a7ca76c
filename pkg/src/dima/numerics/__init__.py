"""Reverse-mode differentiable numerics: tape, tensor ops, optimizer, grad check.

Everything runs in float64.  Ops record onto the active :class:`Tape` when one
is open and fall back to plain numpy evaluation otherwise, which is what
inference and finite-difference probes use.
"""

from dima.numerics.tensor import (
    Tape,
    Tensor,
    add,
    concat_cols,
    concat_rows,
    constant,
    cross_entropy,
    gather_rows,
    kl_divergence,
    l2_loss,
    layer_norm,
    matmul,
    mean_all,
    mean_rows,
    mul,
    neg,
    parameter,
    relu,
    reshape,
    scale,
    scaled_dot_attention,
    slice_cols,
    slice_rows,
    softmax,
    sqrt,
    sub,
    sum_all,
    transpose,
)
from dima.numerics.optim import AdamW, cosine_lr
from dima.numerics.gradcheck import grad_check

__all__ = [
    "AdamW",
    "Tape",
    "Tensor",
    "add",
    "concat_cols",
    "concat_rows",
    "constant",
    "cosine_lr",
    "cross_entropy",
    "gather_rows",
    "grad_check",
    "kl_divergence",
    "l2_loss",
    "layer_norm",
    "matmul",
    "mean_all",
    "mean_rows",
    "mul",
    "neg",
    "parameter",
    "relu",
    "reshape",
    "scale",
    "scaled_dot_attention",
    "slice_cols",
    "slice_rows",
    "softmax",
    "sqrt",
    "sub",
    "sum_all",
    "transpose",
]
