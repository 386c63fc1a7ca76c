"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from dima.errors import DimensionError
from dima.numerics.tensor import Tape, Tensor, parameter


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    h: float = 1e-5,
    samples: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` takes one Tensor per input array and returns a scalar Tensor.  The
    analytic gradient comes from one taped forward/backward; the numeric one
    from (f(x+h) - f(x-h)) / 2h evaluated without a tape.  When ``samples`` is
    given, only that many coordinates per input (drawn without replacement
    from ``seed``) are probed, which keeps large models checkable in seconds.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    with Tape() as tape:
        leaves = [parameter(a) for a in arrays]
        out = f(*leaves)
        if out.data.size != 1:
            raise DimensionError("grad_check target must return a scalar")
        tape.backward(out)
    analytic = [
        leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves
    ]

    def value_at(idx: int, flat_pos: int, delta: float) -> float:
        probe = [a.copy() for a in arrays]
        probe[idx].flat[flat_pos] += delta
        value = f(*[Tensor(p) for p in probe])
        return float(value.data)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for idx, arr in enumerate(arrays):
        size = arr.size
        if size == 0:
            continue
        if samples is None or samples >= size:
            positions = range(size)
        else:
            positions = rng.choice(size, size=samples, replace=False)
        for pos in positions:
            numeric = (value_at(idx, pos, h) - value_at(idx, pos, -h)) / (2.0 * h)
            exact = analytic[idx].flat[pos]
            denom = max(abs(numeric), abs(exact), 1e-8)
            worst = max(worst, abs(numeric - exact) / denom)
    return worst
