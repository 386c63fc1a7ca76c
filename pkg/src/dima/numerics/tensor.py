"""Tape-based reverse-mode differentiation over float64 numpy arrays.

A :class:`Tensor` wraps a C-contiguous float64 ndarray.  While a :class:`Tape`
is open (``with Tape() as tape:``) every op appends one entry holding the
output, the input references, a pure re-forward closure (for replay) and a
backward closure.  Entries are appended in execution order, so the list is
already a topological order and :meth:`Tape.backward` just walks it in
reverse.  With no open tape the same ops evaluate eagerly with no recording,
which is the fast path used by inference and finite-difference probes.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from dima.errors import DimensionError, DomainError

_STACK = threading.local()

# Additive pre-softmax score for blocked attention positions.  Large enough to
# zero the weight in float64, small enough never to overflow exp after the
# max subtraction.
_MASK_FILL = -1e30


def _tape():
    stack = getattr(_STACK, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A float64 array with an optional gradient accumulated by a Tape."""

    __slots__ = ("data", "grad", "requires_grad", "_from_op")

    def __init__(self, data: np.ndarray, requires_grad: bool = False, _from_op: bool = False):
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._from_op = _from_op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A constant view of the current values, cut off from any tape."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _validated(values, context: str) -> np.ndarray:
    # asarray keeps 0-d scalars 0-d; ascontiguousarray would promote them to 1-d
    arr = np.asarray(values, dtype=np.float64, order="C")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{context}: non-finite values rejected")
    return arr


def parameter(values) -> Tensor:
    """A trainable leaf.  Values are validated finite at construction."""
    return Tensor(_validated(values, "parameter"), requires_grad=True)


def constant(values) -> Tensor:
    """A non-trainable leaf.  Values are validated finite at construction."""
    return Tensor(_validated(values, "constant"), requires_grad=False)


class _Entry:
    __slots__ = ("out", "inputs", "fwd", "bwd")

    def __init__(self, out, inputs, fwd, bwd):
        self.out = out
        self.inputs = inputs
        self.fwd = fwd
        self.bwd = bwd


class Tape:
    """Ordered record of primitive ops plus a seedable RNG for stochastic ones.

    Replaying a tape re-runs every forward closure in the original order with
    the RNG reset to the construction seed, so forward values are bit
    identical across replays.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self._entries: list[_Entry] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_STACK, "stack", None)
        if stack is None:
            stack = _STACK.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _STACK.stack.pop()

    def __len__(self) -> int:
        return len(self._entries)

    def randn(self, shape: tuple[int, ...], scale: float = 1.0, requires_grad: bool = False) -> Tensor:
        """A leaf drawn from the tape RNG; recorded so replay redraws it."""
        out = Tensor(self.rng.standard_normal(shape) * scale, requires_grad=requires_grad, _from_op=True)

        def fwd(tape=self, shape=shape, scale=scale):
            return tape.rng.standard_normal(shape) * scale

        self._entries.append(_Entry(out, (), fwd, lambda g: ()))
        return out

    def backward(self, loss: Tensor) -> None:
        """Accumulate d loss / d x into ``x.grad`` for every tracked tensor."""
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for entry in reversed(self._entries):
            gout = entry.out.grad
            if gout is None:
                continue
            grads = entry.bwd(gout)
            for tensor, grad in zip(entry.inputs, grads):
                if grad is None:
                    continue
                if tensor.grad is None:
                    tensor.grad = grad
                else:
                    tensor.grad = tensor.grad + grad

    def replay(self) -> None:
        """Re-run all recorded forwards in order, resetting the RNG state."""
        self.rng = np.random.default_rng(self.seed)
        for entry in self._entries:
            out = entry.fwd()
            if out is not None:
                entry.out.data = out


def _track(t: Tensor) -> bool:
    return t.requires_grad or t._from_op


def _emit(out_data: np.ndarray, inputs: tuple[Tensor, ...], fwd, bwd) -> Tensor:
    tape = _tape()
    if tape is None:
        return Tensor(out_data)
    out = Tensor(out_data, _from_op=True)
    tape._entries.append(_Entry(out, inputs, fwd, bwd))
    return out


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a (1, n) or (n,) bias against (m, n)."""
    bias = a.data.shape != b.data.shape
    if bias and not (
        a.data.ndim == 2 and b.data.shape in ((1, a.data.shape[1]), (a.data.shape[1],))
    ):
        raise DimensionError(f"add: incompatible shapes {a.data.shape} and {b.data.shape}")
    na, nb = _track(a), _track(b)

    def bwd(g, bias=bias, bshape=b.data.shape):
        gb = None
        if nb:
            gb = g.sum(axis=0).reshape(bshape) if bias else g
        return (g if na else None, gb)

    return _emit(a.data + b.data, (a, b), lambda: a.data + b.data, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"sub: incompatible shapes {a.data.shape} and {b.data.shape}")
    na, nb = _track(a), _track(b)

    def bwd(g):
        return (g if na else None, -g if nb else None)

    return _emit(a.data - b.data, (a, b), lambda: a.data - b.data, bwd)


def neg(a: Tensor) -> Tensor:
    na = _track(a)
    return _emit(-a.data, (a,), lambda: -a.data, lambda g: (-g if na else None,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of equal-shaped tensors."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"mul: incompatible shapes {a.data.shape} and {b.data.shape}")
    na, nb = _track(a), _track(b)

    def bwd(g):
        return (g * b.data if na else None, g * a.data if nb else None)

    return _emit(a.data * b.data, (a, b), lambda: a.data * b.data, bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    na = _track(a)
    return _emit(a.data * s, (a,), lambda: a.data * s, lambda g: (g * s if na else None,))


def relu(a: Tensor) -> Tensor:
    na = _track(a)

    def bwd(g):
        return (g * (a.data > 0.0) if na else None,)

    return _emit(np.maximum(a.data, 0.0), (a,), lambda: np.maximum(a.data, 0.0), bwd)


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root; strictly positive inputs required."""
    if np.any(a.data <= 0.0):
        raise DomainError("sqrt: inputs must be strictly positive")
    out_data = np.sqrt(a.data)
    na = _track(a)

    def bwd(g, out_data=out_data):
        return (g / (2.0 * out_data) if na else None,)

    return _emit(out_data, (a,), lambda: np.sqrt(a.data), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError("transpose expects a matrix")
    na = _track(a)
    return _emit(
        np.ascontiguousarray(a.data.T), (a,), lambda: np.ascontiguousarray(a.data.T),
        lambda g: (np.ascontiguousarray(g.T) if na else None,),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    na, nb = _track(a), _track(b)

    def bwd(g):
        ga = g @ b.data.T if na else None
        gb = a.data.T @ g if nb else None
        return (ga, gb)

    return _emit(a.data @ b.data, (a, b), lambda: a.data @ b.data, bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise DimensionError(f"reshape: cannot view {a.data.shape} as {shape}")
    na = _track(a)
    old = a.data.shape

    def bwd(g):
        return (g.reshape(old) if na else None,)

    return _emit(a.data.reshape(shape), (a,), lambda: a.data.reshape(shape), bwd)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("concat_rows needs at least one part")
    counts = [p.data.shape[0] for p in parts]
    needs = [_track(p) for p in parts]

    def bwd(g):
        grads = []
        start = 0
        for n, need in zip(counts, needs):
            grads.append(g[start:start + n] if need else None)
            start += n
        return tuple(grads)

    data = np.concatenate([p.data for p in parts], axis=0)
    return _emit(data, tuple(parts), lambda: np.concatenate([p.data for p in parts], axis=0), bwd)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("concat_cols needs at least one part")
    counts = [p.data.shape[1] for p in parts]
    needs = [_track(p) for p in parts]

    def bwd(g):
        grads = []
        start = 0
        for n, need in zip(counts, needs):
            grads.append(np.ascontiguousarray(g[:, start:start + n]) if need else None)
            start += n
        return tuple(grads)

    data = np.concatenate([p.data for p in parts], axis=1)
    return _emit(data, tuple(parts), lambda: np.concatenate([p.data for p in parts], axis=1), bwd)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start <= stop <= a.data.shape[0]):
        raise DimensionError(f"slice_rows [{start}:{stop}] outside {a.data.shape}")
    na = _track(a)

    def bwd(g):
        if not na:
            return (None,)
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _emit(a.data[start:stop].copy(), (a,), lambda: a.data[start:stop].copy(), bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start <= stop <= a.data.shape[1]):
        raise DimensionError(f"slice_cols [{start}:{stop}] outside {a.data.shape}")
    na = _track(a)

    def bwd(g):
        if not na:
            return (None,)
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _emit(
        np.ascontiguousarray(a.data[:, start:stop]), (a,),
        lambda: np.ascontiguousarray(a.data[:, start:stop]), bwd,
    )


def gather_rows(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError("gather_rows expects a 1-d index array")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise DimensionError("gather_rows: index out of range")
    na = _track(a)

    def bwd(g):
        if not na:
            return (None,)
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _emit(a.data[idx], (a,), lambda: a.data[idx], bwd)


def sum_all(a: Tensor) -> Tensor:
    na = _track(a)

    def bwd(g):
        return (np.full_like(a.data, float(g)) if na else None,)

    return _emit(np.asarray(a.data.sum()), (a,), lambda: np.asarray(a.data.sum()), bwd)


def mean_all(a: Tensor) -> Tensor:
    if a.data.size == 0:
        raise DimensionError("mean_all of an empty tensor")
    n = a.data.size
    na = _track(a)

    def bwd(g):
        return (np.full_like(a.data, float(g) / n) if na else None,)

    return _emit(np.asarray(a.data.mean()), (a,), lambda: np.asarray(a.data.mean()), bwd)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over axis 0, keeping a (1, d) shape."""
    if a.data.ndim != 2 or a.data.shape[0] == 0:
        raise DimensionError("mean_rows expects a non-empty matrix")
    n = a.data.shape[0]
    na = _track(a)

    def bwd(g):
        return (np.repeat(g / n, n, axis=0) if na else None,)

    return _emit(a.data.mean(axis=0, keepdims=True), (a,),
                 lambda: a.data.mean(axis=0, keepdims=True), bwd)


# ---------------------------------------------------------------------------
# normalization, attention, losses


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Row-stable softmax: the row max is subtracted before exponentiation."""
    if a.data.shape[axis] == 0:
        raise DimensionError("softmax over an empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out_data = ex / ex.sum(axis=axis, keepdims=True)
    na = _track(a)

    def fwd():
        sh = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(sh)
        return e / e.sum(axis=axis, keepdims=True)

    def bwd(g, s=out_data):
        if not na:
            return (None,)
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _emit(out_data, (a,), fwd, bwd)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then affine."""
    d = a.data.shape[-1]
    if d < 2:
        raise DimensionError("layer_norm needs a last axis of length >= 2")
    if gain.data.shape not in ((d,), (1, d)) or bias.data.shape not in ((d,), (1, d)):
        raise DimensionError("layer_norm: gain/bias must match the last axis")
    mu = a.data.mean(axis=-1, keepdims=True)
    var = ((a.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    gflat = gain.data.reshape(-1)
    bflat = bias.data.reshape(-1)
    out_data = xhat * gflat + bflat
    na, ng, nb = _track(a), _track(gain), _track(bias)

    def fwd():
        m = a.data.mean(axis=-1, keepdims=True)
        v = ((a.data - m) ** 2).mean(axis=-1, keepdims=True)
        return (a.data - m) / np.sqrt(v + eps) * gain.data.reshape(-1) + bias.data.reshape(-1)

    def bwd(g, xhat=xhat, inv=inv):
        lead = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=lead).reshape(gain.data.shape) if ng else None
        gbias = g.sum(axis=lead).reshape(bias.data.shape) if nb else None
        ga = None
        if na:
            dxhat = g * gflat
            ga = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        return (ga, ggain, gbias)

    return _emit(out_data, (a, gain, bias), fwd, bwd)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Attention(q, k, v) = softmax(q k^T / sqrt(d)) v.

    ``mask`` is a boolean (nq, nk) array where True marks an attendable
    position; blocked positions get an additive -inf surrogate before the
    softmax.  Rows with every position blocked produce a zero output row and
    pass no gradient.
    """
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise DimensionError("attention operands must be matrices")
    if q.data.shape[1] != k.data.shape[1]:
        raise DimensionError(f"attention: query width {q.data.shape[1]} != key width {k.data.shape[1]}")
    if k.data.shape[0] != v.data.shape[0]:
        raise DimensionError(f"attention: {k.data.shape[0]} keys but {v.data.shape[0]} values")
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(q.data.shape[1]))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q.data.shape[0], k.data.shape[0]):
            raise DimensionError(f"attention mask shape {mask.shape} != {(q.data.shape[0], k.data.shape[0])}")
        scores = add(scores, constant(np.where(mask, 0.0, _MASK_FILL)))
    weights = softmax(scores, axis=-1)
    if mask is not None and not mask.all():
        # Fully blocked rows come out of the softmax uniform; squash them to 0.
        rowkeep = mask.any(axis=1).astype(np.float64)[:, None]
        weights = mul(weights, constant(np.broadcast_to(rowkeep, weights.data.shape).copy()))
    return matmul(weights, v)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log likelihood of integer targets under row softmax."""
    idx = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2:
        raise DimensionError("cross_entropy expects (n, vocab) logits")
    n, vocab = logits.data.shape
    if idx.shape != (n,):
        raise DimensionError(f"cross_entropy: {n} rows but targets shape {idx.shape}")
    if n == 0:
        raise DimensionError("cross_entropy of zero rows")
    if idx.min() < 0 or idx.max() >= vocab:
        raise DomainError("cross_entropy: target id outside vocabulary")

    def values():
        z = logits.data
        m = z.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
        return np.asarray((lse - z[np.arange(n), idx]).mean())

    out_data = values()
    na = _track(logits)

    def bwd(g):
        if not na:
            return (None,)
        z = logits.data
        m = z.max(axis=1, keepdims=True)
        e = np.exp(z - m)
        p = e / e.sum(axis=1, keepdims=True)
        p[np.arange(n), idx] -= 1.0
        return (p * (float(g) / n),)

    return _emit(out_data, (logits,), values, bwd)


def l2_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared difference over every element."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"l2_loss: incompatible shapes {a.data.shape} and {b.data.shape}")
    if a.data.size == 0:
        raise DimensionError("l2_loss of empty tensors")
    n = a.data.size
    na, nb = _track(a), _track(b)

    def values():
        d = a.data - b.data
        return np.asarray((d * d).mean())

    def bwd(g):
        d = (a.data - b.data) * (2.0 * float(g) / n)
        return (d if na else None, -d if nb else None)

    return _emit(values(), (a, b), values, bwd)


_KL_EPS = 1e-9


def kl_divergence(p: Tensor, q: Tensor) -> Tensor:
    """Mean row-wise KL(p || q), with log arguments clamped at 1e-9.

    Rows must be probability vectors: entries >= 0 and each row summing to 1
    within 1e-6, else a DomainError is raised.
    """
    if p.data.shape != q.data.shape:
        raise DimensionError(f"kl_divergence: incompatible shapes {p.data.shape} and {q.data.shape}")
    pd = p.data if p.data.ndim == 2 else p.data.reshape(1, -1)
    qd = q.data if q.data.ndim == 2 else q.data.reshape(1, -1)
    if pd.shape[1] == 0:
        raise DimensionError("kl_divergence over empty rows")
    for name, arr in (("p", pd), ("q", qd)):
        if arr.min() < 0.0:
            raise DomainError(f"kl_divergence: negative entries in {name}")
        if np.abs(arr.sum(axis=1) - 1.0).max() > 1e-6:
            raise DomainError(f"kl_divergence: rows of {name} must sum to 1 within 1e-6")
    rows = pd.shape[0]
    np_, nq = _track(p), _track(q)

    def values():
        a = p.data.reshape(rows, -1)
        b = q.data.reshape(rows, -1)
        logs = np.log(np.maximum(a, _KL_EPS)) - np.log(np.maximum(b, _KL_EPS))
        return np.asarray((a * logs).sum() / rows)

    def bwd(g):
        a = p.data.reshape(rows, -1)
        b = q.data.reshape(rows, -1)
        ac = np.maximum(a, _KL_EPS)
        bc = np.maximum(b, _KL_EPS)
        s = float(g) / rows
        gp = None
        if np_:
            gp = ((np.log(ac) - np.log(bc)) + a * (a > _KL_EPS) / ac) * s
            gp = gp.reshape(p.data.shape)
        gq = None
        if nq:
            gq = (-(a * (b > _KL_EPS) / bc)) * s
            gq = gq.reshape(q.data.shape)
        return (gp, gq)

    return _emit(values(), (p, q), values, bwd)
