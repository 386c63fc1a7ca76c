"""Decoupled-weight-decay Adam with a cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from dima.errors import DimensionError
from dima.numerics.tensor import Tensor


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine decay from ``base_lr`` at step 0 to 0 at ``total_steps``."""
    if total_steps <= 0:
        raise DimensionError("cosine_lr: total_steps must be positive")
    t = min(max(step, 0), total_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t / total_steps))


class AdamW:
    """AdamW over named parameters.

    Weight decay is decoupled: parameters are shrunk by ``lr * weight_decay``
    before the moment-based update, and the decay never enters the moments.
    Moments are stored per parameter name so they can round-trip through
    checkpoints.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        base_lr: float,
        total_steps: int,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = dict(params)
        self.base_lr = float(base_lr)
        self.total_steps = int(total_steps)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    @property
    def lr(self) -> float:
        """Learning rate that the next step() call will apply."""
        return cosine_lr(self.base_lr, self.step_count, self.total_steps)

    def step(self) -> float:
        """Apply one update from the accumulated gradients; returns the lr used."""
        lr = self.lr
        t = self.step_count + 1
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        self.step_count = t
        return lr

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
