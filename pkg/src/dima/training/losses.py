"""Distillation and the weighted total objective."""

from __future__ import annotations

from dataclasses import dataclass

import dima.numerics as nm
from dima.numerics import Tensor
from dima.errors import ConfigError

TERMS = ("planning", "llm", "recon", "future", "distill", "edit")
STAGE2_REQUIRED = ("planning", "llm", "recon", "future", "distill")


def distill_loss(planner_feature: Tensor, llm_feature: Tensor, tau: float = 1.0,
                 stop_llm: bool = False) -> Tensor:
    """KL(P_llm || P_vis) between softened feature distributions.

    Both features are (1, d) in planner width (the language side already
    projected).  Gradient reaches both branches unless ``stop_llm``.
    """
    if planner_feature.shape != llm_feature.shape:
        raise ConfigError(
            f"feature widths differ: {planner_feature.shape} vs {llm_feature.shape}")
    if stop_llm:
        llm_feature = llm_feature.detach()
    p_llm = nm.softmax(nm.scale(llm_feature, 1.0 / tau))
    p_vis = nm.softmax(nm.scale(planner_feature, 1.0 / tau))
    return nm.kl_divergence(p_llm, p_vis)


@dataclass
class LossReport:
    """Scalar view of one step; total is the live tensor for backward."""

    terms: dict[str, float]
    weights: dict[str, float]
    total: Tensor

    def scalar(self, name: str) -> float:
        return self.terms.get(name, 0.0)


def total_loss(terms: dict[str, Tensor], weights: dict[str, float],
               required: tuple[str, ...] = ()) -> LossReport:
    """Weighted sum of loss tensors; missing required terms are an error."""
    unknown = set(terms) - set(TERMS)
    if unknown:
        raise ConfigError(f"unknown loss terms: {sorted(unknown)}")
    missing = [name for name in required if name not in terms]
    if missing:
        raise ConfigError(f"missing required loss terms: {missing}")
    total = None
    for name in TERMS:
        if name not in terms:
            continue
        piece = nm.scale(terms[name], weights.get(name, 1.0))
        total = piece if total is None else nm.add(total, piece)
    if total is None:
        raise ConfigError("no loss terms supplied")
    return LossReport(terms={k: float(v.data) for k, v in terms.items()},
                      weights={k: weights.get(k, 1.0) for k in terms},
                      total=total)
