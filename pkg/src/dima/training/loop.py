"""Two-stage training: vision pretraining, then joint tuning with the LM.

Stage 1 trains the scene tokenizer and planner on imitation + collision +
entity-decode losses.  Stage 2 adds the language branch: per step one scene,
one QA per category, one mask draw, one scene edit and a two-frame future
window, all feeding the weighted total objective.

Per-step randomness is stage-agnostic: step k derives its streams from
(seed, k), so a stage-2 run with every language loss disabled walks the same
scene sequence as stage 1 and reduces to its dynamics.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

import dima.numerics as nm
from dima.numerics import AdamW, Tape, Tensor
from dima.errors import ConfigError, DivergenceError, FeasibilityError
from dima.encoder import BeamTokens, decode_loss, encode, grid_features, init_encoder
from dima.language import (
    CATEGORIES,
    adapt,
    build_vocab,
    edit_decode,
    ego_feature,
    future_decode,
    init_adapters,
    init_lm,
    qa_for,
    recon_decode,
    scene_hidden,
    vqa_loss,
)
from dima.planner import init_planner, plan, planning_loss
from dima.surrogate import (
    FutureTargets,
    MaskSpec,
    apply_edit,
    apply_mask,
    edit_loss,
    edit_qa,
    future_loss,
    propose_edit,
    recon_loss,
)
from dima.training.checkpoint import (
    CheckpointState,
    load_checkpoint,
    restore_optimizer,
    save_checkpoint,
)
from dima.training.config import RunConfig
from dima.training.losses import STAGE2_REQUIRED, LossReport, total_loss
from dima.world import Scene, advance

CSV_HEADER = "step,planning,llm,recon,future,distill,edit,total,lr"

_INIT_VISION = 101
_INIT_LANGUAGE = 202


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(key))


def _step_streams(seed: int, step: int) -> tuple[np.random.Generator, ...]:
    children = np.random.SeedSequence((seed, step)).spawn(4)
    return tuple(np.random.default_rng(c) for c in children)


def init_vision(config: RunConfig) -> dict[str, Tensor]:
    rng = _rng(config.seed, _INIT_VISION)
    dims = config.dims()
    return init_encoder(rng, dims) | init_planner(rng, dims)


def init_language(config: RunConfig, vocab_size: int) -> dict[str, Tensor]:
    rng = _rng(config.seed, _INIT_LANGUAGE)
    grid_cells = config.grid().cells_per_side ** 2
    return init_adapters(rng, config.dims()) | init_lm(rng, config.dims(), vocab_size,
                                                       grid_cells)


@dataclass
class _Run:
    """Shared per-run state: raster-feature and advanced-frame caches."""

    config: RunConfig
    dataset: list[Scene]
    features: dict[str, np.ndarray]
    advanced: dict[str, tuple[Scene, Scene]]

    def feat(self, scene: Scene) -> np.ndarray:
        cached = self.features.get(scene.scene_id)
        if cached is None:
            cached = grid_features(scene, self.config.grid())
            self.features[scene.scene_id] = cached
        return cached

    def future_frames(self, scene: Scene) -> tuple[Scene, Scene]:
        cached = self.advanced.get(scene.scene_id)
        if cached is None:
            nxt = advance(scene)
            cached = (nxt, advance(nxt))
            self.advanced[scene.scene_id] = cached
        return cached


def _future_targets(run: _Run, scene: Scene, params, config: RunConfig) -> FutureTargets:
    """Encode the two advanced frames with no tape open: pure constants."""
    dims, grid = config.dims(), config.grid()
    nxt, nxt2 = run.future_frames(scene)
    b1 = encode(nxt, params, grid, dims, features=run.feat(nxt)).b
    b2 = encode(nxt2, params, grid, dims, features=run.feat(nxt2)).b
    return FutureTargets(b_next=b1.detach(), b_next2=b2.detach())


def _csv_open(path, resume_step: int):
    """Open the loss log, truncating any rows past the resume point."""
    if resume_step and os.path.exists(path):
        with open(path) as fh:
            lines = fh.read().splitlines()
        kept = [lines[0]] if lines else [CSV_HEADER]
        for line in lines[1:]:
            if int(line.split(",", 1)[0]) <= resume_step:
                kept.append(line)
        fh = open(path, "w")
        fh.write("\n".join(kept) + "\n")
        return fh
    fh = open(path, "w")
    fh.write(CSV_HEADER + "\n")
    return fh


def _csv_row(fh, step: int, report: LossReport, lr: float) -> None:
    cells = [str(step)]
    for name in ("planning", "llm", "recon", "future", "distill", "edit"):
        cells.append(repr(report.scalar(name)))
    cells.append(repr(float(report.total.data)))
    cells.append(repr(lr))
    fh.write(",".join(cells) + "\n")


def _guard(report: LossReport, stage: int, step: int) -> None:
    if not np.isfinite(report.total.data):
        raise DivergenceError(f"stage {stage} diverged at step {step}: "
                              f"terms {report.terms}")


def _weights(config: RunConfig) -> dict[str, float]:
    return {"planning": config.w_planning, "llm": config.w_llm,
            "recon": config.w_recon, "future": config.w_future,
            "distill": config.w_distill, "edit": config.w_edit}


def run_stage1(dataset: list[Scene], config: RunConfig, csv_path, ckpt_path,
               resume: CheckpointState | None = None,
               stop_after: int | None = None) -> CheckpointState:
    """Vision-only pretraining; returns the saved final state."""
    if not dataset:
        raise ConfigError("stage 1 needs a nonempty dataset")
    dims, grid = config.dims(), config.grid()
    if resume is not None:
        params = resume.params
        start = resume.step
    else:
        params = init_vision(config)
        start = 0
    opt = AdamW(params, base_lr=config.base_lr, total_steps=config.stage1_steps,
                weight_decay=config.weight_decay)
    if resume is not None:
        restore_optimizer(resume, opt)
    run = _Run(config, dataset, {}, {})
    last = min(config.stage1_steps, stop_after) if stop_after else config.stage1_steps

    with _csv_open(csv_path, start) as csv:
        for step in range(start + 1, last + 1):
            scene_rng, _, _, _ = _step_streams(config.seed, step)
            picks = scene_rng.integers(len(dataset), size=config.batch)
            lr = opt.lr
            with Tape(seed=step) as tape:
                term = None
                for idx in picks:
                    scene = dataset[int(idx)]
                    toks = encode(scene, params, grid, dims, features=run.feat(scene))
                    wps, _ = plan(toks, params, dims)
                    piece = nm.add(
                        planning_loss(wps, scene, config.margin, config.lambda_col),
                        nm.scale(decode_loss(params, toks, scene), config.w_decode))
                    term = piece if term is None else nm.add(term, piece)
                term = nm.scale(term, 1.0 / config.batch)
                report = total_loss({"planning": term}, _weights(config))
                _guard(report, 1, step)
                tape.backward(report.total)
            opt.step()
            opt.zero_grad()
            _csv_row(csv, step, report, lr)

    save_checkpoint(ckpt_path, params, opt, config, stage=1, step=last)
    return load_checkpoint(ckpt_path, config)


def _stage2_step(params, run: _Run, scene: Scene, step: int, vocab,
                 config: RunConfig, targets: FutureTargets | None) -> LossReport:
    dims, grid = config.dims(), config.grid()
    _, qa_rng, mask_rng, edit_rng = _step_streams(config.seed, step)

    toks = encode(scene, params, grid, dims, features=run.feat(scene))
    wps, feat = plan(toks, params, dims)
    planning = nm.add(planning_loss(wps, scene, config.margin, config.lambda_col),
                      nm.scale(decode_loss(params, toks, scene), config.w_decode))
    terms: dict[str, Tensor] = {"planning": planning}
    if config.disable_mllm:
        return total_loss(terms, _weights(config))

    # language view of the unedited scene
    adapted = adapt(toks, params, dims)
    hidden = scene_hidden(adapted, params, dims, vocab)

    # one QA per category
    llm_terms = []
    for category in CATEGORIES:
        qa = qa_for(scene, category, qa_rng)
        llm_terms.append(vqa_loss(adapted, vocab.encode(list(qa.question)),
                                  vocab.encode(list(qa.answer)), params, dims, vocab))

    # scene edit: QA joins the language loss, collision joins the edit term
    edit_term = None
    try:
        op = propose_edit(scene, int(edit_rng.integers(2 ** 31)))
    except FeasibilityError:
        try:
            op = propose_edit(scene, int(edit_rng.integers(2 ** 31)), kind="remove")
        except FeasibilityError:
            op = None
    if op is not None:
        edited = apply_edit(scene, op)
        toks_e = encode(edited, params, grid, dims)
        adapted_e = adapt(toks_e, params, dims)
        qa = edit_qa(scene, op, edited)
        llm_terms.append(vqa_loss(adapted_e, vocab.encode(list(qa.question)),
                                  vocab.encode(list(qa.answer)), params, dims, vocab))
        hidden_e = scene_hidden(adapted_e, params, dims, vocab)
        pred_e = edit_decode(hidden_e, adapted_e, params, dims)
        edit_term = edit_loss(pred_e, edited, config.margin)

    llm = llm_terms[0]
    for piece in llm_terms[1:]:
        llm = nm.add(llm, piece)
    terms["llm"] = nm.scale(llm, 1.0 / len(llm_terms))

    # masked reconstruction from the masked language view
    ratio = float(mask_rng.uniform(config.mask_ratio_min, config.mask_ratio_max))
    spec = MaskSpec(ratio, seed=int(mask_rng.integers(2 ** 31)))
    b_masked, masked_rows = apply_mask(toks.b, spec, params["encoder/mask_embed"])
    adapted_m = adapt(BeamTokens(b=b_masked, e=toks.e, a=toks.a, m=toks.m), params, dims)
    hidden_m = scene_hidden(adapted_m, params, dims, vocab)
    b_hat = recon_decode(hidden_m, adapted_m, params, dims, grid.cells_per_side ** 2)
    terms["recon"] = recon_loss(b_hat, toks.b,
                                None if config.recon_all_tokens else masked_rows)

    # future grid tokens, targets gradient-blocked
    terms["future"] = future_loss(
        future_decode(hidden, adapted, params, dims, grid.cells_per_side ** 2), targets)

    terms["distill"] = _distill(feat, hidden, adapted, params, dims, config)
    if edit_term is not None:
        terms["edit"] = edit_term
    return total_loss(terms, _weights(config), required=STAGE2_REQUIRED)


def _distill(feat, hidden, adapted, params, dims, config: RunConfig) -> Tensor:
    from dima.training.losses import distill_loss

    llm_feat = ego_feature(hidden, adapted, params, dims)
    return distill_loss(feat, llm_feat, tau=config.tau, stop_llm=config.distill_stop_llm)


def run_stage2(dataset: list[Scene], config: RunConfig, stage1: CheckpointState,
               csv_path, ckpt_path, resume: CheckpointState | None = None,
               stop_after: int | None = None) -> CheckpointState:
    """Joint training of every branch, starting from a stage-1 checkpoint."""
    if not dataset:
        raise ConfigError("stage 2 needs a nonempty dataset")
    vocab = build_vocab()
    if resume is not None:
        if resume.stage != 2:
            raise ConfigError(f"resume expects a stage-2 checkpoint, got {resume.stage}")
        params = resume.params
        start = resume.step
    else:
        if stage1.stage != 1:
            raise ConfigError(f"expected a stage-1 checkpoint, got stage {stage1.stage}")
        # copy the vision weights so training never mutates the caller's state
        params = {name: nm.parameter(t.data.copy()) for name, t in stage1.params.items()}
        params |= init_language(config, len(vocab))
        start = 0
    opt = AdamW(params, base_lr=config.base_lr, total_steps=config.stage2_steps,
                weight_decay=config.weight_decay)
    if resume is not None:
        restore_optimizer(resume, opt)
    run = _Run(config, dataset, {}, {})
    last = min(config.stage2_steps, stop_after) if stop_after else config.stage2_steps

    with _csv_open(csv_path, start) as csv:
        for step in range(start + 1, last + 1):
            scene_rng, _, _, _ = _step_streams(config.seed, step)
            scene = dataset[int(scene_rng.integers(len(dataset), size=1)[0])]
            targets = None if config.disable_mllm else _future_targets(run, scene,
                                                                       params, config)
            lr = opt.lr
            with Tape(seed=step) as tape:
                report = _stage2_step(params, run, scene, step, vocab, config, targets)
                _guard(report, 2, step)
                tape.backward(report.total)
            opt.step()
            opt.zero_grad()
            _csv_row(csv, step, report, lr)

    save_checkpoint(ckpt_path, params, opt, config, stage=2, step=last)
    return load_checkpoint(ckpt_path, config)
