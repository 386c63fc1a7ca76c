"""Operator command line: datagen, train, eval, ask, report.

Exit codes: 0 success, 2 usage or configuration problem, 3 training
divergence.  DIMA_SEED in the environment supplies a default seed; explicit
flags win.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from dima.errors import (
    CapacityError,
    CheckpointError,
    ConfigError,
    DatasetParseError,
    DivergenceError,
    DomainError,
    NotFoundError,
)
from dima.evaluation import PROTOCOLS, dual_inference, evaluate, make_planner
from dima.language import build_vocab, adapt, generate
from dima.encoder import encode
from dima.report import loss_curves_svg, metrics_bars_svg
from dima.training.checkpoint import load_checkpoint
from dima.training.config import RunConfig, load_config
from dima.training.loop import run_stage1, run_stage2
from dima.world import KINDS, generate_scene, load_dataset, save_dataset, select_split

_USAGE_ERRORS = (ConfigError, CapacityError, NotFoundError, DatasetParseError,
                 CheckpointError, DomainError, FileNotFoundError, IsADirectoryError,
                 PermissionError)


def _env_seed(flag_value: int | None, fallback: int = 0) -> int:
    if flag_value is not None:
        return flag_value
    env = os.environ.get("DIMA_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"DIMA_SEED={env!r} is not an integer") from exc
    return fallback


def _parse_mix(text: str | None) -> dict[str, float]:
    if not text:
        return {kind: 1.0 for kind in KINDS}
    mix: dict[str, float] = {}
    for item in text.split(","):
        if "=" not in item:
            raise ConfigError(f"bad mix entry {item!r}, expected kind=weight")
        kind, raw = item.split("=", 1)
        kind = kind.strip()
        if kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {kind!r}")
        try:
            weight = float(raw)
        except ValueError as exc:
            raise ConfigError(f"bad weight {raw!r} for {kind}") from exc
        if weight < 0:
            raise ConfigError(f"negative weight for {kind}")
        mix[kind] = weight
    return mix


def cmd_datagen(args) -> int:
    mix = _parse_mix(args.mix)
    for kind in args.exclude_kind or []:
        if kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {kind!r}")
        mix.pop(kind, None)
    kinds = sorted(k for k, w in mix.items() if w > 0)
    if not kinds:
        raise ConfigError("scenario mix is empty")
    weights = np.array([mix[k] for k in kinds])
    weights = weights / weights.sum()
    seed = _env_seed(args.seed)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xDA7A)))
    counters = {kind: 0 for kind in kinds}
    scenes = []
    for _ in range(args.count):
        kind = kinds[int(rng.choice(len(kinds), p=weights))]
        scenes.append(generate_scene(kind, seed * 1_000_000 + counters[kind]))
        counters[kind] += 1
    save_dataset(scenes, args.out)
    for kind in kinds:
        print(f"{kind}: {counters[kind]}")
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)
    if "DIMA_SEED" in os.environ:
        config = config.replace(seed=_env_seed(None, config.seed))
    dataset = load_dataset(config.dataset)
    os.makedirs(config.out_dir, exist_ok=True)
    paths = {
        1: (os.path.join(config.out_dir, "stage1_loss.csv"),
            os.path.join(config.out_dir, "stage1.ckpt")),
        2: (os.path.join(config.out_dir, "stage2_loss.csv"),
            os.path.join(config.out_dir, "stage2.ckpt")),
    }
    if args.stage in ("1", "all"):
        resume = None
        if args.resume and args.stage == "1":
            resume = load_checkpoint(args.resume, config)
        state = run_stage1(dataset, config, *paths[1], resume=resume)
        print(f"stage 1 done at step {state.step}; checkpoint {paths[1][1]}")
    if args.stage in ("2", "all"):
        if not os.path.exists(paths[1][1]):
            raise ConfigError(f"stage-1 checkpoint missing: {paths[1][1]}")
        stage1 = load_checkpoint(paths[1][1], config)
        resume = None
        if args.resume and args.stage == "2":
            resume = load_checkpoint(args.resume, config)
        state = run_stage2(dataset, config, stage1, *paths[2], resume=resume)
        print(f"stage 2 done at step {state.step}; checkpoint {paths[2][1]}")
    return 0


def _load_for_eval(args) -> tuple[dict, RunConfig]:
    config = load_config(args.config) if args.config else RunConfig()
    state = load_checkpoint(args.checkpoint, config, force=args.force)
    params = state.params
    if args.mllm_checkpoint:
        extra = load_checkpoint(args.mllm_checkpoint, config, force=args.force)
        params = dict(params) | extra.params
    return params, config


def cmd_eval(args) -> int:
    if args.dual and not args.mllm_checkpoint:
        raise ConfigError("--dual requires --mllm-checkpoint")
    params, config = _load_for_eval(args)
    scenes = select_split(load_dataset(args.dataset), args.split)
    protocol = PROTOCOLS[args.protocol]
    dims, grid = config.dims(), config.grid()
    if args.dual:
        vocab = build_vocab()

        def plan_fn(scene):
            return dual_inference(params, scene, grid, dims, vocab)
    else:
        plan_fn = make_planner(params, grid, dims)
    report = evaluate(plan_fn, scenes, protocol, split=args.split)
    if report.count == 0:
        print(f"warning: split {args.split!r} selected no scenes", file=sys.stderr)
    with open(args.out, "w") as fh:
        fh.write(report.CSV_HEADER + "\n" + report.csv_row() + "\n")
    print(report.summary())
    print(f"wrote {args.out}")
    return 0


def cmd_ask(args) -> int:
    config = load_config(args.config) if args.config else RunConfig()
    state = load_checkpoint(args.checkpoint, config, force=args.force)
    scenes = load_dataset(args.dataset)
    matches = [s for s in scenes if s.scene_id == args.scene_id]
    if not matches:
        raise NotFoundError(f"scene id {args.scene_id!r} not in {args.dataset}")
    vocab = build_vocab()
    words = args.question.split()
    question = vocab.encode(words)  # raises listing any OOV words
    dims, grid = config.dims(), config.grid()
    toks = encode(matches[0], state.params, grid, dims)
    adapted = adapt(toks, state.params, dims)
    answer = generate(adapted, question, state.params, dims, vocab)
    print(" ".join(vocab.decode(answer)))
    return 0


def cmd_report(args) -> int:
    if bool(args.loss_csv) == bool(args.metrics_csv):
        raise ConfigError("pass exactly one of --loss-csv / --metrics-csv")
    if args.loss_csv:
        with open(args.loss_csv) as fh:
            svg = loss_curves_svg(fh.read())
    else:
        with open(args.metrics_csv) as fh:
            svg = metrics_bars_svg(fh.read())
    with open(args.out_svg, "w") as fh:
        fh.write(svg)
    print(f"wrote {args.out_svg}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dima", description="Synthetic driving planner with a language branch.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("datagen", help="generate a scenario dataset", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--count", type=int, default=100, help="number of scenes")
    p.add_argument("--seed", type=int, default=None,
                   help="generation seed (default: DIMA_SEED or 0)")
    p.add_argument("--mix", default=None,
                   help="kind=weight,... sampling mix (default: uniform over kinds)")
    p.add_argument("--exclude-kind", action="append", default=None, metavar="KIND",
                   help="drop a scenario kind (repeatable)")
    p.set_defaults(fn=cmd_datagen)

    p = sub.add_parser("train", help="run the two-stage training", formatter_class=fmt)
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--stage", choices=("1", "2", "all"), default="all",
                   help="which stage to run")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="planner checkpoint")
    p.add_argument("--dataset", required=True, help="JSONL scene file")
    p.add_argument("--split", default="full",
                   help="full | targeted | longtail:<kind>")
    p.add_argument("--protocol", choices=tuple(PROTOCOLS), default="standardized",
                   help="reporting protocol")
    p.add_argument("--dual", action="store_true",
                   help="fuse the language branch features")
    p.add_argument("--mllm-checkpoint", default=None,
                   help="checkpoint carrying the language weights")
    p.add_argument("--config", default=None, help="config file matching the checkpoint")
    p.add_argument("--force", action="store_true",
                   help="load despite a config hash mismatch")
    p.add_argument("--out", default="metrics.csv", help="metrics CSV path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ask", help="query the language branch", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="stage-2 checkpoint")
    p.add_argument("--dataset", required=True, help="JSONL scene file")
    p.add_argument("--scene-id", required=True, help="scene to ask about")
    p.add_argument("--question", required=True, help="whitespace-tokenized question")
    p.add_argument("--config", default=None, help="config file matching the checkpoint")
    p.add_argument("--force", action="store_true",
                   help="load despite a config hash mismatch")
    p.set_defaults(fn=cmd_ask)

    p = sub.add_parser("report", help="render CSV logs as SVG", formatter_class=fmt)
    p.add_argument("--loss-csv", default=None, help="training loss log to chart")
    p.add_argument("--metrics-csv", default=None, help="metrics table to chart")
    p.add_argument("--out-svg", required=True, help="output SVG path")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
