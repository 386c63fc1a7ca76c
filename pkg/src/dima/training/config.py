"""Run configuration: a flat, typed, hashable key=value document.

One assignment per line, ``#`` comments.  Unknown keys are rejected so a typo
never silently trains the wrong model.  The config hash pins checkpoints to
the settings that produced them.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields

from dima.errors import ConfigError
from dima.nn import ModelDims
from dima.world import GridSpec


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # artifact paths
    dataset: str = "train.jsonl"
    out_dir: str = "runs"
    # architecture
    d: int = 32
    d_l: int = 64
    n_q: int = 8
    heads: int = 4
    lm_heads: int = 4
    enc_blocks: int = 2
    planner_blocks: int = 2
    lm_layers: int = 2
    context: int = 256
    head_hidden: int = 64
    agent_bank: int = 16
    map_bank: int = 16
    # world
    grid_resolution: float = 1.0
    grid_extent: float = 8.0
    # schedule
    stage1_steps: int = 2000
    stage2_steps: int = 1500
    batch: int = 8
    base_lr: float = 1e-3
    weight_decay: float = 0.01
    # loss shape
    margin: float = 1.0
    lambda_col: float = 1.0
    tau: float = 1.0
    w_planning: float = 1.0
    w_llm: float = 1.0
    w_recon: float = 1.0
    w_future: float = 1.0
    w_distill: float = 1.0
    w_edit: float = 1.0
    w_decode: float = 0.5
    mask_ratio_min: float = 0.2
    mask_ratio_max: float = 0.4
    # ablation switches
    recon_all_tokens: bool = True
    distill_stop_llm: bool = False
    disable_mllm: bool = False

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        for name in ("stage1_steps", "stage2_steps", "batch"):
            if getattr(self, name) < 0 or (name == "batch" and self.batch == 0):
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.base_lr:
            raise ConfigError("base_lr must be positive")
        if not 0.0 <= self.mask_ratio_min <= self.mask_ratio_max <= 1.0:
            raise ConfigError("mask ratio bounds must satisfy 0 <= min <= max <= 1")

    def dims(self) -> ModelDims:
        return ModelDims(d=self.d, heads=self.heads, enc_blocks=self.enc_blocks,
                         planner_blocks=self.planner_blocks, agent_bank=self.agent_bank,
                         map_bank=self.map_bank, d_l=self.d_l, lm_layers=self.lm_layers,
                         lm_heads=self.lm_heads, n_q=self.n_q, context=self.context,
                         head_hidden=self.head_hidden)

    def grid(self) -> GridSpec:
        return GridSpec(self.grid_resolution, self.grid_extent)

    def canonical(self) -> str:
        """Stable serialization: sorted key=value lines."""
        out = []
        for key in sorted(asdict(self)):
            value = getattr(self, key)
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            out.append(f"{key}={text}")
        return "\n".join(out) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def replace(self, **overrides) -> "RunConfig":
        merged = asdict(self) | _typed(overrides)
        return RunConfig(**merged)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw) -> object:
    kind = _FIELD_TYPES[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind == "bool":
            if text not in ("true", "false"):
                raise ValueError(text)
            return text == "true"
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "str":
            return text
    except ValueError as exc:
        raise ConfigError(f"config key {key}: cannot parse {text!r} as {kind}") from exc
    raise ConfigError(f"config key {key}: unsupported type {kind}")


def _typed(items: dict) -> dict:
    out = {}
    for key, raw in items.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _parse_value(key, raw)
    return out


def parse_config(text: str) -> RunConfig:
    items: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        items[key.strip()] = value.strip()
    return RunConfig(**_typed(items))


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
