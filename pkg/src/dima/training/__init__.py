"""Joint training: config, losses, checkpoints, the two-stage loop."""

from dima.training.checkpoint import (
    CheckpointState,
    load_checkpoint,
    restore_optimizer,
    save_checkpoint,
)
from dima.training.config import RunConfig, load_config, parse_config
from dima.training.loop import init_language, init_vision, run_stage1, run_stage2
from dima.training.losses import LossReport, distill_loss, total_loss

__all__ = [
    "CheckpointState",
    "LossReport",
    "RunConfig",
    "distill_loss",
    "init_language",
    "init_vision",
    "load_checkpoint",
    "load_config",
    "parse_config",
    "restore_optimizer",
    "run_stage1",
    "run_stage2",
    "save_checkpoint",
    "total_loss",
]
