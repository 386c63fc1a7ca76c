"""Versioned binary checkpoint container.

Layout (all integers little-endian uint32 unless noted):

    magic 8 bytes | version | config hash (64 ascii hex bytes) | blob count
    then per blob, sorted by name:
    name length | name utf-8 | ndim | dim sizes | float64 LE payload

Weights, optimizer moments (``opt/m/...``, ``opt/v/...``) and scalar metadata
(``_meta/...``) all travel as blobs, so save -> load -> save is byte-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

import dima.numerics as nm
from dima.numerics import AdamW, Tensor
from dima.errors import CheckpointError
from dima.training.config import RunConfig

_MAGIC = b"DIMACKPT"
_VERSION = 1


@dataclass
class CheckpointState:
    params: dict[str, Tensor]
    opt_m: dict[str, np.ndarray]
    opt_v: dict[str, np.ndarray]
    opt_step: int
    stage: int
    step: int
    config_hash: str


def _write_blob(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode()
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    for size in arr.shape:
        fh.write(struct.pack("<I", size))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_checkpoint(path, params: dict[str, Tensor], optimizer: AdamW | None,
                    config: RunConfig, stage: int, step: int) -> None:
    blobs: dict[str, np.ndarray] = {name: t.data for name, t in params.items()}
    if optimizer is not None:
        for name, arr in optimizer.m.items():
            blobs[f"opt/m/{name}"] = arr
        for name, arr in optimizer.v.items():
            blobs[f"opt/v/{name}"] = arr
        blobs["_meta/opt_step"] = np.asarray(float(optimizer.step_count))
    blobs["_meta/stage"] = np.asarray(float(stage))
    blobs["_meta/step"] = np.asarray(float(step))
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(config.digest().encode())
        fh.write(struct.pack("<I", len(blobs)))
        for name in sorted(blobs):
            _write_blob(fh, name, blobs[name])


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint file")
    return data


def _read_blob(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
    name = _read_exact(fh, name_len).decode()
    (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    payload = _read_exact(fh, 8 * count)
    return name, np.frombuffer(payload, dtype="<f8").reshape(shape).copy()


def load_checkpoint(path, config: RunConfig, force: bool = False) -> CheckpointState:
    """Read a checkpoint; refuses a config-hash mismatch unless ``force``."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 8) != _MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != _VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        config_hash = _read_exact(fh, 64).decode()
        if config_hash != config.digest() and not force:
            raise CheckpointError(
                f"{path}: config hash mismatch (checkpoint {config_hash[:12]}..., "
                f"config {config.digest()[:12]}...); pass force to override")
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        blobs = dict(_read_blob(fh) for _ in range(count))

    params: dict[str, Tensor] = {}
    opt_m: dict[str, np.ndarray] = {}
    opt_v: dict[str, np.ndarray] = {}
    meta: dict[str, float] = {}
    for name, arr in blobs.items():
        if name.startswith("opt/m/"):
            opt_m[name[6:]] = arr
        elif name.startswith("opt/v/"):
            opt_v[name[6:]] = arr
        elif name.startswith("_meta/"):
            meta[name[6:]] = float(arr)
        else:
            params[name] = nm.parameter(arr)
    for key in ("stage", "step"):
        if key not in meta:
            raise CheckpointError(f"{path}: missing metadata {key}")
    return CheckpointState(params=params, opt_m=opt_m, opt_v=opt_v,
                           opt_step=int(meta.get("opt_step", 0.0)),
                           stage=int(meta["stage"]), step=int(meta["step"]),
                           config_hash=config_hash)


def restore_optimizer(state: CheckpointState, optimizer: AdamW) -> None:
    """Load saved moments into a freshly built optimizer over the same names."""
    if set(optimizer.m) != set(state.opt_m) or set(optimizer.v) != set(state.opt_v):
        raise CheckpointError("optimizer parameter names do not match checkpoint")
    for name in optimizer.m:
        optimizer.m[name] = state.opt_m[name].copy()
        optimizer.v[name] = state.opt_v[name].copy()
    optimizer.step_count = state.opt_step
