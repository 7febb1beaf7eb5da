"""Versioned weight checkpoint files.

Layout (all integers little-endian)::

    b"POCKETBFN-CKPT\\n"                 magic line
    b"<version>\\n"                      format version, currently 1
    b"<header bytes>\\n"                 decimal length of the JSON header
    <JSON header, UTF-8, sorted keys>
    <float64 payload>                   tensors back to back, row-major

The header holds ``config`` (model hyperparameters), ``meta`` (free-form
run state such as epoch and optimizer step), and ``tensors``: an ordered
list of ``{"path", "shape"}`` records describing the payload. Paths are
``weights/<param path>`` for model parameters and ``adam_m/...`` /
``adam_v/...`` for optimizer moments when present.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .config import ModelConfig
from .model import ModelWeights

MAGIC = b"POCKETBFN-CKPT\n"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, weights: ModelWeights, meta: dict[str, Any] | None = None,
                    optimizer=None) -> None:
    tensors: list[tuple[str, np.ndarray]] = [(f"weights/{p}", t.data) for p, t in weights.named_parameters()]
    if optimizer is not None:
        names = [p for p, _ in weights.named_parameters()]
        tensors += [(f"adam_m/{p}", m) for p, m in zip(names, optimizer.m)]
        tensors += [(f"adam_v/{p}", v) for p, v in zip(names, optimizer.v)]
        meta = dict(meta or {}, adam_step=optimizer.step, adam_lr=optimizer.lr)
    header = {
        "config": weights.config.to_dict(),
        "meta": meta or {},
        "tensors": [{"path": p, "shape": list(a.shape)} for p, a in tensors],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"{VERSION}\n{len(hbytes)}\n".encode("ascii"))
        fh.write(hbytes)
        for _, a in tensors:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    try:
        nl = raw.index(b"\n", pos)
        version = int(raw[pos:nl])
        pos = nl + 1
        nl = raw.index(b"\n", pos)
        hlen = int(raw[pos:nl])
        pos = nl + 1
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    pos += hlen
    arrays = {}
    for rec in header["tensors"]:
        shape = tuple(rec["shape"])
        n = int(np.prod(shape, dtype=np.int64)) * 8
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated payload at {rec['path']}")
        arrays[rec["path"]] = np.frombuffer(raw[pos:pos + n], dtype="<f8").reshape(shape).astype(np.float64)
        pos += n
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return header, arrays


def load_checkpoint(path) -> tuple[ModelWeights, dict, dict[str, np.ndarray]]:
    """Returns ``(weights, meta, optimizer_arrays)``."""
    header, arrays = read_checkpoint(path)
    cfg = ModelConfig.from_dict(header["config"])
    weights = ModelWeights.init(cfg, np.random.default_rng(0))
    state = {p[len("weights/"):]: a for p, a in arrays.items() if p.startswith("weights/")}
    try:
        weights.load_state(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    opt = {p: a for p, a in arrays.items() if not p.startswith("weights/")}
    return weights, header["meta"], opt


def restore_optimizer(optimizer, weights: ModelWeights, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    names = [p for p, _ in weights.named_parameters()]
    try:
        optimizer.m = [arrays[f"adam_m/{p}"].copy() for p in names]
        optimizer.v = [arrays[f"adam_v/{p}"].copy() for p in names]
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks optimizer state for {exc}") from None
    optimizer.step = int(meta.get("adam_step", 0))
