"""Checkpoint files: one JSON header line, then the parameters as little-endian float64."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .model import GnnConfig, GnnParams, audit, param_shapes

CKPT_SCHEMA = "qcqp-gnn-ckpt-v1"


class CheckpointError(ValueError):
    pass


def dumps_checkpoint(params: GnnParams, cfg: GnnConfig, seed: int, epoch: int, extra: dict | None = None) -> bytes:
    audit(params, cfg)
    blob = params.flat().astype("<f8").tobytes()
    header = {
        "schema": CKPT_SCHEMA,
        "config": cfg.to_dict(),
        "seed": int(seed),
        "epoch": int(epoch),
        "names": params.names(),
        "count": params.size,
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    if extra:
        header["extra"] = extra
    return json.dumps(header, sort_keys=True).encode() + b"\n" + blob


def loads_checkpoint(data: bytes) -> tuple[GnnParams, GnnConfig, dict]:
    head, sep, blob = data.partition(b"\n")
    if not sep:
        raise CheckpointError("missing header line")
    try:
        header = json.loads(head)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"bad header: {exc}") from exc
    if header.get("schema") != CKPT_SCHEMA:
        raise CheckpointError(f"unexpected schema {header.get('schema')!r}")
    cfg = GnnConfig.from_dict(header["config"])
    if len(blob) != 8 * header["count"]:
        raise CheckpointError(f"blob has {len(blob)} bytes, expected {8 * header['count']}")
    if hashlib.sha256(blob).hexdigest() != header["sha256"]:
        raise CheckpointError("checksum mismatch")
    shapes = param_shapes(cfg)
    if list(shapes) != header["names"]:
        raise CheckpointError("parameter names do not match the stored configuration")
    vec = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    template = GnnParams({k: np.zeros(s) for k, s in shapes.items()})
    return template.with_flat(vec), cfg, header


def save_checkpoint(path, params: GnnParams, cfg: GnnConfig, seed: int, epoch: int, extra: dict | None = None) -> None:
    Path(path).write_bytes(dumps_checkpoint(params, cfg, seed, epoch, extra))


def load_checkpoint(path) -> tuple[GnnParams, GnnConfig, dict]:
    return loads_checkpoint(Path(path).read_bytes())
