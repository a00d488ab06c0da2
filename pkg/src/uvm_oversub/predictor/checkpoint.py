"""Versioned little-endian checkpoint format for one trainer.

    magic  b"UVMP"           4 bytes
    u32    version
    u32 x 9 d_model n_layers n_heads d_ff window addr_buckets pc_buckets tb_buckets delta_capacity
    u32    K (delta classes)
    i64 x K vocabulary deltas in class order
    u32    tensor count
    per tensor: u16 name length, name (utf-8), u8 ndim, u32 x ndim shape, f32 data
"""

from __future__ import annotations

import struct
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .model import PredictorConfig
from .train import Trainer

MAGIC = b"UVMP"
VERSION = 1
DIM_FIELDS = (
    "d_model", "n_layers", "n_heads", "d_ff", "window",
    "addr_buckets", "pc_buckets", "tb_buckets", "delta_capacity",
)


class CheckpointError(ValueError):
    pass


def save_checkpoint(trainer: Trainer, path: str | Path) -> Path:
    path = Path(path)
    cfg = trainer.cfg
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    out += struct.pack("<9I", *(getattr(cfg, f) for f in DIM_FIELDS))
    deltas = trainer.vocab.deltas
    out += struct.pack("<I", len(deltas))
    out += np.asarray(deltas, dtype="<i8").tobytes()
    state = trainer.model.state_dict()
    out += struct.pack("<I", len(state))
    for name, t in state.items():
        raw = name.encode()
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", t.dim()) + struct.pack(f"<{t.dim()}I", *t.shape)
        out += t.detach().cpu().numpy().astype("<f4").tobytes()
    path.write_bytes(bytes(out))
    return path


def load_checkpoint(path: str | Path, base: PredictorConfig | None = None) -> Trainer:
    """Rebuild a trainer; non-shape hyperparameters come from ``base``."""
    buf = memoryview(Path(path).read_bytes())
    if bytes(buf[:4]) != MAGIC:
        raise CheckpointError("not a predictor checkpoint")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 8
    dims = struct.unpack_from("<9I", buf, pos)
    pos += 36
    (k,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    deltas = np.frombuffer(buf, dtype="<i8", count=k, offset=pos).tolist()
    pos += 8 * k
    cfg = replace(base or PredictorConfig(), **dict(zip(DIM_FIELDS, dims)))
    trainer = Trainer(cfg)
    trainer.extend_vocab(deltas)
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    state = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = bytes(buf[pos:pos + ln]).decode()
        pos += ln
        (nd,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{nd}I", buf, pos)
        pos += 4 * nd
        count = int(np.prod(shape)) if nd else 1
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape)
        pos += 4 * count
        state[name] = torch.from_numpy(arr.astype(np.float32))
    if pos != len(buf):
        raise CheckpointError("trailing bytes in checkpoint")
    trainer.model.load_state_dict(state)
    return trainer
