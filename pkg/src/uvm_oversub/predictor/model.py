"""Dual-block Transformer page-delta predictor.

The regular block attends over (page address, page delta) embeddings, the
irregular block over (PC, thread block) embeddings. Each block's pooled
output is scaled by its own learnable scalar; the two are concatenated and
fed to a linear head whose rows grow as new delta classes appear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..trace import Trace, page_delta_stream


@dataclass
class PredictorConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    window: int = 10
    addr_buckets: int = 4096
    pc_buckets: int = 4096
    tb_buckets: int = 4096
    delta_capacity: int = 2048  # input delta embedding rows, last row is OOV
    # training
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 2
    grad_clip: float = 5.0
    new_class_std: float = 0.01
    head_bias: bool = True
    # losses
    lambda_base: float = 1.0
    mu: float = 0.5
    # quantisation (accounting by default)
    quant_bits: int = 5
    clamp: float = 16.0
    quantize: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must lie in [0, 1] (0 disables the thrashing term)")
        if self.lambda_base < 0:
            raise ValueError("lambda_base must be >= 0")

    @classmethod
    def from_mapping(cls, values: dict) -> "PredictorConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise KeyError(f"unknown predictor option {key!r}")
            default = getattr(cls(), key)
            if isinstance(default, bool):
                kwargs[key] = str(raw).strip().lower() in ("1", "true", "yes", "on")
            else:
                kwargs[key] = type(default)(raw)
        return cls(**kwargs)


def hash_bucket(values: np.ndarray, buckets: int) -> np.ndarray:
    """Multiplicative (Fibonacci) hash of non-negative ids into ``buckets`` slots."""
    v = np.asarray(values, dtype=np.uint64)
    h = (v * np.uint64(0x9E3779B97F4A7C15)) >> np.uint64(32)
    return (h % np.uint64(buckets)).astype(np.int64)


class TraceFeatures:
    """Per-access feature columns of a trace and window/target extraction.

    Sample ``i`` is the window of accesses ``i-W+1 .. i``; its target is the
    delta from access ``i`` to access ``i+1``.
    """

    def __init__(self, pages, deltas, pcs, tbs, window: int = 10):
        self.pages = np.asarray(pages, dtype=np.int64)
        self.deltas = np.asarray(deltas, dtype=np.int64)
        self.pcs = np.asarray(pcs, dtype=np.int64)
        self.tbs = np.asarray(tbs, dtype=np.int64)
        self.window = window

    @classmethod
    def from_trace(cls, trace: Trace, window: int = 10) -> "TraceFeatures":
        return cls(
            trace.pages,
            page_delta_stream(trace),
            [a.pc for a in trace.accesses],
            [a.tb_id for a in trace.accesses],
            window,
        )

    def __len__(self) -> int:
        return len(self.pages)

    def sample_positions(self) -> np.ndarray:
        return np.arange(self.window - 1, len(self.pages) - 1)

    def targets(self, positions) -> np.ndarray:
        return self.deltas[np.asarray(positions) + 1]

    def target_pages(self, positions) -> np.ndarray:
        return self.pages[np.asarray(positions) + 1]

    def window_index(self, positions) -> np.ndarray:
        pos = np.asarray(positions, dtype=np.int64)
        return pos[:, None] + np.arange(-self.window + 1, 1)[None, :]


@dataclass
class WindowBatch:
    addr: torch.Tensor
    delta: torch.Tensor
    pc: torch.Tensor
    tb: torch.Tensor

    def __len__(self) -> int:
        return self.addr.shape[0]


class EncoderLayer(nn.Module):
    """Pre-norm Transformer encoder layer."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int):
        super().__init__()
        self.n_heads = n_heads
        self.ln1 = nn.LayerNorm(d_model)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        self.ln2 = nn.LayerNorm(d_model)
        self.ff1 = nn.Linear(d_model, d_ff)
        self.ff2 = nn.Linear(d_ff, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        hd = d // self.n_heads
        q, k, v = self.qkv(self.ln1(x)).split(d, dim=-1)
        q = q.view(b, t, self.n_heads, hd).transpose(1, 2)
        k = k.view(b, t, self.n_heads, hd).transpose(1, 2)
        v = v.view(b, t, self.n_heads, hd).transpose(1, 2)
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(hd), dim=-1)
        out = (att @ v).transpose(1, 2).reshape(b, t, d)
        x = x + self.proj(out)
        return x + self.ff2(F.gelu(self.ff1(self.ln2(x))))


class TransformerBlock(nn.Module):
    """Embedded feature pair -> encoder stack -> last-position summary."""

    def __init__(self, cfg: PredictorConfig):
        super().__init__()
        self.pos = nn.Parameter(torch.zeros(cfg.window, cfg.d_model))
        self.layers = nn.ModuleList(EncoderLayer(cfg.d_model, cfg.n_heads, cfg.d_ff) for _ in range(cfg.n_layers))
        self.ln = nn.LayerNorm(cfg.d_model)
        self.clamp = cfg.clamp if cfg.quantize else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.pos
        for layer in self.layers:
            x = layer(x)
            if self.clamp is not None:
                x = x.clamp(-self.clamp, self.clamp)
        return self.ln(x[:, -1])


class PredictorModel(nn.Module):
    def __init__(self, cfg: PredictorConfig, n_classes: int = 0, generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.emb_addr = nn.Embedding(cfg.addr_buckets, d)
        self.emb_delta = nn.Embedding(cfg.delta_capacity, d)
        self.emb_pc = nn.Embedding(cfg.pc_buckets, d)
        self.emb_tb = nn.Embedding(cfg.tb_buckets, d)
        self.regular = TransformerBlock(cfg)
        self.irregular = TransformerBlock(cfg)
        self.w_regular = nn.Parameter(torch.ones(()))
        self.w_irregular = nn.Parameter(torch.ones(()))
        self.head_weight = nn.Parameter(torch.zeros(0, 2 * d))
        if cfg.head_bias:
            self.head_bias = nn.Parameter(torch.zeros(0))
        else:
            self.register_buffer("head_bias", torch.zeros(0))
        self._init_weights(generator)
        if n_classes:
            self.grow(n_classes, generator)

    def _init_weights(self, gen: torch.Generator | None) -> None:
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.startswith("head") or name.startswith("w_"):
                    continue
                if name.startswith("emb_") or name.endswith(".pos"):
                    p.copy_(torch.randn(p.shape, generator=gen) * 0.1)
                elif p.dim() >= 2:
                    bound = 1.0 / math.sqrt(p.shape[1])
                    p.copy_((torch.rand(p.shape, generator=gen) * 2 - 1) * bound)
                elif "ln" in name.split(".")[-2] and name.endswith("weight"):
                    p.fill_(1.0)
                else:
                    p.zero_()

    @property
    def n_classes(self) -> int:
        return self.head_weight.shape[0]

    @property
    def feature_dim(self) -> int:
        return 2 * self.cfg.d_model

    def grow(self, n_new: int, generator: torch.Generator | None = None) -> None:
        """Append ``n_new`` output classes (small zero-mean random rows)."""
        if n_new <= 0:
            return
        w = self.head_weight.data
        rows = torch.randn(n_new, w.shape[1], generator=generator, dtype=w.dtype) * self.cfg.new_class_std
        self.head_weight = nn.Parameter(torch.cat([w, rows.to(w.device)], 0))
        bias = torch.cat([self.head_bias.data, torch.zeros(n_new, dtype=w.dtype)], 0)
        if isinstance(self.head_bias, nn.Parameter):
            self.head_bias = nn.Parameter(bias)
        else:
            self.head_bias = bias

    def features(self, batch: WindowBatch) -> torch.Tensor:
        reg = self.regular(self.emb_addr(batch.addr) + self.emb_delta(batch.delta))
        irr = self.irregular(self.emb_pc(batch.pc) + self.emb_tb(batch.tb))
        return torch.cat([self.w_regular * reg, self.w_irregular * irr], dim=-1)

    def forward(self, batch: WindowBatch) -> tuple[torch.Tensor, torch.Tensor]:
        """Logits over the current classes and the pre-head feature vector."""
        if self.n_classes == 0:
            raise RuntimeError("predictor has no output classes yet (empty vocabulary)")
        feats = self.features(batch)
        logits = feats @ self.head_weight.t() + self.head_bias
        return logits, feats

    def probabilities(self, batch: WindowBatch) -> torch.Tensor:
        logits, _ = self(batch)
        return torch.softmax(logits, dim=-1)

    def clamp_parameters(self) -> None:
        lim = self.cfg.clamp
        with torch.no_grad():
            for p in self.parameters():
                p.clamp_(-lim, lim)


def forward(model: PredictorModel, batch: WindowBatch) -> torch.Tensor:
    return model.probabilities(batch)
