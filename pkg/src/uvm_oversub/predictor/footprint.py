"""Memory footprint of the predictor: weights kept twice (current model and
distillation snapshot) plus training activations, once per access pattern."""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal

import torch

from .model import PredictorModel, WindowBatch

MB = 1 << 20


def footprint_total(params: float, activations: float, patterns: int) -> float:
    """(params x 2 + activations) x patterns, exact in decimal for the given inputs."""
    if patterns < 0:
        raise ValueError("pattern count must be >= 0")
    total = (Decimal(str(params)) * 2 + Decimal(str(activations))) * patterns
    return float(total)


@dataclass(frozen=True)
class FootprintReport:
    params_bytes: int
    activation_bytes: int
    patterns: int
    bits: int

    @property
    def total_bytes(self) -> int:
        return (self.params_bytes * 2 + self.activation_bytes) * self.patterns

    def as_mb(self) -> dict[str, float]:
        return {
            "params_mb": self.params_bytes / MB,
            "activations_mb": self.activation_bytes / MB,
            "total_mb": self.total_bytes / MB,
        }


def quantized_bytes(values: int, bits: int) -> int:
    """Bytes to hold ``values`` packed at ``bits`` each (rounded up to a byte)."""
    return math.ceil(values * bits / 8)


def parameter_count(model: torch.nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def activation_count(model: PredictorModel, batch_size: int) -> int:
    """Output elements of every leaf module for one forward pass at ``batch_size``."""
    cfg = model.cfg
    total = 0

    def hook(_module, _inp, out):
        nonlocal total
        for t in out if isinstance(out, tuple) else (out,):
            if isinstance(t, torch.Tensor):
                total += t.numel()

    handles = [m.register_forward_hook(hook) for m in model.modules() if not list(m.children())]
    shape = (batch_size, cfg.window)
    zeros = torch.zeros(shape, dtype=torch.int64)
    batch = WindowBatch(zeros, zeros, zeros, zeros)
    try:
        with torch.no_grad():
            if model.n_classes:
                model(batch)
            else:
                model.features(batch)
    finally:
        for h in handles:
            h.remove()
    return total


def footprint_report(model: PredictorModel, num_patterns: int, batch_size: int | None = None, bits: int | None = None) -> FootprintReport:
    """Footprint at the quantized width; activations are stored for forward and backward."""
    bits = model.cfg.quant_bits if bits is None else bits
    batch_size = model.cfg.batch_size if batch_size is None else batch_size
    params = quantized_bytes(parameter_count(model), bits)
    acts = quantized_bytes(2 * activation_count(model, batch_size), bits)
    return FootprintReport(params, acts, num_patterns, bits)
