"""Training objective: cross-entropy, feature-orientation distillation, and the
thrashing penalty.

    L = mean_N(CE + lam * (1 - cos(f_new, f_old))) + mu / |S| * sum_S log p_target

where S is the subset of the batch whose target page has already been
evicted or thrashed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.0
    mu: float = 0.5

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must lie in (0, 1], or 0 to disable the thrashing term")


def loss_ce(probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-sample -log p_target from probability vectors."""
    return -torch.log(probs.gather(-1, target.unsqueeze(-1)).squeeze(-1))


def ce_from_logits(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return -F.log_softmax(logits, dim=-1).gather(-1, target.unsqueeze(-1)).squeeze(-1)


def loss_thrash(log_p_target: torch.Tensor, in_ledger: torch.Tensor) -> torch.Tensor:
    """Per-sample +log p_target for samples whose target page is in E or T, else 0."""
    return torch.where(in_ledger, log_p_target, torch.zeros_like(log_p_target))


def loss_lucir(features_new: torch.Tensor, features_old: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Per-sample 1 - cosine similarity; a zero-norm vector contributes 0."""
    n_new = features_new.norm(dim=-1)
    n_old = features_old.norm(dim=-1)
    degenerate = (n_new <= eps) | (n_old <= eps)
    if bool(degenerate.any()):
        log.warning("zero-norm feature vector in distillation term; treated as 0")
    denom = torch.where(degenerate, torch.ones_like(n_new), n_new * n_old)
    cos = (features_new * features_old).sum(-1) / denom
    return torch.where(degenerate, torch.zeros_like(cos), 1.0 - cos)


def total_loss(
    logits: torch.Tensor,
    target: torch.Tensor,
    in_ledger: torch.Tensor,
    cfg: LossConfig,
    features_new: torch.Tensor | None = None,
    features_old: torch.Tensor | None = None,
) -> torch.Tensor:
    log_p = F.log_softmax(logits, dim=-1).gather(-1, target.unsqueeze(-1)).squeeze(-1)
    per_sample = -log_p
    if cfg.lam > 0 and features_old is not None:
        per_sample = per_sample + cfg.lam * loss_lucir(features_new, features_old)
    loss = per_sample.mean()
    n_s = int(in_ledger.sum())
    if cfg.mu > 0 and n_s:
        loss = loss + cfg.mu / n_s * loss_thrash(log_p, in_ledger).sum()
    return loss


def lucir_lambda(lambda_base: float, k_old: int, k_new: int) -> float:
    """Distillation weight shrinking as the class count grows past the snapshot's."""
    if k_old <= 0 or k_new <= 0:
        return 0.0
    return lambda_base * (k_old / k_new) ** 0.5
