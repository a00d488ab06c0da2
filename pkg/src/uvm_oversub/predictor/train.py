"""Incremental training and inference for one predictor model."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np
import torch

from .losses import LossConfig, lucir_lambda, total_loss
from .model import PredictorConfig, PredictorModel, TraceFeatures, WindowBatch, hash_bucket
from .vocab import DeltaVocabulary

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class StepMetrics:
    loss: float
    top1: float
    n_ledger: int
    lam: float
    classes: int


class MomentumSGD:
    """Plain SGD with momentum keyed by parameter name, tolerant of head growth."""

    def __init__(self, lr: float, momentum: float):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, torch.Tensor] = {}

    def step(self, model: torch.nn.Module) -> None:
        with torch.no_grad():
            for name, p in model.named_parameters():
                if p.grad is None:
                    continue
                v = self.velocity.get(name)
                if v is None or v.shape != p.shape:
                    grown = torch.zeros_like(p)
                    if v is not None:
                        grown[: v.shape[0]] = v
                    v = grown
                v.mul_(self.momentum).add_(p.grad)
                self.velocity[name] = v
                p.sub_(self.lr * v)


class Trainer:
    """Owns a model, its delta vocabulary, optimizer state and previous snapshot."""

    def __init__(self, cfg: PredictorConfig | None = None, seed: int | None = None):
        self.cfg = cfg or PredictorConfig()
        self.seed = self.cfg.seed if seed is None else seed
        self.gen = torch.Generator().manual_seed(self.seed)
        self.rng = np.random.default_rng(self.seed)
        self.model = PredictorModel(self.cfg, 0, self.gen)
        self.vocab = DeltaVocabulary()
        self.opt = MomentumSGD(self.cfg.lr, self.cfg.momentum)
        self.snapshot: PredictorModel | None = None
        self.steps = 0
        self.history: list[StepMetrics] = []

    # -- encoding ------------------------------------------------------------
    def encode(self, feats: TraceFeatures, positions) -> WindowBatch:
        cfg = self.cfg
        win = feats.window_index(positions)
        oov = cfg.delta_capacity - 1
        lookup = self.vocab.index
        flat_deltas = feats.deltas[win].ravel()
        delta_idx = np.fromiter(
            (min(lookup(d, oov), oov) for d in flat_deltas), dtype=np.int64, count=flat_deltas.size
        ).reshape(win.shape)
        return WindowBatch(
            addr=torch.from_numpy(feats.pages[win] % cfg.addr_buckets),
            delta=torch.from_numpy(delta_idx),
            pc=torch.from_numpy(hash_bucket(feats.pcs[win], cfg.pc_buckets)),
            tb=torch.from_numpy(feats.tbs[win] % cfg.tb_buckets),
        )

    def target_classes(self, deltas) -> torch.Tensor:
        return torch.tensor([self.vocab.index(d, -1) for d in deltas], dtype=torch.int64)

    def extend_vocab(self, deltas) -> int:
        added = self.vocab.extend(int(d) for d in deltas)
        if added:
            self.model.grow(added, self.gen)
        return added

    # -- training ------------------------------------------------------------
    def begin_group(self) -> None:
        """Freeze the current weights as the distillation reference."""
        if self.model.n_classes:
            self.snapshot = copy.deepcopy(self.model)
            for p in self.snapshot.parameters():
                p.requires_grad_(False)

    def train_batch(
        self,
        feats: TraceFeatures,
        positions,
        ledger_pages: set[int] | frozenset[int] = frozenset(),
        loss_cfg: LossConfig | None = None,
        *,
        lambda_base: float | None = None,
        mu: float | None = None,
    ) -> StepMetrics:
        """One gradient step; the vocabulary (and head) grows first.

        Without an explicit ``loss_cfg`` the distillation weight follows
        ``lucir_lambda`` against the snapshot's class count.
        """
        positions = np.asarray(positions)
        targets = feats.targets(positions)
        self.extend_vocab(targets)
        k_new = self.model.n_classes
        if loss_cfg is None:
            k_old = self.snapshot.n_classes if self.snapshot is not None else 0
            base = self.cfg.lambda_base if lambda_base is None else lambda_base
            loss_cfg = LossConfig(lucir_lambda(base, k_old, k_new), self.cfg.mu if mu is None else mu)
        batch = self.encode(feats, positions)
        y = self.target_classes(targets)
        tpages = feats.target_pages(positions)
        in_ledger = torch.tensor([int(p) in ledger_pages for p in tpages], dtype=torch.bool)

        self.model.train()
        self.model.zero_grad(set_to_none=True)
        logits, f_new = self.model(batch)
        f_old = None
        if loss_cfg.lam > 0 and self.snapshot is not None:
            with torch.no_grad():
                f_old = self.snapshot.features(batch)
        loss = total_loss(logits, y, in_ledger, loss_cfg, f_new, f_old)
        if not torch.isfinite(loss):
            raise TrainingError(
                f"non-finite loss at step {self.steps}: classes={k_new} lam={loss_cfg.lam} "
                f"mu={loss_cfg.mu} ledger_hits={int(in_ledger.sum())}"
            )
        loss.backward()
        if self.cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip)
        self.opt.step(self.model)
        if self.cfg.quantize:
            self.model.clamp_parameters()
        self.steps += 1
        top1 = float((logits.argmax(-1) == y).float().mean())
        m = StepMetrics(loss.item(), top1, int(in_ledger.sum()), loss_cfg.lam, k_new)
        self.history.append(m)
        return m

    def train_group(
        self,
        feats: TraceFeatures,
        positions,
        ledger_pages: set[int] | frozenset[int] = frozenset(),
        epochs: int | None = None,
        *,
        lambda_base: float | None = None,
        mu: float | None = None,
    ) -> list[StepMetrics]:
        """Snapshot, then ``epochs`` shuffled passes of minibatch steps over ``positions``."""
        positions = np.asarray(positions)
        if positions.size == 0:
            return []
        self.begin_group()
        epochs = self.cfg.epochs if epochs is None else epochs
        bs = self.cfg.batch_size
        out = []
        for _ in range(epochs):
            order = positions[self.rng.permutation(positions.size)]
            for start in range(0, order.size, bs):
                out.append(
                    self.train_batch(feats, order[start:start + bs], ledger_pages, lambda_base=lambda_base, mu=mu)
                )
        return out

    # -- inference -------------------------------------------------------------
    @torch.no_grad()
    def probabilities(self, feats: TraceFeatures, positions, chunk: int = 2048) -> np.ndarray:
        positions = np.asarray(positions)
        if self.model.n_classes == 0:
            raise RuntimeError("predictor has no output classes yet (empty vocabulary)")
        self.model.eval()
        parts = []
        for s in range(0, positions.size, chunk):
            batch = self.encode(feats, positions[s:s + chunk])
            parts.append(self.model.probabilities(batch).numpy())
        if not parts:
            return np.zeros((0, self.model.n_classes))
        return np.concatenate(parts, 0)

    def predict_deltas(self, feats: TraceFeatures, positions) -> np.ndarray:
        """Top-1 predicted delta per position."""
        probs = self.probabilities(feats, positions)
        deltas = np.asarray(self.vocab.deltas)
        return deltas[probs.argmax(-1)]

    def accuracy(self, feats: TraceFeatures, positions) -> float:
        positions = np.asarray(positions)
        if positions.size == 0 or self.model.n_classes == 0:
            return 0.0
        return float((self.predict_deltas(feats, positions) == feats.targets(positions)).mean())

    def topk(self, feats: TraceFeatures, position: int, k: int) -> list[tuple[int, float]]:
        return predict_topk(self, feats, position, k)


def topk_from_probs(probs: np.ndarray, vocab: DeltaVocabulary, k: int) -> list[tuple[int, float]]:
    order = np.argsort(-probs, kind="stable")[: max(0, min(k, probs.size))]
    return [(vocab.delta(int(i)), float(probs[i])) for i in order]


def predict_topk(trainer: Trainer, feats: TraceFeatures, position: int, k: int) -> list[tuple[int, float]]:
    """k most likely (delta, probability) pairs, descending, ties to the lower class index."""
    probs = trainer.probabilities(feats, [position])[0]
    return topk_from_probs(probs, trainer.vocab, k)
