"""Pattern-aware neural predictor driven from inside a simulation.

Models change only at group boundaries, so predictions are computed in
batches per (label, group, chunk) and cached until the next training step.
"""

from __future__ import annotations

import logging

import numpy as np

from ..pattern import ModelTable, label_accesses
from ..trace import PatternLabel, Trace
from .model import PredictorConfig, TraceFeatures
from .train import Trainer

log = logging.getLogger(__name__)

SINGLE = PatternLabel.LinearStreaming  # table key used by the single-model scheme


class NeuralPredictor:
    def __init__(
        self,
        cfg: PredictorConfig | None = None,
        *,
        scheme: str = "pattern_aware",
        group_size: int = 50_000,
        online: bool = True,
        epochs: int | None = None,
        chunk: int = 256,
    ):
        if scheme not in ("single", "pattern_aware"):
            raise ValueError(f"unknown scheme {scheme!r}")
        self.cfg = cfg or PredictorConfig()
        self.scheme = scheme
        self.group_size = group_size
        self.online = online
        self.epochs = epochs
        self.chunk = chunk
        self.table: ModelTable[Trainer] = ModelTable(lambda label: Trainer(self.cfg, seed=self.cfg.seed + int(label)))
        self.training_events = 0
        self.feats: TraceFeatures | None = None
        self.labels: np.ndarray | None = None
        self._cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    def _key(self, label) -> PatternLabel:
        return SINGLE if self.scheme == "single" else PatternLabel(label)

    def trainer_for(self, label) -> Trainer:
        return self.table.model_for(self._key(label))

    # -- offline preparation ------------------------------------------------------
    def pretrain(
        self,
        trace: Trace,
        epochs: int | None = None,
        ledger_pages=frozenset(),
        window: int = 64,
        fraction: float = 1.0,
        seed: int = 0,
    ) -> None:
        """Train before a run, labelled by the same classifier.

        ``fraction < 1`` trains on a seeded random subset of the samples.
        """
        feats = TraceFeatures.from_trace(trace, self.cfg.window)
        positions = feats.sample_positions()
        if fraction < 1.0:
            rng = np.random.default_rng(seed)
            keep = rng.random(positions.size) < fraction
            positions = positions[keep]
        labels = np.asarray([int(self._key(x)) for x in label_accesses(trace, window)])
        self._train_positions(feats, positions, labels, ledger_pages, epochs)

    def _train_positions(self, feats, positions, labels, ledger_pages, epochs) -> None:
        for key in sorted(set(labels[positions].tolist())):
            sel = positions[labels[positions] == key]
            self.table.model_for(PatternLabel(key)).train_group(feats, sel, ledger_pages, epochs)
        self.training_events += 1
        self._cache.clear()

    # -- simulation interface -------------------------------------------------------
    def bind(self, trace: Trace) -> None:
        self.feats = TraceFeatures.from_trace(trace, self.cfg.window)
        self.labels = np.zeros(len(trace), dtype=np.int64)
        self._cache.clear()

    def observe(self, position: int, label, ledger) -> bool:
        """Note the label in force at ``position``; train when a group completes."""
        self.labels[position] = int(self._key(label))
        n = len(self.feats)
        if not self.online or ((position + 1) % self.group_size and position != n - 1):
            return False
        start = position + 1 - ((position % self.group_size) + 1)
        lo = max(start, self.cfg.window - 1)
        hi = min(position, n - 2)  # the last access has no target
        if hi < lo:
            return False
        ledger_pages = ledger.pages() if ledger is not None else frozenset()
        self._train_positions(self.feats, np.arange(lo, hi + 1), self.labels, ledger_pages, self.epochs)
        return True

    def predict(self, position: int, label, k: int = 1) -> list[tuple[int, float]]:
        if position + 1 >= len(self.feats):
            return []
        key = self._key(label)
        trainer = self.table.model_for(key)
        if trainer.model.n_classes == 0:
            return []
        group, offset = divmod(position, self.group_size)
        c = offset // self.chunk
        ck = (key, group, c, k)
        hit = self._cache.get(ck)
        if hit is None:
            lo = group * self.group_size + c * self.chunk
            hi = min(lo + self.chunk, (group + 1) * self.group_size, len(self.feats) - 1)
            lo = max(lo, self.cfg.window - 1)
            positions = np.arange(lo, hi)
            probs = trainer.probabilities(self.feats, positions)
            kk = min(k, probs.shape[1])
            order = np.argsort(-probs, axis=1, kind="stable")[:, :kk]
            deltas = np.asarray(trainer.vocab.deltas)[order]
            hit = (lo, deltas, np.take_along_axis(probs, order, 1))
            self._cache[ck] = hit
        lo, deltas, probs = hit
        i = position - lo
        return [(int(d), float(p)) for d, p in zip(deltas[i], probs[i])]
