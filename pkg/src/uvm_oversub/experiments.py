"""Experiment grids over (trace, policy, oversubscription level) and predictor
accuracy evaluation under the online and offline training regimes."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import EngineConfig, OraclePredictor
from .memsim import ConfigError, PolicyPair, TimingConfig, Simulator, report_name, write_report
from .pattern import label_accesses
from .predictor.model import PredictorConfig, TraceFeatures
from .predictor.online import SINGLE, NeuralPredictor
from .predictor.train import Trainer
from .trace import (
    PatternLabel,
    Trace,
    capacity_for_oversubscription,
    concat_traces,
    load_trace,
    synthesize_trace,
    trace_from_pages,
)

log = logging.getLogger(__name__)

SUMMARY_METRICS = (
    "pages_thrashed",
    "unique_pages_thrashed",
    "far_faults",
    "prefetches_issued",
    "prefetch_useful",
    "evictions",
    "predictions",
    "total_cycles",
    "ipc_proxy",
)


class TraceTooShortError(ValueError):
    pass


# ---------------------------------------------------------------------------
# trace sources


def resolve_trace(spec: str) -> Trace:
    """``synth:<pattern>:<pages>:<accesses>:<seed>`` or a trace file path."""
    if spec.startswith("synth:"):
        parts = spec.split(":")
        if len(parts) != 5:
            raise ConfigError(f"synthetic trace spec needs 4 fields: {spec!r}")
        try:
            pattern = PatternLabel.parse(parts[1])
            pages, accesses, seed = (int(x) for x in parts[2:])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad synthetic trace spec {spec!r}: {exc}") from exc
        t = synthesize_trace(pattern, pages, accesses, seed)
        return replace(t, name=f"{pattern.name}-p{pages}-a{accesses}-s{seed}")
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"trace file not found: {spec}")
    return load_trace(path)


def parse_policy(text: str) -> tuple[str, str]:
    """``"tree+lru"`` -> ("tree+lru", "neural"); ``"engine+engine:oracle"`` picks the predictor."""
    label, _, kind = text.partition(":")
    kind = kind or "neural"
    if kind not in ("neural", "oracle"):
        raise ConfigError(f"unknown predictor kind {kind!r}")
    return label, kind


# ---------------------------------------------------------------------------
# grid


@dataclass
class ExperimentConfig:
    traces: list[str] = field(default_factory=lambda: ["synth:RandomReuse:512:4096:3"])
    levels: list[float] = field(default_factory=lambda: [1.25, 1.5])
    policies: list[str] = field(default_factory=lambda: ["tree+lru", "demand+lru", "demand+belady"])
    timing: TimingConfig = field(default_factory=TimingConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    group_size: int = 50_000
    pretrain_fraction: float = 0.0  # >0: offline pretraining on that share of the workload
    seed: int = 0
    baseline: str = "tree+lru"
    output_dir: str = "results"

    def build_policy(self, text: str, trace: Trace) -> PolicyPair:
        label, kind = parse_policy(text)
        if "engine" not in label:
            return PolicyPair.parse(label, seed=self.seed)
        if kind == "oracle":
            predictor = OraclePredictor()
        else:
            predictor = NeuralPredictor(replace(self.predictor, seed=self.seed), group_size=self.group_size)
            if self.pretrain_fraction > 0:
                predictor.pretrain(trace, fraction=self.pretrain_fraction, seed=self.seed)
        return PolicyPair.parse(label, seed=self.seed, predictor=predictor, engine_config=self.engine)

    def validate(self) -> list[Trace]:
        """Resolve every trace and policy name before anything runs."""
        traces = [resolve_trace(t) for t in self.traces]
        for text in self.policies:
            label, kind = parse_policy(text)
            pair = PolicyPair.parse(label, seed=self.seed, predictor=object())
            if kind == "oracle" and "engine" not in (pair.prefetch, pair.evict):
                raise ConfigError(f"{text!r}: a predictor only applies to engine policies")
        if not self.levels or any(level < 1.0 for level in self.levels):
            raise ConfigError("oversubscription levels must be >= 1.0")
        return traces


def cell_label(policy_text: str) -> str:
    return policy_text.replace(":", "-")


@dataclass
class GridResult:
    reports: list[Path]
    summary: Path
    failures: dict[str, str]
    table: dict[str, dict[str, dict[str, float]]]


def run_grid(cfg: ExperimentConfig) -> GridResult:
    traces = cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports: list[Path] = []
    failures: dict[str, str] = {}
    table: dict[str, dict[str, dict[str, float]]] = {}
    for trace in traces:
        for level in cfg.levels:
            cap = capacity_for_oversubscription(trace, level)
            key = f"{trace.name}@{level:g}"
            rows = table.setdefault(key, {})
            for text in cfg.policies:
                name = cell_label(text)
                try:
                    pair = cfg.build_policy(text, trace)
                    sim = Simulator(trace, cfg.timing, cap, pair)
                    metrics = sim.run()
                except Exception as exc:  # record and keep going
                    log.error("cell %s/%s failed: %s", key, name, exc)
                    failures[f"{key}/{name}"] = f"{type(exc).__name__}: {exc}"
                    continue
                extra = {}
                if hasattr(sim.evictor, "label_log"):
                    extra["pattern_decisions"] = sim.evictor.label_log
                reports.append(
                    write_report(
                        out / report_name(trace.name, name, level),
                        metrics,
                        trace_name=trace.name,
                        policy=name,
                        level=level,
                        capacity=cap,
                        config=cfg.timing,
                        extra=extra,
                    )
                )
                rows[name] = {m: getattr(metrics, m) for m in SUMMARY_METRICS}
            base = rows.get(cell_label(cfg.baseline))
            for row in rows.values():
                if base and base["ipc_proxy"]:
                    row["normalized_ipc"] = row["ipc_proxy"] / base["ipc_proxy"]
    summary = out / "summary.json"
    summary.write_text(json.dumps({"cells": table, "failures": failures}, indent=2, sort_keys=True) + "\n")
    (out / "summary.csv").write_text(summary_csv(table))
    return GridResult(reports, summary, failures, table)


def summary_csv(table: dict[str, dict[str, dict[str, float]]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = [*SUMMARY_METRICS, "normalized_ipc"]
    w.writerow(["trace", "policy", *cols])
    for key in sorted(table):
        for policy in sorted(table[key]):
            row = table[key][policy]
            w.writerow([key, policy, *(row.get(c, "") for c in cols)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# predictor evaluation


@dataclass
class AccuracyReport:
    mode: str
    scheme: str
    group_accuracy: list[float]
    overall: float
    samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def _labels_for(trace: Trace, scheme: str, window: int = 64) -> np.ndarray:
    if scheme == "single":
        return np.full(len(trace), int(SINGLE), dtype=np.int64)
    return np.asarray([int(x) for x in label_accesses(trace, window)], dtype=np.int64)


def _predict_correct(trainers: dict[int, Trainer], feats: TraceFeatures, positions: np.ndarray, labels: np.ndarray) -> np.ndarray:
    correct = np.zeros(positions.size, dtype=bool)
    for key in sorted(set(labels[positions].tolist())):
        mask = labels[positions] == key
        trainer = trainers.get(key)
        if trainer is None or trainer.model.n_classes == 0:
            continue
        sel = positions[mask]
        correct[mask] = trainer.predict_deltas(feats, sel) == feats.targets(sel)
    return correct


def eval_predictor(
    trace: Trace,
    mode: str = "online",
    scheme: str = "single",
    cfg: PredictorConfig | None = None,
    *,
    group_size: int = 50_000,
    epochs: int | None = None,
    ledger_pages=frozenset(),
    train_fraction: float = 0.5,
    seed: int = 0,
    label_window: int = 64,
) -> AccuracyReport:
    """Top-1 delta accuracy per group and overall.

    online: each group is predicted by the models trained on all earlier
    groups, then trained on. offline: a seeded random half of the samples is
    trained on first, then the whole trace is predicted in order.
    """
    if mode not in ("online", "offline"):
        raise ValueError(f"unknown mode {mode!r}")
    if scheme not in ("single", "pattern_aware"):
        raise ValueError(f"unknown scheme {scheme!r}")
    cfg = replace(cfg or PredictorConfig(), seed=seed)
    feats = TraceFeatures.from_trace(trace, cfg.window)
    positions = feats.sample_positions()
    if positions.size < 2 * group_size:
        raise TraceTooShortError(f"need >= 2 groups of {group_size} samples, have {positions.size}")
    labels = _labels_for(trace, scheme, label_window)
    trainers: dict[int, Trainer] = {}

    def trainer(key: int) -> Trainer:
        if key not in trainers:
            trainers[key] = Trainer(cfg, seed=seed + key)
        return trainers[key]

    def train(sel: np.ndarray) -> None:
        for key in sorted(set(labels[sel].tolist())):
            trainer(key).train_group(feats, sel[labels[sel] == key], ledger_pages, epochs)

    groups = [positions[i:i + group_size] for i in range(0, positions.size, group_size)]
    if groups[-1].size < group_size // 2 and len(groups) > 2:
        groups[-2] = np.concatenate([groups[-2], groups.pop()])
    accs: list[float] = []
    hits = total = 0
    if mode == "online":
        train(groups[0])
        for g in groups[1:]:
            ok = _predict_correct(trainers, feats, g, labels)
            accs.append(float(ok.mean()))
            hits += int(ok.sum())
            total += ok.size
            train(g)
    else:
        rng = np.random.default_rng(seed)
        train(positions[rng.random(positions.size) < train_fraction])
        for g in groups[1:]:
            ok = _predict_correct(trainers, feats, g, labels)
            accs.append(float(ok.mean()))
            hits += int(ok.sum())
            total += ok.size
    return AccuracyReport(mode, scheme, accs, hits / total if total else 0.0, total)


# ---------------------------------------------------------------------------
# synthetic streams for the learning experiments

PHASE_A_MOTIF = (1, 1, 2)
PHASE_B_MOTIF = (1, 2, -3, 5, 1, 5)


def motif_pages(motif: Sequence[int], length: int, start: int = 0) -> list[int]:
    pages, p = [], start
    for i in range(length):
        pages.append(p)
        p += motif[i % len(motif)]
    return pages


def two_phase_trace(phase_a: int = 1536, phase_b: int = 1536, seed: int = 0) -> tuple[Trace, int]:
    """Phase A steps by deltas {+1,+2}; phase B adds {-3,+5}. Returns the trace and phase B's start index."""
    rng = np.random.default_rng(seed)
    start = int(rng.integers(0, 64))
    a = motif_pages(PHASE_A_MOTIF, phase_a, start)
    b = motif_pages(PHASE_B_MOTIF, phase_b, a[-1] + 1)
    return trace_from_pages(a + b, name=f"two-phase-s{seed}"), phase_a


def mixed_pattern_trace(
    patterns: Sequence[PatternLabel] = (PatternLabel.LinearStreaming, PatternLabel.RandomReuse),
    segments: int = 6,
    segment_accesses: int = 1024,
    pages: int = 256,
    seed: int = 0,
    stream_scale: int = 4,
    shared_range: bool = False,
) -> Trace:
    """Alternate segments of different generators over disjoint page ranges.

    Streaming segments walk fresh pages, one access each, and run
    ``stream_scale`` times longer: they migrate a block only every 16
    accesses, and the classifier needs a few windows to settle. Other
    generators revisit the same ``pages``-sized range each time they recur.
    """
    parts = []
    fresh = 0
    stream_len = segment_accesses * stream_scale
    span = max(pages, stream_len) * 4
    for i in range(segments):
        pat = PatternLabel(patterns[i % len(patterns)])
        if pat is PatternLabel.LinearStreaming:
            base = (len(patterns) + fresh) * span
            fresh += 1
            t = synthesize_trace(pat, stream_len, stream_len, seed * 1000 + i, base_page=base)
        else:
            base = 0 if shared_range else (i % len(patterns)) * span
            t = synthesize_trace(pat, pages, segment_accesses, seed * 1000 + i % len(patterns), base_page=base)
        parts.append(t)
    return concat_traces(parts, name=f"mixed-s{seed}")


def hot_cold_trace(
    hot: int = 16,
    cold: int = 256,
    kernels: int = 6,
    hot_rate: float = 1.0,
    seed: int = 0,
) -> Trace:
    """Each kernel sweeps a cold region in order, touching a random page of a
    small hot set after cold accesses (at ``hot_rate``). Under oversubscription
    the cold sweep thrashes while the hot set stays resident."""
    rng = np.random.default_rng(seed)
    pages: list[int] = []
    starts: list[int] = []
    for _ in range(kernels):
        starts.append(len(pages))
        for c in range(cold):
            pages.append(hot + c)
            if rng.random() < hot_rate:
                pages.append(int(rng.integers(0, hot)))
    return trace_from_pages(pages, kernel_starts=starts, name=f"hot-cold-s{seed}")


# ---------------------------------------------------------------------------
# learning-effect experiments


def ledger_probability_mass(trainer: Trainer, feats: TraceFeatures, positions, ledger_pages) -> float:
    """Total probability the model assigns to next pages that are in the ledger."""
    positions = np.asarray(positions)
    probs = trainer.probabilities(feats, positions)
    pages = feats.pages[positions][:, None] + np.asarray(trainer.vocab.deltas)[None, :]
    hit = np.isin(pages, np.fromiter(ledger_pages, dtype=np.int64))
    return float((probs * hit).sum())


@dataclass
class ThrashTermResult:
    mu: float
    ledger_mass: float
    thrash_events: int


def thrash_term_effect(
    seed: int,
    mu: float,
    cfg: PredictorConfig | None = None,
    *,
    level: float = 1.25,
    group_size: int = 512,
    engine_epochs: int = 6,
) -> ThrashTermResult:
    """Train with thrashing weight ``mu`` on a hot/cold reuse trace.

    The ledger comes from a demand-paged LRU run, so it holds the thrashing
    cold pages but not the resident hot set. The mass is measured on a model
    trained on every sample; the thrash count comes from a pretrained engine
    run that keeps learning online.
    """
    cfg = cfg or PredictorConfig(d_model=32, d_ff=64, epochs=3)
    trace = hot_cold_trace(seed=seed)
    cap = capacity_for_oversubscription(trace, level)
    sim = Simulator(trace, TimingConfig(), cap, PolicyPair.parse("demand+lru"))
    sim.run()
    ledger = sim.ledger.pages()
    feats = TraceFeatures.from_trace(trace, cfg.window)
    positions = feats.sample_positions()
    trainer = Trainer(replace(cfg, mu=mu, seed=seed))
    trainer.train_group(feats, positions, ledger)
    mass = ledger_probability_mass(trainer, feats, positions, ledger)

    pred = NeuralPredictor(replace(cfg, mu=mu, seed=seed, epochs=engine_epochs), group_size=group_size)
    pred.pretrain(trace, fraction=0.5, seed=seed)
    metrics = Simulator(trace, TimingConfig(), cap, PolicyPair.parse("engine+engine", predictor=pred)).run()
    return ThrashTermResult(mu, mass, metrics.pages_thrashed)


@dataclass
class RetentionResult:
    lambda_base: float
    phase_a: float
    phase_b: float


def incremental_retention(
    seed: int,
    lambda_base: float,
    cfg: PredictorConfig | None = None,
    *,
    epochs_a: int = 3,
    epochs_b: int = 1,
) -> RetentionResult:
    """Train on phase A, then on phase B (new delta classes); report top-1 on both."""
    cfg = replace(cfg or PredictorConfig(lr=0.01, momentum=0.9), lambda_base=lambda_base, seed=seed)
    trace, b0 = two_phase_trace(seed=seed)
    feats = TraceFeatures.from_trace(trace, cfg.window)
    pos = feats.sample_positions()
    a = pos[pos < b0 - 1]
    b = pos[pos >= b0 + cfg.window - 1]  # windows entirely inside phase B
    tr = Trainer(cfg)
    tr.train_group(feats, a, epochs=epochs_a)
    tr.train_group(feats, b, epochs=epochs_b)
    return RetentionResult(lambda_base, tr.accuracy(feats, a), tr.accuracy(feats, b))
