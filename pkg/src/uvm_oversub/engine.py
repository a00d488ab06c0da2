"""Prediction-driven prefetch and eviction.

Per-access predictions are counted in a small set-associative frequency
table. Eviction searches the page set chain oldest partition first and
picks the least-predicted page there; prefetching issues predicted pages
that are not yet resident.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from .memsim import ConfigError, DeviceMemoryState, Prefetcher, ThrashingLedger
from .pattern import PatternThresholds, PatternTracker
from .policies import Evictor, NoVictimError, PageSetChain, chain_advance, chain_select, lru_select
from .trace import GEOMETRY, PageGeometry, PatternLabel, Trace, page_delta_stream

log = logging.getLogger(__name__)

GOLDEN64 = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1


class PredictionFrequencyTable:
    """Set-associative table of per-page saturating prediction counters.

    One entry covers a basic block: a tag plus one counter per page.
    """

    def __init__(
        self,
        sets: int = 64,
        ways: int = 16,
        counter_bits: int = 6,
        tag_bits: int = 48,
        geometry: PageGeometry = GEOMETRY,
    ):
        if sets & (sets - 1) or sets < 1:
            raise ValueError("set count must be a power of two")
        self.sets = sets
        self.ways = ways
        self.counter_bits = counter_bits
        self.tag_bits = tag_bits
        self.geometry = geometry
        self.counter_max = (1 << counter_bits) - 1
        self.set_shift = 64 - sets.bit_length() + 1
        self._tags: list[list[int | None]] = [[None] * ways for _ in range(sets)]
        self._counters: list[list[list[int]]] = [[[0] * geometry.basic_block_pages for _ in range(ways)] for _ in range(sets)]
        self.flushes = 0
        self.replacements = 0

    @property
    def entries(self) -> int:
        return self.sets * self.ways

    def size_bits(self) -> int:
        return self.entries * (self.tag_bits + self.counter_bits * self.geometry.basic_block_pages)

    def size_bytes(self) -> int:
        return self.size_bits() // 8

    def set_index(self, block: int) -> int:
        if self.sets == 1:
            return 0
        return ((block * GOLDEN64) & MASK64) >> self.set_shift

    def _tag(self, block: int) -> int:
        return block & ((1 << self.tag_bits) - 1)

    def _find(self, block: int) -> tuple[int, int | None]:
        s = self.set_index(block)
        tag = self._tag(block)
        tags = self._tags[s]
        for way in range(self.ways):
            if tags[way] == tag:
                return s, way
        return s, None

    def _allocate(self, s: int, block: int) -> int:
        tags = self._tags[s]
        for way in range(self.ways):
            if tags[way] is None:
                break
        else:
            sums = [sum(c) for c in self._counters[s]]
            way = min(range(self.ways), key=lambda w: (sums[w], w))
            self.replacements += 1
        tags[way] = self._tag(block)
        self._counters[s][way] = [0] * self.geometry.basic_block_pages
        return way

    def record(self, page: int) -> int:
        """Count one prediction of ``page``; returns the new counter value."""
        block, off = divmod(page, self.geometry.basic_block_pages)
        s, way = self._find(block)
        if way is None:
            way = self._allocate(s, block)
        ctr = self._counters[s][way]
        if ctr[off] < self.counter_max:
            ctr[off] += 1
        return ctr[off]

    def record_many(self, pages) -> None:
        for p in pages:
            self.record(p)

    def frequency_of(self, page: int) -> int:
        """Stored counter when the page's block has an entry, else -1."""
        block, off = divmod(page, self.geometry.basic_block_pages)
        s, way = self._find(block)
        if way is None:
            return -1
        return self._counters[s][way][off]

    def flush(self) -> None:
        for s in range(self.sets):
            self._tags[s] = [None] * self.ways
            for way in range(self.ways):
                self._counters[s][way] = [0] * self.geometry.basic_block_pages
        self.flushes += 1

    def occupied(self) -> int:
        return sum(t is not None for tags in self._tags for t in tags)

    def counters(self):
        """All stored counter values (for invariant checks)."""
        for rows in self._counters:
            for row in rows:
                yield from row


# ---------------------------------------------------------------------------
# predictors the engine can consult


class PagePredictor(Protocol):
    training_events: int

    def bind(self, trace: Trace) -> None: ...

    def observe(self, position: int, label: PatternLabel, ledger: ThrashingLedger) -> bool: ...

    def predict(self, position: int, label: PatternLabel, k: int = 1) -> list[tuple[int, float]]: ...


class OraclePredictor:
    """Reports the true next delta with probability 1 (upper bound on prediction quality)."""

    lookahead_capable = True

    def __init__(self):
        self.training_events = 0
        self.deltas: list[int] = []

    def bind(self, trace: Trace) -> None:
        self.deltas = page_delta_stream(trace)

    def observe(self, position, label, ledger) -> bool:
        return False

    def predict(self, position: int, label, k: int = 1) -> list[tuple[int, float]]:
        if position + 1 >= len(self.deltas):
            return []
        return [(self.deltas[position + 1], 1.0)]

    def predict_ahead(self, position: int, steps: int) -> list[int]:
        """Cumulative deltas of the next ``steps`` accesses."""
        out, acc = [], 0
        for j in range(position + 1, min(position + 1 + steps, len(self.deltas))):
            acc += self.deltas[j]
            out.append(acc)
        return out


# ---------------------------------------------------------------------------


@dataclass
class EngineConfig:
    interval: int = 64
    flush_period: int = 3
    prefetch_budget: int | None = None  # None: every predicted page
    window: int = 10
    topk: int = 1
    lookahead: int = 1
    thresholds: PatternThresholds = field(default_factory=PatternThresholds)
    history_windows: int = 8
    count_prefetches: bool = True  # prefetch migrations advance the interval clock too

    def __post_init__(self):
        if self.interval < 1 or self.flush_period < 1:
            raise ConfigError("interval and flush period must be >= 1")
        if self.prefetch_budget is not None and self.prefetch_budget < 0:
            raise ConfigError("prefetch budget must be >= 0")
        if self.topk < 1 or self.lookahead < 1 or self.window < 1:
            raise ConfigError("topk, lookahead and window must be >= 1")


class PolicyEngine(Prefetcher, Evictor):
    """Evictor and (optionally) prefetcher driven by a page predictor."""

    name = "engine"

    def __init__(self, predictor: PagePredictor, config: EngineConfig | None = None, issue_prefetches: bool = True):
        self.cfg = config or EngineConfig()
        if self.cfg.lookahead > 1 and not getattr(predictor, "lookahead_capable", False):
            raise ConfigError("multi-step lookahead needs a predictor that can roll forward")
        self.predictor = predictor
        self.issue = issue_prefetches
        self.table = PredictionFrequencyTable()
        self.chain = PageSetChain(interval_length=self.cfg.interval)
        self.tracker = PatternTracker(
            window=1 << 62, history=self.cfg.history_windows, thresholds=self.cfg.thresholds
        )
        self.intervals = 0
        self.flush_intervals: list[int] = []
        self.pending: dict[int, int] = {}
        self.fallback_evictions = 0
        self.label_log: list[tuple[int, str]] = []
        self.ledger: ThrashingLedger | None = None
        self.state: DeviceMemoryState | None = None

    @property
    def label(self) -> PatternLabel:
        return self.tracker.label

    @property
    def training_events(self) -> int:
        return getattr(self.predictor, "training_events", 0)

    def bind(self, sim) -> None:
        super().bind(sim)
        self.ledger = sim.ledger
        self.state = sim.state
        self.predictor.bind(sim.trace)

    # -- memory events ---------------------------------------------------------
    def on_insert(self, page, prefetched):
        self.chain.insert(page)
        self.tracker.migrate(page // self.table.geometry.basic_block_pages)
        if self.cfg.count_prefetches or not prefetched:
            self._tick()

    def on_evict(self, page):
        self.chain.remove(page)

    def _tick(self) -> None:
        self.chain.fault_counter += 1
        if self.chain.fault_counter >= self.cfg.interval:
            self.on_interval_end()

    def on_kernel_boundary(self, position):
        self.tracker.kernel_boundary()

    def on_interval_end(self) -> None:
        chain_advance(self.chain)
        self.intervals += 1
        if self.intervals % self.cfg.flush_period == 0:
            self.table.flush()
            self.flush_intervals.append(self.intervals)
        self.pending.clear()
        self.tracker.close_window()
        self.label_log.append((self.intervals, self.tracker.label.name))

    # -- eviction ---------------------------------------------------------------
    def select(self, state, protected):
        victim = chain_select(self.chain, state, self.table.frequency_of, protected)
        if victim is not None:
            return victim
        # resident pages outside the chain (or all chain pages protected)
        self.fallback_evictions += 1
        log.debug("chain has no candidate; falling back to LRU")
        return lru_select(state, protected)

    def select_eviction(self, state: DeviceMemoryState, protected=frozenset()) -> int:
        return self.select(state, protected)

    # -- prediction and prefetch -----------------------------------------------------
    def record_predictions(self, pages: Sequence[int]) -> None:
        for p in pages:
            self.table.record(p)
            self.pending[p] = self.pending.get(p, 0) + 1

    def select_prefetches(self, candidates: Sequence[int] | None = None, budget: int | None = None) -> list[int]:
        """Predicted non-resident pages, highest frequency first, ties to lowest id."""
        st = self.state
        pool = self.pending if candidates is None else candidates
        pages = {p for p in pool if p not in st.resident and p not in st.pinned_host}
        ordered = sorted(pages, key=lambda p: (-self.table.frequency_of(p), p))
        budget = self.cfg.prefetch_budget if budget is None else budget
        return ordered if budget is None else ordered[:budget]

    def _predicted_pages(self, page: int, position: int) -> list[int]:
        if self.cfg.lookahead > 1:
            return [page + d for d in self.predictor.predict_ahead(position, self.cfg.lookahead)]
        preds = self.predictor.predict(position, self.label, self.cfg.topk)
        return [page + d for d, _ in preds]

    def after_access(self, access, position):
        self.predictor.observe(position, self.label, self.ledger)
        if position < self.cfg.window - 1:
            return [], 0
        pages = [p for p in self._predicted_pages(access.page, position) if p >= 0]
        self.record_predictions(pages)
        if not self.issue or not pages:
            return [], 1
        return self.select_prefetches(pages), 1

    def step(self, access, position) -> tuple[list[int], int]:
        return self.after_access(access, position)


__all__ = [
    "EngineConfig",
    "NoVictimError",
    "OraclePredictor",
    "PagePredictor",
    "PolicyEngine",
    "PredictionFrequencyTable",
]
