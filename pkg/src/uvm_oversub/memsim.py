"""Trace-driven device-memory simulator with fault, zero-copy and stall accounting."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Any, Iterable

from .policies import (
    ChunkTree,
    Evictor,
    NoVictimError,
    PolicyComponent,
    make_evictor,
    tree_prefetch,
)
from .trace import GEOMETRY, MemoryAccess, PageGeometry, Trace

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid simulator or policy configuration."""


@dataclass(frozen=True)
class TimingConfig:
    core_mhz: float = 1481.0
    page_walk_cycles: int = 100
    interconnect_cycles: int = 100
    dram_cycles: int = 100
    zero_copy_cycles: int = 200
    far_fault_us: float = 45.0
    prediction_overhead_us: float = 1.0
    training_overhead_us: float = 0.0

    def __post_init__(self):
        for name in ("core_mhz", "page_walk_cycles", "interconnect_cycles", "dram_cycles",
                     "zero_copy_cycles", "far_fault_us"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.prediction_overhead_us < 0 or self.training_overhead_us < 0:
            raise ConfigError("overheads must be non-negative")

    def us_to_cycles(self, us: float) -> int:
        return round(us * self.core_mhz)

    @property
    def far_fault_cycles(self) -> int:
        return self.us_to_cycles(self.far_fault_us)

    @property
    def hit_cycles(self) -> int:
        return self.page_walk_cycles + self.dram_cycles

    @property
    def prediction_overhead_cycles(self) -> int:
        return self.us_to_cycles(self.prediction_overhead_us)


@dataclass
class ThrashingLedger:
    evicted: set[int] = field(default_factory=set)
    thrashed: set[int] = field(default_factory=set)
    thrash_events: int = 0
    migrations_in: int = 0
    migrations_out: int = 0

    def record_in(self, page: int) -> bool:
        self.migrations_in += 1
        if page in self.evicted:
            self.thrash_events += 1
            self.thrashed.add(page)
            return True
        return False

    def record_out(self, page: int) -> None:
        self.migrations_out += 1
        self.evicted.add(page)

    def pages(self) -> set[int]:
        """E union T."""
        return self.evicted | self.thrashed


def thrash_count(ledger: ThrashingLedger) -> int:
    return ledger.thrash_events


@dataclass
class DeviceMemoryState:
    capacity_pages: int
    resident: set[int] = field(default_factory=set)
    last_access: dict[int, int] = field(default_factory=dict)
    pinned_host: frozenset[int] = frozenset()
    soft_pinned: frozenset[int] = frozenset()
    read_counts: dict[int, int] = field(default_factory=dict)
    dirty: set[int] = field(default_factory=set)
    chunk_trees: dict[int, ChunkTree] = field(default_factory=dict)
    geometry: PageGeometry = GEOMETRY
    allocation_end: int | None = None

    def __post_init__(self):
        if self.capacity_pages < 1:
            raise ConfigError("capacity_pages must be >= 1")

    def tree_for(self, page: int) -> ChunkTree:
        g = self.geometry
        cid = g.chunk_of(page)
        tree = self.chunk_trees.get(cid)
        if tree is None:
            base = cid * g.chunk_pages
            real = g.chunk_pages
            if self.allocation_end is not None and base < self.allocation_end < base + g.chunk_pages:
                real = self.allocation_end - base
            n_blocks = -(-real // g.basic_block_pages)
            tree = ChunkTree(cid, n_blocks, g, base, real)
            self.chunk_trees[cid] = tree
        return tree

    def check_invariants(self) -> None:
        assert len(self.resident) <= self.capacity_pages, "residency exceeds capacity"
        assert not (self.resident & self.pinned_host), "hard-pinned page resident"


@dataclass
class SimMetrics:
    pages_thrashed: int = 0
    unique_pages_thrashed: int = 0
    stall_cycles: int = 0
    base_cycles: int = 0
    total_cycles: int = 0
    ipc_proxy: float = 0.0
    instructions: int = 0
    accesses: int = 0
    hits: int = 0
    far_faults: int = 0
    zero_copy_accesses: int = 0
    prefetches_issued: int = 0
    prefetch_useful: int = 0
    evictions: int = 0
    migrations_in: int = 0
    migrations_out: int = 0
    predictions: int = 0
    training_events: int = 0
    transfer_cycles: int = 0
    writeback_cycles: int = 0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class AccessOutcome:
    kind: str  # "hit" | "zero_copy" | "fault"
    cost: int
    thrash: bool = False


# ---------------------------------------------------------------------------
# prefetchers


class Prefetcher(PolicyComponent):
    name = "none"

    def after_access(self, access: MemoryAccess, position: int) -> tuple[list[int], int]:
        """Prefetch pages and number of predictions issued for this access."""
        return [], 0

    def after_batch(self, faulting_pages: list[int]) -> list[int]:
        return []


class TreePrefetcher(Prefetcher):
    name = "tree"

    def after_batch(self, faulting_pages):
        state = self.sim.state
        by_chunk: dict[int, list[int]] = {}
        for p in faulting_pages:
            by_chunk.setdefault(state.geometry.chunk_of(p), []).append(p)
        out: list[int] = []
        for cid in sorted(by_chunk):
            pages = by_chunk[cid]
            tree = state.tree_for(pages[0])
            cand = tree_prefetch(tree, pages)
            out.extend(sorted(p for p in cand if p not in state.resident and p not in state.pinned_host))
        return out


@dataclass(frozen=True)
class PolicyPair:
    """Prefetcher/evictor names; the engine needs a predictor object."""

    prefetch: str = "none"
    evict: str = "lru"
    seed: int = 0
    predictor: Any = None
    engine_config: Any = None

    PREFETCHERS = ("none", "tree", "engine")
    EVICTORS = ("lru", "random", "belady", "chain", "tree", "engine")

    def __post_init__(self):
        if self.prefetch not in self.PREFETCHERS:
            raise ConfigError(f"unknown prefetcher {self.prefetch!r}")
        if self.evict not in self.EVICTORS:
            raise ConfigError(f"unknown evictor {self.evict!r}")
        if self.evict == "belady" and self.prefetch != "none":
            raise ConfigError("belady is an oracle for demand loading only; use --prefetch none")
        if "engine" in (self.prefetch, self.evict) and self.predictor is None:
            raise ConfigError("the policy engine needs a predictor")

    @property
    def label(self) -> str:
        pre = {"none": "demand", "tree": "tree", "engine": "engine"}[self.prefetch]
        return f"{pre}+{self.evict}"

    @classmethod
    def parse(cls, text: str, **kw) -> "PolicyPair":
        """Parse ``"tree+lru"`` / ``"demand+belady"`` style names."""
        pre, _, ev = text.partition("+")
        pre = {"demand": "none", "d": "none"}.get(pre, pre)
        return cls(pre, ev or "lru", **kw)

    def build(self) -> tuple[Prefetcher, Evictor]:
        engine = None
        if "engine" in (self.prefetch, self.evict):
            from .engine import EngineConfig, PolicyEngine

            cfg = self.engine_config or EngineConfig()
            engine = PolicyEngine(self.predictor, cfg, issue_prefetches=self.prefetch == "engine")
        if self.prefetch == "tree":
            prefetcher: Prefetcher = TreePrefetcher()
        elif self.prefetch == "engine":
            prefetcher = engine
        else:
            prefetcher = engine if engine is not None else Prefetcher()
        interval = getattr(self.engine_config, "interval", 64)
        evictor = engine if self.evict == "engine" else make_evictor(self.evict, self.seed, interval)
        return prefetcher, evictor


# ---------------------------------------------------------------------------
# simulator


class Simulator:
    def __init__(
        self,
        trace: Trace,
        config: TimingConfig,
        capacity: int,
        policy: PolicyPair,
        *,
        hard_pinned: Iterable[int] = (),
        soft_pinned: Iterable[int] = (),
        soft_pin_threshold: int = 3,
        writeback: bool = False,
        check_invariants: bool = False,
        geometry: PageGeometry = GEOMETRY,
    ):
        if capacity < 1:
            raise ConfigError("capacity must be >= 1 page")
        self.trace = trace
        self.config = config
        self.policy = policy
        self.state = DeviceMemoryState(
            capacity,
            pinned_host=frozenset(hard_pinned),
            soft_pinned=frozenset(soft_pinned),
            geometry=geometry,
            allocation_end=max(trace.pages) + 1,
        )
        self.soft_pin_threshold = soft_pin_threshold
        self.writeback = writeback
        self.check = check_invariants
        self.ledger = ThrashingLedger()
        self.metrics = SimMetrics()
        self.prefetcher, self.evictor = policy.build()
        self.components = [self.prefetcher] if self.prefetcher is self.evictor else [self.prefetcher, self.evictor]
        for c in self.components:
            c.bind(self)
        self.page_lo = min(trace.pages)
        self.clock = 0
        self.protected: set[int] = set()
        self.unused_prefetched: set[int] = set()
        self.position = 0

    # -- page movement -----------------------------------------------------
    def _evict(self, page: int) -> None:
        st = self.state
        st.resident.discard(page)
        st.tree_for(page).mark_invalid(page)
        self.ledger.record_out(page)
        self.metrics.evictions += 1
        self.unused_prefetched.discard(page)
        if page in st.dirty:
            st.dirty.discard(page)
            if self.writeback:
                self.metrics.writeback_cycles += self.config.interconnect_cycles
                self.metrics.stall_cycles += self.config.interconnect_cycles
        for c in self.components:
            c.on_evict(page)

    def _make_room(self) -> bool:
        st = self.state
        while len(st.resident) >= st.capacity_pages:
            try:
                victim = self.evictor.select(st, self.protected)
            except NoVictimError:
                return False
            extra = self.evictor.extra_evictions(st, victim)
            self._evict(victim)
            for p in sorted(extra):
                if p != victim and p in st.resident and p not in self.protected:
                    self._evict(p)
        return True

    def _migrate_in(self, page: int, prefetched: bool) -> bool:
        st = self.state
        if not self._make_room():
            return False
        st.resident.add(page)
        st.tree_for(page).mark_valid(page)
        thrash = self.ledger.record_in(page)
        self.clock += 1
        st.last_access[page] = self.clock
        for c in self.components:
            c.on_insert(page, prefetched)
        if self.check:
            st.check_invariants()
        return thrash

    def issue_prefetches(self, pages: Iterable[int]) -> None:
        st = self.state
        for page in pages:
            if page in st.resident or page in st.pinned_host:
                continue
            if not self.page_lo <= page < st.allocation_end:
                continue
            if not self._make_room():
                break
            self._migrate_in(page, prefetched=True)
            self.protected.add(page)
            self.unused_prefetched.add(page)
            self.metrics.prefetches_issued += 1
            self.metrics.transfer_cycles += self.config.interconnect_cycles

    # -- one access ----------------------------------------------------------
    def access_page(self, access: MemoryAccess, position: int) -> AccessOutcome:
        st = self.state
        cfg = self.config
        page = access.page
        m = self.metrics
        m.accesses += 1
        if page in st.resident:
            outcome = AccessOutcome("hit", cfg.hit_cycles)
            m.hits += 1
            if page in self.unused_prefetched:
                self.unused_prefetched.discard(page)
                m.prefetch_useful += 1
        elif page in st.pinned_host:
            outcome = AccessOutcome("zero_copy", cfg.zero_copy_cycles)
        elif page in st.soft_pinned and st.read_counts.get(page, 0) < self.soft_pin_threshold:
            st.read_counts[page] = st.read_counts.get(page, 0) + 1
            outcome = AccessOutcome("zero_copy", cfg.zero_copy_cycles)
        else:
            m.far_faults += 1
            self.protected.add(page)
            if page not in st.resident and not self._make_room():
                # same-cycle batch larger than capacity: drop batch protection
                self.protected = {page}
            thrash = self._migrate_in(page, prefetched=False)
            for c in self.components:
                c.on_fault(page)
            outcome = AccessOutcome("fault", cfg.far_fault_cycles, thrash)

        if outcome.kind == "zero_copy":
            m.zero_copy_accesses += 1
            m.base_cycles += outcome.cost
        elif outcome.kind == "hit":
            m.base_cycles += outcome.cost
        else:
            m.stall_cycles += outcome.cost
        if page in st.resident:
            self.clock += 1
            st.last_access[page] = self.clock
            if access.is_write:
                st.dirty.add(page)
            self.protected.add(page)
            for c in self.components:
                c.on_access(page, position)
        return outcome

    def run(self) -> SimMetrics:
        m = self.metrics
        cfg = self.config
        pred_cycles = cfg.prediction_overhead_cycles
        boundaries = {k for k in self.trace.kernel_starts if k > 0}
        indexed = enumerate(self.trace.accesses)
        for _, batch in groupby(indexed, key=lambda ia: ia[1].cycle):
            self.protected = set()
            faulted: list[int] = []
            for position, access in batch:
                self.position = position
                if position in boundaries:
                    for c in self.components:
                        c.on_kernel_boundary(position)
                outcome = self.access_page(access, position)
                if outcome.kind == "fault":
                    faulted.append(access.page)
                pages, n_pred = self.prefetcher.after_access(access, position)
                if n_pred:
                    m.predictions += n_pred
                    m.stall_cycles += n_pred * pred_cycles
                if pages:
                    self.issue_prefetches(pages)
            if faulted:
                self.issue_prefetches(self.prefetcher.after_batch(faulted))
            if self.check:
                self.state.check_invariants()
                for tree in self.state.chunk_trees.values():
                    tree.check_invariants()
        training = getattr(self.prefetcher, "training_events", 0) or getattr(self.evictor, "training_events", 0)
        m.training_events = training
        m.stall_cycles += training * cfg.us_to_cycles(cfg.training_overhead_us)
        m.pages_thrashed = self.ledger.thrash_events
        m.unique_pages_thrashed = len(self.ledger.thrashed)
        m.migrations_in = self.ledger.migrations_in
        m.migrations_out = self.ledger.migrations_out
        m.instructions = self.trace.instruction_count
        m.total_cycles = m.base_cycles + m.stall_cycles
        m.ipc_proxy = m.instructions / m.total_cycles if m.total_cycles else 0.0
        return m


def run_simulation(
    trace: Trace,
    config: TimingConfig,
    capacity: int,
    policy: PolicyPair,
    **kwargs,
) -> SimMetrics:
    return Simulator(trace, config, capacity, policy, **kwargs).run()


def simulate_with_ledger(trace, config, capacity, policy, **kwargs) -> tuple[SimMetrics, ThrashingLedger]:
    sim = Simulator(trace, config, capacity, policy, **kwargs)
    metrics = sim.run()
    return metrics, sim.ledger


# ---------------------------------------------------------------------------
# reports


def report_name(trace_name: str, policy_label: str, level: float) -> str:
    return f"{trace_name}_{policy_label}_{level:g}.json"


def write_report(
    path: str | Path,
    metrics: SimMetrics,
    *,
    trace_name: str,
    policy: str,
    level: float,
    capacity: int,
    config: TimingConfig,
    extra: dict | None = None,
) -> Path:
    path = Path(path)
    doc = {
        "trace": trace_name,
        "policy": policy,
        "oversubscription": level,
        "capacity_pages": capacity,
        "timing": asdict(config),
        "metrics": metrics.to_dict(),
    }
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
