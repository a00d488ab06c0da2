"""Rule-based prefetchers and eviction policies."""

from __future__ import annotations

import heapq
import random
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Iterable, Sequence

from .trace import GEOMETRY, PageGeometry

if TYPE_CHECKING:
    from .memsim import DeviceMemoryState

PREFETCH_THRESHOLD = 0.5
PREEVICT_THRESHOLD = 0.5


class NoVictimError(RuntimeError):
    """Every resident page is pinned or protected."""


# ---------------------------------------------------------------------------
# chunk occupancy trees


class ChunkTree:
    """Full binary occupancy tree over the basic blocks of one chunk.

    Nodes are stored heap-style (root at 1, leaves at ``n_leaves ..
    2*n_leaves-1``). Leaves past ``real_pages`` are phantom: they have zero
    capacity and can never become valid.
    """

    def __init__(
        self,
        chunk_id: int = 0,
        n_blocks: int | None = None,
        geometry: PageGeometry = GEOMETRY,
        base_page: int | None = None,
        real_pages: int | None = None,
    ):
        self.geometry = geometry
        self.chunk_id = chunk_id
        bp = geometry.basic_block_pages
        if n_blocks is None:
            n_blocks = geometry.chunk_basic_blocks
        if real_pages is None:
            real_pages = n_blocks * bp
        self.real_pages = real_pages
        n_leaves = 1
        while n_leaves < n_blocks:
            n_leaves *= 2
        self.n_leaves = n_leaves
        self.base_page = chunk_id * geometry.chunk_pages if base_page is None else base_page
        self.page_bytes = geometry.page_bytes
        self.valid: set[int] = set()  # page offsets within the chunk
        self.node_valid_bytes = [0] * (2 * n_leaves)
        self.node_capacity = [0] * (2 * n_leaves)
        for leaf in range(n_leaves):
            pages = max(0, min(bp, real_pages - leaf * bp))
            self.node_capacity[n_leaves + leaf] = pages * self.page_bytes
        for node in range(n_leaves - 1, 0, -1):
            self.node_capacity[node] = self.node_capacity[2 * node] + self.node_capacity[2 * node + 1]

    def copy(self) -> "ChunkTree":
        other = object.__new__(ChunkTree)
        other.__dict__.update(self.__dict__)
        other.valid = set(self.valid)
        other.node_valid_bytes = list(self.node_valid_bytes)
        return other

    # geometry helpers
    def _offset(self, page: int) -> int:
        off = page - self.base_page
        if not 0 <= off < self.real_pages:
            raise ValueError(f"page {page} outside chunk {self.chunk_id}")
        return off

    def leaf_node(self, offset: int) -> int:
        return self.n_leaves + offset // self.geometry.basic_block_pages

    def leaf_pages(self, node: int) -> range:
        """Page offsets covered by ``node``."""
        lo, hi = node, node
        while lo < self.n_leaves:
            lo, hi = 2 * lo, 2 * hi + 1
        bp = self.geometry.basic_block_pages
        start = (lo - self.n_leaves) * bp
        stop = min((hi - self.n_leaves + 1) * bp, self.real_pages)
        return range(start, max(start, stop))

    def contains(self, page: int) -> bool:
        return 0 <= page - self.base_page < self.real_pages

    def is_valid(self, page: int) -> bool:
        return (page - self.base_page) in self.valid

    # mutation
    def _update(self, offset: int, delta: int) -> None:
        node = self.leaf_node(offset)
        while node:
            self.node_valid_bytes[node] += delta
            node //= 2

    def mark_valid(self, page: int) -> bool:
        off = self._offset(page)
        if off in self.valid:
            return False
        self.valid.add(off)
        self._update(off, self.page_bytes)
        return True

    def mark_invalid(self, page: int) -> bool:
        off = self._offset(page)
        if off not in self.valid:
            return False
        self.valid.discard(off)
        self._update(off, -self.page_bytes)
        return True

    def occupancy(self, node: int) -> float:
        cap = self.node_capacity[node]
        return self.node_valid_bytes[node] / cap if cap else 0.0

    def ancestors(self, page: int) -> list[int]:
        node = self.leaf_node(self._offset(page)) // 2
        out = []
        while node:
            out.append(node)
            node //= 2
        return out

    def check_invariants(self) -> None:
        bp_bytes = self.geometry.basic_block_pages * self.page_bytes
        for node in range(1, self.n_leaves):
            assert self.node_valid_bytes[node] == (
                self.node_valid_bytes[2 * node] + self.node_valid_bytes[2 * node + 1]
            ), f"parent-sum violated at node {node}"
        for leaf in range(self.n_leaves, 2 * self.n_leaves):
            assert 0 <= self.node_valid_bytes[leaf] <= min(bp_bytes, self.node_capacity[leaf])
        assert self.node_valid_bytes[1] <= self.geometry.chunk_pages * self.page_bytes


def tree_prefetch(tree: ChunkTree, faulting_pages: Iterable[int], apply: bool = False) -> set[int]:
    """Pages newly scheduled by the neighborhood prefetcher.

    Each faulting page pulls in its whole basic block; then, bottom-up, every
    non-leaf node whose valid bytes strictly exceed half its capacity has its
    remaining invalid pages scheduled. The tree is only mutated with
    ``apply=True``.
    """
    work = tree if apply else tree.copy()
    added: set[int] = set()

    def fill(node: int) -> None:
        for off in work.leaf_pages(node):
            if off not in work.valid:
                work.mark_valid(work.base_page + off)
                added.add(work.base_page + off)

    for page in faulting_pages:
        fill(work.leaf_node(work._offset(page)))

    level_start = work.n_leaves // 2
    while level_start >= 1:
        for node in range(level_start, 2 * level_start):
            cap = work.node_capacity[node]
            if cap and work.node_valid_bytes[node] > PREFETCH_THRESHOLD * cap:
                if work.node_valid_bytes[node] < cap:
                    fill(node)
        level_start //= 2
    return added


def tree_preevict(tree: ChunkTree, around: int | None = None) -> set[int]:
    """Valid pages under non-leaf nodes whose occupancy is strictly below half.

    With ``around`` set, only the ancestors of that page are examined (the
    nodes an eviction of that page could have lowered).
    """
    if around is not None:
        nodes = tree.ancestors(around)
    else:
        nodes = range(1, tree.n_leaves)
    out: set[int] = set()
    for node in nodes:
        cap = tree.node_capacity[node]
        if cap and 0 < tree.node_valid_bytes[node] < PREEVICT_THRESHOLD * cap:
            out.update(tree.base_page + off for off in tree.leaf_pages(node) if off in tree.valid)
    return out


# ---------------------------------------------------------------------------
# victim selection as pure functions over device state


def _candidates(state: "DeviceMemoryState", protected: frozenset[int] | set[int] = frozenset()) -> list[int]:
    return [p for p in state.resident if p not in state.pinned_host and p not in protected]


def lru_select(state: "DeviceMemoryState", protected=frozenset()) -> int:
    cands = _candidates(state, protected)
    if not cands:
        raise NoVictimError("no evictable resident page")
    return min(cands, key=lambda p: (state.last_access.get(p, 0), p))


def random_select(state: "DeviceMemoryState", rng: random.Random, protected=frozenset()) -> int:
    cands = sorted(_candidates(state, protected))
    if not cands:
        raise NoVictimError("no evictable resident page")
    return cands[rng.randrange(len(cands))]


def belady_select(state: "DeviceMemoryState", future: Sequence[int], protected=frozenset()) -> int:
    """Resident page whose next use in ``future`` (page ids) is farthest away."""
    cands = _candidates(state, protected)
    if not cands:
        raise NoVictimError("no evictable resident page")
    first_use: dict[int, int] = {}
    for i, p in enumerate(future):
        first_use.setdefault(p, i)
    inf = len(future) + 1
    return min(cands, key=lambda p: (-first_use.get(p, inf), p))


# ---------------------------------------------------------------------------
# page set chain


@dataclass
class PageSetChain:
    interval_length: int = 64
    new: set[int] = field(default_factory=set)
    middle: set[int] = field(default_factory=set)
    old: set[int] = field(default_factory=set)
    fault_counter: int = 0
    advances: int = 0

    def partitions(self) -> tuple[set[int], set[int], set[int]]:
        """Partitions in eviction-search order: old, middle, new."""
        return self.old, self.middle, self.new

    def insert(self, page: int) -> None:
        self.remove(page)
        self.new.add(page)

    def remove(self, page: int) -> None:
        self.new.discard(page)
        self.middle.discard(page)
        self.old.discard(page)

    def record_fault(self) -> bool:
        """Count one page fault; advance and return True at interval end."""
        self.fault_counter += 1
        if self.fault_counter >= self.interval_length:
            chain_advance(self)
            return True
        return False

    def __contains__(self, page: int) -> bool:
        return page in self.new or page in self.middle or page in self.old


def chain_advance(chain: PageSetChain) -> None:
    chain.old |= chain.middle
    chain.middle = chain.new
    chain.new = set()
    chain.fault_counter = 0
    chain.advances += 1


def chain_select(
    chain: PageSetChain,
    state: "DeviceMemoryState",
    frequency: Callable[[int], int] | None = None,
    protected=frozenset(),
) -> int | None:
    """Victim from the oldest non-empty partition, or None if all lack candidates.

    Within a partition the minimum prediction frequency wins (-1 for pages
    never predicted), then least-recent access, then lowest page id.
    """
    last = state.last_access
    for part in chain.partitions():
        cands = [p for p in part if p in state.resident and p not in state.pinned_host and p not in protected]
        if not cands:
            continue
        if frequency is None:
            return min(cands, key=lambda p: (last.get(p, 0), p))
        return min(cands, key=lambda p: (frequency(p), last.get(p, 0), p))
    return None


# ---------------------------------------------------------------------------
# evictor objects driven by the simulator


class PolicyComponent:
    """Hooks the simulator calls as pages move in and out of device memory."""

    name = "base"

    def bind(self, sim) -> None:
        self.sim = sim

    def on_insert(self, page: int, prefetched: bool) -> None:
        pass

    def on_access(self, page: int, position: int) -> None:
        pass

    def on_evict(self, page: int) -> None:
        pass

    def on_fault(self, page: int) -> None:
        pass

    def on_kernel_boundary(self, position: int) -> None:
        pass


class Evictor(PolicyComponent):
    def select(self, state: "DeviceMemoryState", protected) -> int:
        raise NotImplementedError

    def extra_evictions(self, state: "DeviceMemoryState", victim: int) -> set[int]:
        return set()


class LRUEvictor(Evictor):
    name = "lru"

    def __init__(self):
        self.order: OrderedDict[int, None] = OrderedDict()

    def on_insert(self, page, prefetched):
        self.order[page] = None
        self.order.move_to_end(page)

    def on_access(self, page, position):
        if page in self.order:
            self.order.move_to_end(page)

    def on_evict(self, page):
        self.order.pop(page, None)

    def select(self, state, protected):
        for page in self.order:
            if page not in protected and page not in state.pinned_host:
                return page
        raise NoVictimError("no evictable resident page")


class TreeEvictor(LRUEvictor):
    """LRU victim plus tree-based pre-eviction of sparse neighbours."""

    name = "tree"

    def extra_evictions(self, state, victim):
        tree = state.tree_for(victim)
        return tree_preevict(tree, around=victim)


class RandomEvictor(Evictor):
    name = "random"

    def __init__(self, seed: int = 0):
        self.rng = random.Random(seed)

    def select(self, state, protected):
        return random_select(state, self.rng, protected)


class BeladyEvictor(Evictor):
    """Farthest-next-use eviction with a lazily invalidated max-heap."""

    name = "belady"

    def __init__(self):
        self.heap: list[tuple[float, int]] = []
        self.next_use: dict[int, float] = {}
        self.next_index: list[float] = []

    def bind(self, sim) -> None:
        super().bind(sim)
        pages = sim.trace.pages
        nxt: list[float] = [float("inf")] * len(pages)
        seen: dict[int, int] = {}
        for i in range(len(pages) - 1, -1, -1):
            if pages[i] in seen:
                nxt[i] = seen[pages[i]]
            seen[pages[i]] = i
        self.next_index = nxt
        self.first_use = {p: i for p, i in seen.items()}

    def _push(self, page: int, when: float) -> None:
        self.next_use[page] = when
        heapq.heappush(self.heap, (-when, page))

    def on_access(self, page, position):
        self._push(page, self.next_index[position])

    def on_insert(self, page, prefetched):
        if page not in self.next_use:
            self._push(page, float("inf"))

    def on_evict(self, page):
        self.next_use.pop(page, None)

    def select(self, state, protected):
        skipped = []
        try:
            while self.heap:
                neg, page = heapq.heappop(self.heap)
                if page not in state.resident or self.next_use.get(page) != -neg:
                    continue
                if page in protected or page in state.pinned_host:
                    skipped.append((neg, page))
                    continue
                skipped.append((neg, page))
                return page
            raise NoVictimError("no evictable resident page")
        finally:
            for item in skipped:
                heapq.heappush(self.heap, item)


class ChainEvictor(Evictor):
    """Page-set-chain eviction (new/middle/old), least recent within a partition."""

    name = "chain"

    def __init__(self, interval: int = 64):
        self.chain = PageSetChain(interval_length=interval)

    def on_insert(self, page, prefetched):
        self.chain.insert(page)

    def on_evict(self, page):
        self.chain.remove(page)

    def on_fault(self, page):
        self.chain.record_fault()

    def select(self, state, protected):
        victim = chain_select(self.chain, state, None, protected)
        if victim is None:
            return lru_select(state, protected)
        return victim


def make_evictor(name: str, seed: int = 0, interval: int = 64) -> Evictor:
    if name == "lru":
        return LRUEvictor()
    if name == "tree":
        return TreeEvictor()
    if name == "random":
        return RandomEvictor(seed)
    if name == "belady":
        return BeladyEvictor()
    if name == "chain":
        return ChainEvictor(interval)
    raise ValueError(f"unknown evictor {name!r}")
