"""Independent reference implementations used as test oracles."""

from __future__ import annotations

from functools import lru_cache


def min_faults(pages, capacity):
    """Exhaustive minimum far-fault count over every demand-paging eviction schedule."""
    pages = tuple(pages)

    @lru_cache(maxsize=None)
    def go(i, resident):
        if i == len(pages):
            return 0
        p = pages[i]
        if p in resident:
            return go(i + 1, resident)
        if len(resident) < capacity:
            return 1 + go(i + 1, resident | {p})
        return 1 + min(go(i + 1, (resident - {v}) | {p}) for v in resident)

    return go(0, frozenset())


def list_lru_faults(pages, capacity):
    """Textbook list LRU: move-to-front on use, evict from the tail."""
    stack, faults, evicted = [], 0, []
    for p in pages:
        if p in stack:
            stack.remove(p)
        else:
            faults += 1
            if len(stack) >= capacity:
                evicted.append(stack.pop())
        stack.insert(0, p)
    return faults, evicted


def reference_thrash(pages, capacity, victims):
    """Thrash events given a fixed eviction order (re-migrations of evicted pages)."""
    evicted, events = set(), 0
    resident = []
    it = iter(victims)
    for p in pages:
        if p in resident:
            continue
        if p in evicted:
            events += 1
        if len(resident) >= capacity:
            v = next(it)
            resident.remove(v)
            evicted.add(v)
        resident.append(p)
    return events
