"""Append-only page-delta vocabulary."""

from __future__ import annotations

from typing import Iterable


class DeltaVocabulary:
    """Bijection between delta values and dense class indices 0..K-1.

    Classes are only ever appended, so an index once assigned never changes.
    """

    def __init__(self, deltas: Iterable[int] = ()):
        self._index: dict[int, int] = {}
        self._deltas: list[int] = []
        self.extend(deltas)

    def __len__(self) -> int:
        return len(self._deltas)

    def __contains__(self, delta: int) -> bool:
        return delta in self._index

    def add(self, delta: int) -> int:
        delta = int(delta)
        idx = self._index.get(delta)
        if idx is None:
            idx = len(self._deltas)
            self._index[delta] = idx
            self._deltas.append(delta)
        return idx

    def extend(self, deltas: Iterable[int]) -> int:
        """Add unseen deltas in order of first appearance; returns how many were new."""
        before = len(self._deltas)
        for d in deltas:
            self.add(d)
        return len(self._deltas) - before

    def index(self, delta: int, default: int | None = None) -> int | None:
        return self._index.get(int(delta), default)

    def delta(self, index: int) -> int:
        return self._deltas[index]

    @property
    def deltas(self) -> tuple[int, ...]:
        return tuple(self._deltas)
