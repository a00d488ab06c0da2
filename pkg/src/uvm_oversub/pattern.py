"""Access-pattern classification of basic-block migration traffic, plus the
per-pattern model table."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Generic, Iterable, Sequence, TypeVar

from .trace import PatternLabel, Trace, block_of

KERNEL = None  # kernel-boundary mark inside a migration window

LINEAR_THRESHOLD = 0.75
RANDOM_THRESHOLD = 0.25
MIN_MIGRATIONS = 4


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class PatternThresholds:
    linear: float = LINEAR_THRESHOLD
    random: float = RANDOM_THRESHOLD

    def __post_init__(self):
        if not 0.0 <= self.random < self.linear <= 1.0:
            raise ValueError("need 0 <= random < linear <= 1")

    @classmethod
    def parse(cls, text: str) -> "PatternThresholds":
        lin, rand = (float(x) for x in text.split(","))
        return cls(lin, rand)


def linearity(blocks: Sequence[int]) -> float:
    """Fraction of consecutive block deltas equal to +1."""
    if len(blocks) < 2:
        return 0.0
    steps = sum(1 for a, b in zip(blocks, blocks[1:]) if b - a == 1)
    return steps / (len(blocks) - 1)


def _has_cross_kernel_reuse(window: Sequence[int | None], history: Iterable[Sequence[int | None]]) -> bool:
    kernel = 0
    seen: dict[int, int] = {}  # block -> first kernel index seen in history
    for past in history:
        for item in past:
            if item is KERNEL:
                kernel += 1
            else:
                seen.setdefault(item, kernel)
    for item in window:
        if item is KERNEL:
            kernel += 1
            continue
        first = seen.setdefault(item, kernel)
        if first != kernel:
            return True
    return False


def classify_window(
    migrations: Sequence[int | None],
    history: Iterable[Sequence[int | None]] = (),
    thresholds: PatternThresholds = PatternThresholds(),
    reuse_seen: bool = False,
) -> PatternLabel:
    """Label a window of migrated basic-block ids (``None`` marks a kernel boundary).

    ``history`` holds earlier windows; it only widens the scope of the
    cross-kernel re-reference check. ``reuse_seen`` carries a re-reference
    already detected earlier in the current kernel.
    """
    blocks = [b for b in migrations if b is not KERNEL]
    if len(blocks) < MIN_MIGRATIONS:
        raise InsufficientDataError(f"need >= {MIN_MIGRATIONS} migrations, got {len(blocks)}")
    lin = linearity(blocks)
    reuse = reuse_seen or _has_cross_kernel_reuse(migrations, history)
    if lin >= thresholds.linear:
        base = PatternLabel.LinearStreaming
    elif lin <= thresholds.random:
        base = PatternLabel.Random
    else:
        base = PatternLabel.MixedIrregular
    return PatternLabel(base + 3) if reuse else base


class PatternTracker:
    """Re-labels the stream once per window of block migrations."""

    def __init__(
        self,
        window: int = 64,
        history: int = 8,
        thresholds: PatternThresholds = PatternThresholds(),
        initial: PatternLabel = PatternLabel.LinearStreaming,
    ):
        self.window = window
        self.thresholds = thresholds
        self.label = initial
        self.current: list[int | None] = []
        self.count = 0
        self.history: deque[list[int | None]] = deque(maxlen=history)
        self.last_block: int | None = None
        self.decisions: list[PatternLabel] = []
        self.kernel_reuse = False

    def kernel_boundary(self) -> None:
        self.current.append(KERNEL)
        self.last_block = None
        self.kernel_reuse = False

    def migrate(self, block: int) -> PatternLabel | None:
        """Record one migrated block; returns the new label at window end."""
        if block == self.last_block:
            return None
        self.last_block = block
        self.current.append(block)
        self.count += 1
        if self.count >= self.window:
            return self.close_window()
        return None

    def _last_kernel_index(self) -> int:
        for i in range(len(self.current) - 1, -1, -1):
            if self.current[i] is KERNEL:
                return i
        return -1

    def close_window(self) -> PatternLabel | None:
        try:
            self.label = classify_window(self.current, self.history, self.thresholds, self.kernel_reuse)
        except InsufficientDataError:
            pass
        k = self._last_kernel_index()
        head, tail = self.current[: k + 1], self.current[k + 1:]
        # kernel_boundary() already cleared the flag if this window crossed a boundary
        self.kernel_reuse = self.kernel_reuse or _has_cross_kernel_reuse(tail, [*self.history, head])
        self.decisions.append(self.label)
        self.history.append(self.current)
        self.current = []
        self.count = 0
        return self.label


def trace_migrations(trace: Trace) -> list[int | None]:
    """Block-change stream of a trace with kernel marks (first-touch migrations
    of an uncached device)."""
    out: list[int | None] = []
    starts = set(k for k in trace.kernel_starts if k > 0)
    last = None
    for i, page in enumerate(trace.pages):
        if i in starts:
            out.append(KERNEL)
            last = None
        b = block_of(page)
        if b != last:
            out.append(b)
            last = b
    return out


def label_accesses(trace: Trace, window: int = 64, thresholds: PatternThresholds = PatternThresholds()) -> list[PatternLabel]:
    """Pattern label in force at every access of ``trace``."""
    tracker = PatternTracker(window, thresholds=thresholds)
    starts = set(k for k in trace.kernel_starts if k > 0)
    labels = []
    for i, page in enumerate(trace.pages):
        if i in starts:
            tracker.kernel_boundary()
        tracker.migrate(block_of(page))
        labels.append(tracker.label)
    return labels


def classify_trace(trace: Trace, window: int = 64, thresholds: PatternThresholds = PatternThresholds()) -> list[PatternLabel]:
    """Per-window labels over a trace's migration stream."""
    tracker = PatternTracker(window, thresholds=thresholds)
    for item in trace_migrations(trace):
        if item is KERNEL:
            tracker.kernel_boundary()
        else:
            tracker.migrate(item)
    return list(tracker.decisions)


# ---------------------------------------------------------------------------

M = TypeVar("M")


@dataclass
class ModelTable(Generic[M]):
    """Direct-mapped table of per-pattern models; a miss builds fresh weights."""

    factory: Callable[[PatternLabel], M]
    entries: dict[PatternLabel, M] = field(default_factory=dict)

    def model_for(self, label: PatternLabel) -> M:
        label = PatternLabel(label)
        if label not in self.entries:
            self.entries[label] = self.factory(label)
        return self.entries[label]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, label) -> bool:
        return PatternLabel(label) in self.entries


def model_for(table: ModelTable, label: PatternLabel):
    return table.model_for(label)
