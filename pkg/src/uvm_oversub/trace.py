"""Memory access traces: record model, text I/O, synthetic generators.

Trace file format (UTF-8, one record per line)::

    #instructions=120000        optional header, overrides instruction count
    # free-form comment
    100,4096,0,8192,0           cycle,pc,tb_id,vaddr,rw   (rw in {0,1})
    K                           kernel boundary

"""

from __future__ import annotations

import random
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

PAGE_SHIFT = 12
BLOCK_PAGES_SHIFT = 4   # 16 pages = 64KB basic block
CHUNK_BLOCKS_SHIFT = 5  # 32 blocks = 2MB chunk
MAX_VADDR = (1 << 64) - 1


class TraceError(ValueError):
    """Malformed or unusable trace input."""


class PatternLabel(IntEnum):
    """The six migration access-pattern categories, encoded 0-5."""

    LinearStreaming = 0
    Random = 1
    MixedIrregular = 2
    LinearReuse = 3
    RandomReuse = 4
    MixedReuse = 5

    @property
    def is_reuse(self) -> bool:
        return self >= PatternLabel.LinearReuse

    @classmethod
    def parse(cls, name: str | int) -> "PatternLabel":
        if isinstance(name, int) or str(name).isdigit():
            return cls(int(name))
        key = str(name).replace("-", "").replace("_", "").replace("/", "").lower()
        aliases = {
            "linear": cls.LinearStreaming,
            "streaming": cls.LinearStreaming,
            "mixed": cls.MixedIrregular,
            "irregular": cls.MixedIrregular,
            "regular": cls.LinearReuse,
        }
        for member in cls:
            if member.name.lower() == key:
                return member
        if key in aliases:
            return aliases[key]
        raise TraceError(f"unknown pattern {name!r}")


@dataclass(frozen=True)
class PageGeometry:
    page_bytes: int = 4096
    basic_block_pages: int = 16
    chunk_basic_blocks: int = 32

    @property
    def page_shift(self) -> int:
        return self.page_bytes.bit_length() - 1

    def block_of(self, page: int) -> int:
        return page // self.basic_block_pages

    def chunk_of_block(self, block: int) -> int:
        return block // self.chunk_basic_blocks

    def chunk_of(self, page: int) -> int:
        return self.chunk_of_block(self.block_of(page))

    @property
    def chunk_pages(self) -> int:
        return self.basic_block_pages * self.chunk_basic_blocks


GEOMETRY = PageGeometry()


def page_of(vaddr: int) -> int:
    return vaddr >> PAGE_SHIFT


def block_of(page: int) -> int:
    return page >> BLOCK_PAGES_SHIFT


@dataclass(frozen=True, slots=True)
class MemoryAccess:
    cycle: int
    pc: int
    tb_id: int
    vaddr: int
    is_write: bool = False

    @property
    def page(self) -> int:
        return self.vaddr >> PAGE_SHIFT


@dataclass(frozen=True)
class Trace:
    """Cycle-ordered accesses plus kernel boundaries.

    ``kernel_starts`` holds the access indices at which a new kernel begins
    (a ``K`` line sits immediately before that access in the file).
    """

    accesses: tuple[MemoryAccess, ...]
    kernel_starts: tuple[int, ...] = ()
    instructions: int | None = None
    name: str = "trace"
    _pages: tuple[int, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if not self.accesses:
            raise TraceError("empty trace")
        prev = -1
        for i, a in enumerate(self.accesses):
            if a.cycle < prev:
                raise TraceError(f"not cycle-sorted at access {i}")
            prev = a.cycle
        if any(not 0 <= k <= len(self.accesses) for k in self.kernel_starts):
            raise TraceError("kernel boundary out of range")
        if list(self.kernel_starts) != sorted(self.kernel_starts):
            raise TraceError("kernel boundaries out of order")
        object.__setattr__(self, "_pages", tuple(a.page for a in self.accesses))

    def __len__(self) -> int:
        return len(self.accesses)

    @property
    def pages(self) -> tuple[int, ...]:
        return self._pages

    @property
    def instruction_count(self) -> int:
        return self.instructions if self.instructions is not None else len(self.accesses)

    def kernel_ids(self) -> list[int]:
        """Kernel index of every access."""
        starts = [k for k in self.kernel_starts if k > 0]
        return [bisect_right(starts, i) for i in range(len(self.accesses))]

    def slice(self, start: int, stop: int) -> "Trace":
        ks = tuple(k - start for k in self.kernel_starts if start < k < stop)
        return Trace(self.accesses[start:stop], ks, None, self.name)


def working_set_size(trace: Trace) -> int:
    return len(set(trace.pages))


def page_delta_stream(trace: Trace) -> list[int]:
    """Global page deltas; the first element is 0."""
    pages = trace.pages
    return [0] + [pages[i] - pages[i - 1] for i in range(1, len(pages))]


def capacity_for_oversubscription(trace: Trace | int, level: float) -> int:
    """Device capacity (pages) giving ``level`` oversubscription, e.g. 1.25."""
    if level < 1.0:
        raise ValueError(f"oversubscription level must be >= 1.0, got {level}")
    wss = trace if isinstance(trace, int) else working_set_size(trace)
    # tolerate binary fp noise such as 1000 / 1.25 = 799.9999999
    return max(1, int(wss / level + 1e-9))


# ---------------------------------------------------------------------------
# file I/O


def parse_record(line: str, lineno: int = 0) -> MemoryAccess:
    parts = line.split(",")
    if len(parts) != 5:
        raise TraceError(f"line {lineno}: expected 5 fields, got {len(parts)}")
    try:
        cycle, pc, tb, vaddr, rw = (int(p.strip()) for p in parts)
    except ValueError as exc:
        raise TraceError(f"line {lineno}: non-integer field ({exc})") from None
    if min(cycle, pc, tb, vaddr) < 0:
        raise TraceError(f"line {lineno}: negative field")
    if vaddr > MAX_VADDR:
        raise TraceError(f"line {lineno}: vaddr exceeds 64 bits")
    if rw not in (0, 1):
        raise TraceError(f"line {lineno}: rw must be 0 or 1")
    return MemoryAccess(cycle, pc, tb, vaddr, bool(rw))


def parse_trace(lines: Iterable[str], name: str = "trace") -> Trace:
    accesses: list[MemoryAccess] = []
    kernels: list[int] = []
    instructions = None
    last_cycle = -1
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("instructions="):
                try:
                    instructions = int(body.split("=", 1)[1])
                except ValueError:
                    raise TraceError(f"line {lineno}: bad instructions header") from None
            continue
        if line == "K":
            kernels.append(len(accesses))
            continue
        rec = parse_record(line, lineno)
        if rec.cycle < last_cycle:
            raise TraceError(f"line {lineno}: not cycle-sorted")
        last_cycle = rec.cycle
        accesses.append(rec)
    if not accesses:
        raise TraceError("empty trace")
    return Trace(tuple(accesses), tuple(kernels), instructions, name)


def load_trace(path: str | Path) -> Trace:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return parse_trace(fh, name=path.stem)


def format_trace(trace: Trace) -> str:
    out = []
    if trace.instructions is not None:
        out.append(f"#instructions={trace.instructions}")
    starts = list(trace.kernel_starts)
    j = 0
    for i, a in enumerate(trace.accesses):
        while j < len(starts) and starts[j] == i:
            out.append("K")
            j += 1
        out.append(f"{a.cycle},{a.pc},{a.tb_id},{a.vaddr},{int(a.is_write)}")
    out.extend("K" for _ in starts[j:])
    return "\n".join(out) + "\n"


def write_trace(trace: Trace, path: str | Path) -> None:
    Path(path).write_text(format_trace(trace), encoding="utf-8")


# ---------------------------------------------------------------------------
# synthetic generators

_PC_BASE = {
    PatternLabel.LinearStreaming: 0x1000,
    PatternLabel.Random: 0x2000,
    PatternLabel.MixedIrregular: 0x3000,
    PatternLabel.LinearReuse: 0x4000,
    PatternLabel.RandomReuse: 0x5000,
    PatternLabel.MixedReuse: 0x6000,
}

MIXED_LINEAR_BLOCKS = 6
MIXED_RANDOM_ACCESSES = 4


def _mixed_pass(pages: int, rng: random.Random) -> list[tuple[int, int]]:
    """One pass of interleaved linear runs and random hops as (page, pc_offset)."""
    bp = GEOMETRY.basic_block_pages
    run = MIXED_LINEAR_BLOCKS * bp
    seq: list[tuple[int, int]] = []
    cursor = 0
    while len(seq) < pages:
        for p in range(cursor, min(cursor + run, pages)):
            seq.append((p, 0))
        cursor += run
        if cursor >= pages:
            cursor = 0
        for _ in range(MIXED_RANDOM_ACCESSES):
            seq.append((rng.randrange(pages), 8))
    return seq[:pages]


def _pass_sequence(pattern: PatternLabel, pages: int, rng: random.Random) -> list[tuple[int, int]]:
    base = pattern if pattern < 3 else PatternLabel(pattern - 3)
    if base == PatternLabel.LinearStreaming:
        return [(p, 0) for p in range(pages)]
    if base == PatternLabel.Random:
        perm = list(range(pages))
        rng.shuffle(perm)
        return [(p, 0) for p in perm]
    return _mixed_pass(pages, rng)


def synthesize_trace(
    pattern: PatternLabel | str | int,
    pages: int,
    accesses: int,
    seed: int = 0,
    *,
    base_page: int = 0,
    write_fraction: float = 0.25,
    threads_per_tb: int = 32,
) -> Trace:
    """Deterministic synthetic trace for one of the six patterns.

    Streaming touches each page once in order (spreading ``accesses`` evenly
    across pages when there are more accesses than pages). Random draws pages
    i.i.d. uniform. Mixed alternates 6-block linear runs with 4 random hops.
    The Reuse variants replay one fixed pass over ``pages`` pages once per
    kernel, with a kernel boundary between passes.
    """
    pattern = PatternLabel.parse(pattern) if not isinstance(pattern, PatternLabel) else pattern
    if pages < 1 or accesses < 1:
        raise ValueError("pages and accesses must be >= 1")
    rng = random.Random(seed * 1_000_003 + int(pattern))
    pc0 = _PC_BASE[pattern]
    seq: list[tuple[int, int]] = []
    kernels: list[int] = []
    if pattern == PatternLabel.LinearStreaming:
        seq = [(i * pages // accesses, 0) for i in range(accesses)]
    elif pattern == PatternLabel.Random:
        seq = [(rng.randrange(pages), 0) for _ in range(accesses)]
    elif pattern == PatternLabel.MixedIrregular:
        while len(seq) < accesses:
            seq.extend(_mixed_pass(pages, rng))
        seq = seq[:accesses]
    else:
        one_pass = _pass_sequence(pattern, pages, rng)
        while len(seq) < accesses:
            if seq:
                kernels.append(len(seq))
            seq.extend(one_pass[: accesses - len(seq)])

    out = []
    for i, (page, pc_off) in enumerate(seq):
        page += base_page
        offset = (i % 32) * 128
        out.append(
            MemoryAccess(
                cycle=i,
                pc=pc0 + pc_off + 8 * (i % 4),
                tb_id=(i // threads_per_tb) % 28,
                vaddr=(page << PAGE_SHIFT) | offset,
                is_write=rng.random() < write_fraction,
            )
        )
    return Trace(tuple(out), tuple(kernels), None, f"synth_{pattern.name}_{seed}")


def concat_traces(parts: Sequence[Trace], name: str = "concat", kernel_breaks: bool = True) -> Trace:
    """Concatenate traces, re-timing cycles so the result stays sorted."""
    accesses: list[MemoryAccess] = []
    kernels: list[int] = []
    offset = 0
    for t in parts:
        start = len(accesses)
        if kernel_breaks and start:
            kernels.append(start)
        kernels.extend(start + k for k in t.kernel_starts if k > 0)
        base = t.accesses[0].cycle
        for a in t.accesses:
            accesses.append(MemoryAccess(a.cycle - base + offset, a.pc, a.tb_id, a.vaddr, a.is_write))
        offset = accesses[-1].cycle + 1
    return Trace(tuple(accesses), tuple(sorted(set(kernels))), None, name)


def trace_from_pages(pages: Sequence[int], kernel_starts: Sequence[int] = (), name: str = "pages") -> Trace:
    """Minimal trace over explicit page ids, one access per cycle."""
    acc = tuple(MemoryAccess(i, 0x100, 0, p << PAGE_SHIFT, False) for i, p in enumerate(pages))
    return Trace(acc, tuple(kernel_starts), None, name)
