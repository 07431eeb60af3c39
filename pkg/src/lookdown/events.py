"""Truncated streams of reproduction events.

Only events that touch at least two of the first ``N`` levels change the
truncated state, so only those are generated: they arrive at the total rate
``pushing_rate(spec, N)``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from lookdown import _kernels
from lookdown.errors import SamplerFailure
from lookdown.measures import LambdaSpec, pushing_rate

KINGMAN = "kingman"
JUMP = "jump"
DEFAULT_MAX_ITER = 10 ** 6


@dataclass(frozen=True)
class ReproductionEvent:
    time: float
    block: tuple[int, ...]  # 1-based levels, strictly increasing
    kind: str = KINGMAN
    frequency: float = 0.0

    def __post_init__(self):
        if len(self.block) < 2:
            raise ValueError("an event block needs at least two levels")
        if any(b <= a for a, b in zip(self.block, self.block[1:])) or self.block[0] < 1:
            raise ValueError(f"block {self.block} must be strictly increasing positive levels")
        if self.kind == KINGMAN and len(self.block) != 2:
            raise ValueError("Kingman events have exactly two levels")

    def touches(self, k: int) -> int:
        """Number of block levels among the first ``k``."""
        return sum(1 for b in self.block if b <= k)


@dataclass(frozen=True)
class EventStream:
    horizon: float
    N: int
    events: tuple[ReproductionEvent, ...] = field(default_factory=tuple)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def times(self) -> np.ndarray:
        return np.array([e.time for e in self.events], dtype=float)

    def to_arrays(self):
        """(times, offsets, 0-based levels) in the layout the replay kernel reads."""
        times = self.times
        sizes = [len(e.block) for e in self.events]
        ptr = np.zeros(len(sizes) + 1, dtype=np.int64)
        ptr[1:] = np.cumsum(sizes)
        levels = np.fromiter((b - 1 for e in self.events for b in e.block),
                             dtype=np.int64, count=int(ptr[-1]))
        return times, ptr, levels

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "kind", "frequency", "block"])
        for e in self.events:
            w.writerow([repr(e.time), e.kind, repr(e.frequency), ";".join(map(str, e.block))])
        return buf.getvalue()


def sample_event_stream(spec: LambdaSpec, N: int, horizon: float, rng: np.random.Generator,
                        max_iter: int = DEFAULT_MAX_ITER) -> EventStream:
    """Poisson stream of the events that change the first ``N`` levels on [0, horizon]."""
    if N < 2:
        raise ValueError("N must be >= 2")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    code, alpha, xs, cdf = spec.nu.kernel_args()
    _kernels.seed(int(rng.integers(2 ** 32)))
    times, freqs, ptr, levels, status = _kernels.event_stream(
        N, float(horizon), spec.kingman_rate(N), pushing_rate(spec, N),
        code, alpha, xs, cdf, max_iter)
    if status != _kernels.STATUS_OK:
        raise SamplerFailure(f"jump-frequency rejection exceeded {max_iter} proposals")
    events = []
    for i in range(times.shape[0]):
        block = tuple(int(v) + 1 for v in levels[ptr[i]:ptr[i + 1]])
        kind = KINGMAN if freqs[i] == 0.0 else JUMP
        events.append(ReproductionEvent(float(times[i]), block, kind, float(freqs[i])))
    return EventStream(float(horizon), N, tuple(events))


def split_stream(stream: EventStream, K: int) -> tuple[EventStream, EventStream]:
    """(kept, dropped): events touching at most one / at least two of the first K levels."""
    if not 1 <= K <= stream.N:
        raise ValueError("K must lie in 1..N")
    kept = tuple(e for e in stream if e.touches(K) <= 1)
    dropped = tuple(e for e in stream if e.touches(K) >= 2)
    return (EventStream(stream.horizon, stream.N, kept),
            EventStream(stream.horizon, stream.N, dropped))


def restrict_stream(stream: EventStream, K: int) -> EventStream:
    return split_stream(stream, K)[0]


def truncate_stream(stream: EventStream, n: int) -> EventStream:
    """The stream seen by the first ``n`` levels of a larger system."""
    if not 2 <= n <= stream.N:
        raise ValueError("n must lie in 2..N")
    out = []
    for e in stream:
        block = tuple(b for b in e.block if b <= n)
        if len(block) >= 2:
            out.append(ReproductionEvent(e.time, block, e.kind, e.frequency))
    return EventStream(stream.horizon, n, tuple(out))


def relabel_level(old_level: int, block: Iterable[int]) -> int:
    """New level of the occupant of ``old_level`` after a reproduction event.

    The parent keeps its level; every other occupant is shifted up by the
    number of children inserted at or below its new position.
    """
    if old_level < 1:
        raise ValueError("levels are 1-based")
    block = sorted(block)
    parent, children = block[0], block[1:]
    if old_level <= parent:
        return old_level
    k = old_level
    for c in children:
        if c <= k:
            k += 1
    return k
