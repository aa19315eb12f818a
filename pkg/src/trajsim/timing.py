"""Timing decomposition shared by the batch executor, kNN and the CLI."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass


@dataclass
class TimingBreakdown:
    """Seconds spent in pre-processing, embedding and similarity computation."""

    pre_s: float = 0.0
    emb_s: float = 0.0
    cmp_s: float = 0.0
    total_s: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)

    def __add__(self, other: "TimingBreakdown") -> "TimingBreakdown":
        return TimingBreakdown(
            self.pre_s + other.pre_s,
            self.emb_s + other.emb_s,
            self.cmp_s + other.cmp_s,
            self.total_s + other.total_s,
        )

    @classmethod
    def mean(cls, runs: list["TimingBreakdown"]) -> "TimingBreakdown":
        if not runs:
            raise ValueError("no runs to average")
        n = len(runs)
        return cls(
            sum(r.pre_s for r in runs) / n,
            sum(r.emb_s for r in runs) / n,
            sum(r.cmp_s for r in runs) / n,
            sum(r.total_s for r in runs) / n,
        )


class Stopwatch:
    """``with Stopwatch() as sw: ...`` then read ``sw.elapsed``."""

    def __enter__(self):
        self._start = time.perf_counter()
        self.elapsed = 0.0
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self._start
        return False
