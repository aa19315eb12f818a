"""Parallel evaluation of non-learned measures on CPU workers.

Three strategies, one per measure family:

``par_scan``  linear-scan measures. Matched point pairs are split across
              ``n_c`` workers; partial results are reduced on one worker in
              ascending worker order.
``par_dp``    DP measures. Anti-diagonal wavefront over a 3-row score buffer
              with a barrier after every time slot.
``par_enum``  enumeration measures. The points of the second trajectory are
              split across workers; per-worker nearest distances are harvested
              and aggregated on one worker.

Two backends run the workers of one pair. ``lockstep`` runs them in ascending
order inside each slot on the calling thread; the end of a slot is the
barrier. ``threads`` runs one OS thread per active worker with a real
``threading.Barrier``. Both produce identical bits.

``run_batch`` evaluates many pairs, either one pair at a time with ``n_c``
cooperating workers (``intra_pair``) or with whole pairs spread over a process
pool running the sequential kernels (``pair_per_worker``).
"""

from __future__ import annotations

import enum
import math
import multiprocessing
import os
import threading
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .core import Trajectory
from .measures import (
    Family,
    MeasureError,
    MeasureKind,
    MeasureSpec,
    cdds_aggregate,
    cdds_flags,
    dp_rule,
    evaluate,
    exact_partials,
    pair_by_time,
    sar_alignment,
    sar_terms,
    sax_word,
    spd_terms,
)
from .timing import Stopwatch, TimingBreakdown

BACKENDS = ("lockstep", "threads")


class Assignment(str, enum.Enum):
    INTERLEAVED = "interleaved"
    CONTIGUOUS = "contiguous"


class BatchError(RuntimeError):
    def __init__(self, index: int, cause: BaseException | str):
        super().__init__(f"pair {index}: {cause}")
        self.index = index
        self.cause = cause


@dataclass(frozen=True)
class ParallelConfig:
    n_c: int = 64
    batch_workers: int = 1
    assignment: Assignment = Assignment.CONTIGUOUS
    backend: str = "lockstep"

    def __post_init__(self):
        object.__setattr__(self, "assignment", Assignment(self.assignment))
        if self.n_c < 1 or self.batch_workers < 1:
            raise ValueError("n_c and batch_workers must be >= 1")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")


def owned(count: int, n_c: int, worker: int, assignment: Assignment) -> range:
    """Item indices in ``range(count)`` handled by ``worker``."""
    if assignment is Assignment.INTERLEAVED:
        return range(worker, count, n_c)
    chunk = -(-count // n_c)
    return range(min(worker * chunk, count), min((worker + 1) * chunk, count))


def _active_workers(count: int, n_c: int, assignment: Assignment) -> list[tuple[int, range]]:
    out = []
    for w in range(min(n_c, count)):
        r = owned(count, n_c, w, assignment)
        if len(r):
            out.append((w, r))
    return out


def _run_workers(tasks: Sequence[Callable[[], object]], backend: str) -> list:
    """Run ``tasks`` (one per worker) and return their results in worker order."""
    if backend == "threads" and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=len(tasks)) as ex:
            return list(ex.map(lambda f: f(), tasks))
    return [f() for f in tasks]


# --- wavefront schedule and buffer ---------------------------------------------

class WavefrontSchedule:
    """Anti-diagonal time slots for an (n+1) x (m+1) score matrix.

    Slot ``ts`` holds the cells ``(i, j)`` with ``i + j == ts``. Columns
    ``0..m`` are owned by workers according to the assignment strategy.
    """

    def __init__(self, n: int, m: int, n_c: int, assignment: Assignment):
        self.n, self.m, self.n_c = n, m, n_c
        self.assignment = Assignment(assignment)
        self.n_ts = n + m + 1
        cols = m + 1
        self._chunk = -(-cols // n_c)
        self.workers = [w for w, _ in _active_workers(cols, n_c, self.assignment)]

    def cells(self, ts: int) -> range:
        """Columns of the cells computed in slot ``ts``."""
        return range(max(0, ts - self.n), min(ts, self.m) + 1)

    def owner(self, j: int) -> int:
        if self.assignment is Assignment.INTERLEAVED:
            return j % self.n_c
        return j // self._chunk

    def columns(self, ts: int, worker: int) -> range:
        r = self.cells(ts)
        if self.assignment is Assignment.INTERLEAVED:
            start = r.start + (worker - r.start) % self.n_c
            return range(start, r.stop, self.n_c)
        lo = max(r.start, worker * self._chunk)
        hi = min(r.stop, (worker + 1) * self._chunk)
        return range(lo, max(lo, hi))

    def work(self, ts: int) -> list[tuple[int, range]]:
        """Non-empty (worker, columns) assignments of slot ``ts``, by worker."""
        r = self.cells(ts)
        if self.assignment is Assignment.CONTIGUOUS:
            first, last = self.owner(r.start), self.owner(r.stop - 1)
            return [(w, self.columns(ts, w)) for w in range(first, last + 1)]
        if len(r) >= self.n_c:
            return [(w, self.columns(ts, w)) for w in range(self.n_c)]
        return sorted((j % self.n_c, range(j, j + 1)) for j in r)


@lru_cache(maxsize=512)
def wavefront_schedule(n: int, m: int, n_c: int, assignment: Assignment) -> WavefrontSchedule:
    return WavefrontSchedule(n, m, n_c, Assignment(assignment))


class ScoreBuffer:
    """Three rolling rows of ``cols`` scores.

    Slot ``ts`` reads rows ``ts % 3`` (anti-diagonal ``ts - 2``) and
    ``(ts + 1) % 3`` (anti-diagonal ``ts - 1``) and writes row ``(ts + 2) % 3``.
    """

    def __init__(self, cols: int):
        self.cols = cols
        self.rows = [[0.0] * cols for _ in range(3)]

    def begin_slot(self, ts: int) -> None:
        pass

    def slot_rows(self, ts: int):
        return self.rows[ts % 3], self.rows[(ts + 1) % 3], self.rows[(ts + 2) % 3]

    def harvest(self, ts: int, j: int) -> float:
        """Cell ``j`` as written in slot ``ts``, read once every worker is done."""
        return self.rows[(ts + 2) % 3][j]


class _TracedRow(list):
    __slots__ = ("buffer", "row")

    def __getitem__(self, j):
        self.buffer.log.append((self.buffer.slot, self.row, j, "r"))
        return list.__getitem__(self, j)

    def __setitem__(self, j, value):
        self.buffer.log.append((self.buffer.slot, self.row, j, "w"))
        list.__setitem__(self, j, value)


class TracedScoreBuffer(ScoreBuffer):
    """ScoreBuffer that logs every access as ``(slot, row, col, 'r'|'w')``."""

    def __init__(self, cols: int):
        super().__init__(cols)
        self.log: list[tuple[int, int, int, str]] = []
        self.slot = -1
        self.slots_seen: list[int] = []
        traced = []
        for r, row in enumerate(self.rows):
            tr = _TracedRow(row)
            tr.buffer, tr.row = self, r
            traced.append(tr)
        self.rows = traced

    def begin_slot(self, ts: int) -> None:
        self.slot = ts
        self.slots_seen.append(ts)

    def harvest(self, ts: int, j: int) -> float:
        # the final read happens after the last barrier, i.e. in slot ts + 1
        row = (ts + 2) % 3
        self.log.append((ts + 1, row, j, "r"))
        return list.__getitem__(self.rows[row], j)

    def hazards(self) -> list[str]:
        """Same-slot read/write conflicts, double writes and stale reads."""
        problems = []
        last_write: dict[tuple[int, int], int] = {}
        by_slot: dict[int, list] = {}
        for ev in self.log:
            by_slot.setdefault(ev[0], []).append(ev)
        for ts in sorted(by_slot):
            events = by_slot[ts]
            writes = [(r, c) for _, r, c, op in events if op == "w"]
            reads = {(r, c) for _, r, c, op in events if op == "r"}
            if len(set(writes)) != len(writes):
                problems.append(f"slot {ts}: cell written twice")
            for cell in reads & set(writes):
                problems.append(f"slot {ts}: cell {cell} read and written")
            for cell in reads:
                src = last_write.get(cell)
                if src is None or src not in (ts - 1, ts - 2):
                    problems.append(f"slot {ts}: stale read of {cell} (last written in slot {src})")
            for cell in writes:
                last_write[cell] = ts
        return problems


# --- par-DP ---------------------------------------------------------------------

def par_dp(spec: MeasureSpec, T: Trajectory, T2: Trajectory, cfg: ParallelConfig,
           buffer: ScoreBuffer | None = None):
    """Wavefront evaluation of a DP measure; bit-identical to the sequential DP."""
    rule = dp_rule(spec, T, T2)
    boundary, cell = rule.boundary, rule.cell
    n, m = len(T), len(T2)
    sched = wavefront_schedule(n, m, cfg.n_c, cfg.assignment)
    buf = buffer if buffer is not None else ScoreBuffer(m + 1)
    if buf.cols != m + 1:
        raise ValueError(f"score buffer has {buf.cols} columns, need {m + 1}")

    def compute(ts: int, cols: range) -> None:
        older, newer, out = buf.slot_rows(ts)
        for j in cols:
            i = ts - j
            if i and j:
                out[j] = cell(i, j, older[j - 1], newer[j], newer[j - 1])
            elif i:
                out[j] = boundary(i, 0, newer[0])
            elif j:
                out[j] = boundary(0, j, newer[j - 1])
            else:
                out[j] = boundary(0, 0, None)

    if cfg.backend == "threads" and len(sched.workers) > 1:
        _wavefront_threads(sched, buf, compute)
    else:
        for ts in range(sched.n_ts):
            buf.begin_slot(ts)
            for _, cols in sched.work(ts):
                compute(ts, cols)

    score = buf.harvest(sched.n_ts - 1, m)
    return int(score) if rule.integer else score


def _wavefront_threads(sched: WavefrontSchedule, buf: ScoreBuffer, compute) -> None:
    slot = [0]

    def advance():
        slot[0] += 1
        if slot[0] < sched.n_ts:
            buf.begin_slot(slot[0])

    barrier = threading.Barrier(len(sched.workers), action=advance)
    errors: list[BaseException] = []

    def run(worker: int) -> None:
        try:
            for ts in range(sched.n_ts):
                compute(ts, sched.columns(ts, worker))
                barrier.wait()
        except threading.BrokenBarrierError:
            pass
        except BaseException as exc:
            errors.append(exc)
            barrier.abort()

    buf.begin_slot(0)
    threads = [threading.Thread(target=run, args=(w,), daemon=True) for w in sched.workers]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        raise errors[0]


# --- par-enum -------------------------------------------------------------------

def par_enum(spec: MeasureSpec, T: Trajectory, T2: Trajectory, cfg: ParallelConfig) -> float:
    kind = spec.kind
    if kind.family is not Family.ENUM:
        raise MeasureError(f"{kind.value} is not an enumeration measure")
    if len(T) == 0 or len(T2) == 0:
        raise MeasureError("enumeration measures need non-empty trajectories")
    P, Q = T.xy, T2.xy

    def task(idx: range):
        def run():
            Qw = Q[idx.start:idx.stop:idx.step]
            dx = P[:, 0, None] - Qw[None, :, 0]
            dy = P[:, 1, None] - Qw[None, :, 1]
            D = np.sqrt(dx * dx + dy * dy)
            own = D.min(axis=0)
            if kind is MeasureKind.HAUSDORFF:
                return float(own.max()), D.min(axis=1)
            return exact_partials(own.tolist()), D.min(axis=1)
        return run

    work = _active_workers(len(T2), cfg.n_c, cfg.assignment)
    parts = _run_workers([task(idx) for _, idx in work], cfg.backend)

    # harvest on one worker, ascending worker order
    row_min = parts[0][1]
    for _, rm in parts[1:]:
        row_min = np.minimum(row_min, rm)
    if kind is MeasureKind.HAUSDORFF:
        return max(max(p[0] for p in parts), float(row_min.max()))
    col_partials = [x for p in parts for x in p[0]]
    return (math.fsum(row_min.tolist()) / len(T) + math.fsum(col_partials) / len(T2)) / 2


# --- par-scan -------------------------------------------------------------------

def par_scan(spec: MeasureSpec, T: Trajectory, T2: Trajectory, cfg: ParallelConfig) -> float:
    kind, p = spec.kind, spec.params
    if kind.family is not Family.SCAN:
        raise MeasureError(f"{kind.value} is not a linear-scan measure")

    if kind is MeasureKind.SPD:
        if len(T) != len(T2):
            raise MeasureError(f"SPD needs equal lengths, got {len(T)} and {len(T2)}")
        work = _active_workers(len(T), cfg.n_c, cfg.assignment)
        parts = _run_workers([lambda idx=idx: exact_partials(spd_terms(T, T2, idx)) for _, idx in work],
                             cfg.backend)
        return math.fsum([x for part in parts for x in part])

    if T.t is None or T2.t is None:
        raise MeasureError(f"{kind.value} needs timestamped trajectories")

    if kind is MeasureKind.CDDS:
        pairs = pair_by_time(T, T2)
        work = _active_workers(len(pairs), cfg.n_c, cfg.assignment)
        eps = p.eps_spatial
        parts = _run_workers([lambda idx=idx: cdds_flags(T, T2, pairs, eps, idx) for _, idx in work],
                             cfg.backend)
        flags = [False] * len(pairs)
        for (_, idx), part in zip(work, parts):
            for k, f in zip(idx, part):
                flags[k] = f
        return cdds_aggregate(T, T2, pairs, flags)

    if len(T) == 0 or len(T2) == 0:
        raise MeasureError("SAR needs non-empty trajectories")
    wa = sax_word(T, p.sax_word_length, p.sax_alphabet)
    wb = sax_word(T2, p.sax_word_length, p.sax_alphabet)
    aligned = sar_alignment(wa, wb)
    thr = p.sax_symbol_threshold
    work = _active_workers(len(aligned), cfg.n_c, cfg.assignment)
    parts = _run_workers([lambda idx=idx: exact_partials(sar_terms(wa, wb, aligned, thr, idx)) for _, idx in work],
                         cfg.backend)
    return math.fsum([x for part in parts for x in part])


def par_evaluate(spec: MeasureSpec, T: Trajectory, T2: Trajectory, cfg: ParallelConfig):
    fam = spec.family
    if fam is Family.DP:
        return par_dp(spec, T, T2, cfg)
    if fam is Family.ENUM:
        return par_enum(spec, T, T2, cfg)
    return par_scan(spec, T, T2, cfg)


# --- batches --------------------------------------------------------------------

MODES = ("intra_pair", "pair_per_worker")

# pairs handed to forked pool workers by inheritance rather than pickling
_SHARED: dict = {}


def _check_pair(spec: MeasureSpec, index: int, a: Trajectory, b: Trajectory) -> None:
    kind = spec.kind
    if kind.needs_time and (a.t is None or b.t is None):
        raise BatchError(index, MeasureError(f"{kind.value} needs timestamped trajectories"))
    if kind is MeasureKind.SPD and len(a) != len(b):
        raise BatchError(index, MeasureError("SPD needs trajectories of equal length"))


def _score_range(start: int, stop: int):
    spec, pairs = _SHARED["spec"], _SHARED["pairs"]
    out = []
    for k in range(start, stop):
        a, b = pairs[k]
        try:
            out.append(evaluate(spec, a, b))
        except Exception as exc:  # reported with the pair index by the parent
            return ("error", k, f"{type(exc).__name__}: {exc}")
    return ("ok", start, out)


def _chunks(n: int, batch_size: int, workers: int) -> list[tuple[int, int]]:
    out = []
    for b0 in range(0, n, batch_size):
        b1 = min(n, b0 + batch_size)
        step = -(-(b1 - b0) // workers)
        out.extend((s, min(b1, s + step)) for s in range(b0, b1, step))
    return out


def run_batch(
    spec: MeasureSpec,
    pairs: Sequence[tuple[Trajectory, Trajectory]],
    cfg: ParallelConfig,
    mode: str = "pair_per_worker",
    batch_size: int = 512,
) -> tuple[list, TimingBreakdown]:
    """Scores for every pair, in input order, plus the timing breakdown."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not pairs:
        raise ValueError("empty pair list")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    timing = TimingBreakdown()
    with Stopwatch() as total:
        with Stopwatch() as pre:
            pairs = list(pairs)
            for k, (a, b) in enumerate(pairs):
                _check_pair(spec, k, a, b)
        with Stopwatch() as cmp:
            if mode == "intra_pair":
                scores = []
                for k, (a, b) in enumerate(pairs):
                    try:
                        scores.append(par_evaluate(spec, a, b, cfg))
                    except Exception as exc:
                        raise BatchError(k, exc) from exc
            else:
                scores = _pair_per_worker(spec, pairs, cfg.batch_workers, batch_size)
    timing.pre_s, timing.cmp_s, timing.total_s = pre.elapsed, cmp.elapsed, total.elapsed
    return scores, timing


def _pair_per_worker(spec, pairs, workers: int, batch_size: int) -> list:
    _SHARED["spec"], _SHARED["pairs"] = spec, pairs
    try:
        chunks = _chunks(len(pairs), batch_size, workers)
        if workers == 1:
            results = [_score_range(s, e) for s, e in chunks]
        else:
            _kernels.warm_up()
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
                results = list(ex.map(_score_range, *zip(*chunks)))
    finally:
        _SHARED.clear()
    scores = []
    for status, k, payload in results:
        if status == "error":
            raise BatchError(k, payload)
        scores.extend(payload)
    return scores


def default_workers() -> int:
    env = os.environ.get("TRAJSIM_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1
