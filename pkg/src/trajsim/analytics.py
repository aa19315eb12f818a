"""Trajectory kNN, k-medoids clustering and accuracy metrics."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Dataset, Trajectory
from .embedding import FfnWeights, ffn_encode
from .index import FlatIndex, IvfIndex, Metric, distances, knn
from .measures import MeasureError, MeasureSpec
from .parallel import BatchError, ParallelConfig, run_batch
from .timing import Stopwatch, TimingBreakdown


@dataclass
class KnnResult:
    query_id: str
    neighbors: list[tuple[str, float]]
    k: int
    larger_is_similar: bool = False

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.neighbors]


def rank(ids: Sequence[str], scores: Sequence[float], k: int, larger_is_similar: bool) -> list[tuple[str, float]]:
    """Top-k by score orientation, ties by ascending id."""
    sign = -1 if larger_is_similar else 1
    order = sorted(range(len(ids)), key=lambda i: (sign * scores[i], ids[i]))
    return [(ids[i], scores[i]) for i in order[:k]]


def knn_exact_many(
    D: Dataset,
    queries: Sequence[Trajectory],
    k: int,
    spec: MeasureSpec,
    cfg: ParallelConfig = ParallelConfig(n_c=1),
    mode: str = "pair_per_worker",
    batch_size: int = 512,
) -> tuple[list[KnnResult], TimingBreakdown]:
    """Brute-force kNN of each query under a non-learned measure."""
    if not 1 <= k <= len(D):
        raise ValueError(f"k must lie in [1, {len(D)}], got {k}")
    if not queries:
        return [], TimingBreakdown()
    pairs = [(q, t) for q in queries for t in D]
    scores, timing = run_batch(spec, pairs, cfg, mode, batch_size)
    ids = D.ids
    n = len(D)
    with Stopwatch() as sw:
        results = [
            KnnResult(q.id, rank(ids, scores[a * n:(a + 1) * n], k, spec.larger_is_similar), k, spec.larger_is_similar)
            for a, q in enumerate(queries)
        ]
    timing.cmp_s += sw.elapsed
    timing.total_s += sw.elapsed
    return results, timing


def knn_exact(D: Dataset, q: Trajectory, k: int, spec: MeasureSpec,
              cfg: ParallelConfig = ParallelConfig(n_c=1), mode: str = "pair_per_worker") -> KnnResult:
    return knn_exact_many(D, [q], k, spec, cfg, mode)[0][0]


def knn_embedding(idx: FlatIndex | IvfIndex, w: FfnWeights, q: Trajectory, k: int,
                  nprobe: int | None = None) -> tuple[KnnResult, TimingBreakdown]:
    """Encode the query, then scan the index. Embedding and scan are timed apart."""
    if w.d != idx.d:
        raise ValueError(f"weights produce d={w.d}, index holds d={idx.d}")
    with Stopwatch() as total:
        with Stopwatch() as emb:
            h = ffn_encode(q, w)
        with Stopwatch() as cmp:
            neighbors = knn(idx, h, k, nprobe)
    timing = TimingBreakdown(emb_s=emb.elapsed, cmp_s=cmp.elapsed, total_s=total.elapsed)
    return KnnResult(q.id, neighbors, k), timing


def hit_ratio(approx: KnnResult, truth: KnnResult) -> float:
    if approx.k != truth.k:
        raise ValueError(f"k mismatch: {approx.k} vs {truth.k}")
    if approx.query_id != truth.query_id:
        raise ValueError(f"query mismatch: {approx.query_id!r} vs {truth.query_id!r}")
    return len(set(approx.ids) & set(truth.ids)) / approx.k


# --- clustering -------------------------------------------------------------------

@dataclass
class Clustering:
    k: int
    medoid_ids: list[str]
    assignment: dict[str, int]
    total_cost: float
    cost_history: list[float] = field(default_factory=list)
    iterations: int = 0

    def labels(self, items: Sequence[str] | None = None) -> list[int]:
        items = list(self.assignment) if items is None else items
        return [self.assignment[i] for i in items]


def _as_matrix(n: int, dist) -> np.ndarray:
    if callable(dist):
        M = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                M[i, j] = M[j, i] = dist(i, j)
        return M
    M = np.asarray(dist, dtype=np.float64)
    if M.shape != (n, n):
        raise ValueError(f"distance matrix must be {n}x{n}, got {M.shape}")
    return M


def kmedoids(items: Sequence[str], dist: np.ndarray | Callable[[int, int], float], k: int,
             seed: int = 0, max_iters: int = 100) -> Clustering:
    """Alternating k-medoids over a symmetric, zero-diagonal distance source.

    ``dist`` is an ``n x n`` matrix or a callable on item positions. Starts from
    ``k`` distinct seeded medoids, then alternates nearest-medoid assignment
    (ties to the lowest cluster index) and per-cluster medoid re-selection
    (ties to the lowest id) until the assignment is stable.
    """
    items = list(items)
    n = len(items)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    D = _as_matrix(n, dist)
    rng = np.random.default_rng(seed)
    medoids = np.sort(rng.choice(n, size=k, replace=False))
    rows = np.arange(n)
    assign = None
    history: list[float] = []
    it = 0
    while True:
        new = D[:, medoids].argmin(axis=1)
        new[medoids] = np.arange(k)
        history.append(math.fsum(D[rows, medoids[new]].tolist()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        it += 1
        if it > max_iters:
            break
        for c in range(k):
            members = np.flatnonzero(assign == c)
            sums = [math.fsum(row) for row in D[np.ix_(members, members)].tolist()]
            best = min(sums)
            medoids[c] = min((p for p, s in zip(members.tolist(), sums) if s == best), key=lambda p: items[p])
    return Clustering(
        k,
        [items[m] for m in medoids.tolist()],
        {items[i]: int(c) for i, c in enumerate(assign.tolist())},
        history[-1],
        history,
        it,
    )


def _labels(x, items: Sequence | None = None) -> dict:
    if isinstance(x, Clustering):
        return dict(x.assignment)
    if isinstance(x, Mapping):
        return dict(x)
    return dict(enumerate(x))


def _pairs2(n: int) -> int:
    return n * (n - 1) // 2


def _contingency(A, B):
    a, b = _labels(A), _labels(B)
    if set(a) != set(b):
        raise ValueError("labelings cover different item sets")
    keys = list(a)
    joint = Counter((a[i], b[i]) for i in keys)
    return len(keys), joint, Counter(a[i] for i in keys), Counter(b[i] for i in keys)


def rand_index(A, B) -> float:
    """Fraction of item pairs on which two partitions agree (together or apart)."""
    n, joint, ca, cb = _contingency(A, B)
    total = _pairs2(n)
    if total == 0:
        return 1.0
    both = sum(_pairs2(v) for v in joint.values())
    same_a = sum(_pairs2(v) for v in ca.values())
    same_b = sum(_pairs2(v) for v in cb.values())
    agree = total + 2 * both - same_a - same_b
    return agree / total


def pair_recall(truth, pred) -> float:
    """Share of pairs together in ``truth`` that are also together in ``pred``."""
    n, joint, ct, _ = _contingency(truth, pred)
    together = sum(_pairs2(v) for v in ct.values())
    if together == 0:
        return 1.0
    return sum(_pairs2(v) for v in joint.values()) / together


# --- distance matrices ----------------------------------------------------------

def precompute_distance_matrix(D: Dataset, spec: MeasureSpec, cfg: ParallelConfig = ParallelConfig(n_c=1),
                               mode: str = "pair_per_worker") -> np.ndarray:
    """``M[i, j] = f(T_i, T_j)``, each unordered pair evaluated once."""
    n = len(D)
    M = np.zeros((n, n))
    index = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if spec.larger_is_similar:
        index += [(i, i) for i in range(n)]
    if not index:
        return M
    try:
        scores, _ = run_batch(spec, [(D[i], D[j]) for i, j in index], cfg, mode)
    except BatchError as exc:
        i, j = index[exc.index]
        raise MeasureError(f"pair ({i}, {j}): {exc.cause}") from exc
    for (i, j), s in zip(index, scores):
        M[i, j] = M[j, i] = s
    return M


def embedding_distance_matrix(vectors: np.ndarray, metric: Metric | str = Metric.L1) -> np.ndarray:
    metric = Metric(metric)
    return np.vstack([distances(vectors, v, metric) for v in vectors]) if len(vectors) else np.zeros((0, 0))


def save_distance_matrix(M: np.ndarray, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "value"])
        n = M.shape[0]
        for i in range(n):
            for j in range(i, n):
                w.writerow([i, j, repr(float(M[i, j]))])


def load_distance_matrix(path: str | Path) -> np.ndarray:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        cells = [(int(i), int(j), float(v)) for i, j, v in reader]
    n = max((max(i, j) for i, j, _ in cells), default=-1) + 1
    M = np.zeros((n, n))
    for i, j, v in cells:
        M[i, j] = M[j, i] = v
    return M


def save_clustering(c: Clustering, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "cluster"])
        for i, label in c.assignment.items():
            w.writerow([i, label])


def load_labels(path: str | Path) -> dict[str, int]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return {row[0]: int(row[1]) for row in reader if row}
