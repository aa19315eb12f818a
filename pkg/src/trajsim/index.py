"""FLAT and IVF vector indices for embedding-space kNN.

Rankings are by ascending distance under the index metric (L1 or L2) with
ties broken by ascending id. IVF coarse quantisation always uses L2.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding import Embedding, EmbeddingStore, load_store, save_store

MOVE_TOL = 1e-9


class VectorIndexError(ValueError):
    pass


class Metric(str, enum.Enum):
    L1 = "l1"
    L2 = "l2"


def distances(X: np.ndarray, q: np.ndarray, metric: Metric) -> np.ndarray:
    """Row-wise distances from ``q``; the single code path every index uses."""
    diff = X - q
    if metric is Metric.L1:
        return np.abs(diff).sum(axis=1)
    return np.sqrt((diff * diff).sum(axis=1))


def _ranked(ids: np.ndarray, dists: np.ndarray, k: int) -> list[tuple[str, float]]:
    order = np.lexsort((ids, dists))[:k]
    return [(str(ids[i]), float(dists[i])) for i in order]


def _query_vec(q, d: int) -> np.ndarray:
    v = q.vec if isinstance(q, Embedding) else np.asarray(q, dtype=np.float64).reshape(-1)
    if v.shape[0] != d:
        raise VectorIndexError(f"query has dimension {v.shape[0]}, index has {d}")
    return v


@dataclass(eq=False)
class FlatIndex:
    metric: Metric
    ids: np.ndarray
    vectors: np.ndarray

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(eq=False)
class IvfIndex:
    metric: Metric
    ids: np.ndarray
    vectors: np.ndarray
    centroids: np.ndarray
    lists: list[np.ndarray]
    nprobe_default: int
    seed: int
    kmeans_iters: int

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    @property
    def nlist(self) -> int:
        return self.centroids.shape[0]

    def __len__(self) -> int:
        return len(self.ids)


def _store_arrays(store: EmbeddingStore) -> tuple[np.ndarray, np.ndarray]:
    if len(store) == 0:
        raise VectorIndexError("cannot index an empty store")
    return np.array(store.ids, dtype=str), store.matrix()


def build_flat(store: EmbeddingStore, metric: Metric | str = Metric.L2) -> FlatIndex:
    ids, X = _store_arrays(store)
    return FlatIndex(Metric(metric), ids, X)


def knn_flat(idx: FlatIndex, q, k: int) -> list[tuple[str, float]]:
    if not 1 <= k <= len(idx):
        raise VectorIndexError(f"k must lie in [1, {len(idx)}], got {k}")
    v = _query_vec(q, idx.d)
    return _ranked(idx.ids, distances(idx.vectors, v, idx.metric), k)


def default_nlist(n: int) -> int:
    return min(max(1, round(math.sqrt(n))), n)


def default_nprobe(nlist: int) -> int:
    return max(1, nlist // 10)


def _sq_to_centroids(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    out = np.empty((X.shape[0], C.shape[0]))
    for c in range(C.shape[0]):
        diff = X - C[c]
        out[:, c] = (diff * diff).sum(axis=1)
    return out


def kmeans(X: np.ndarray, k: int, iters: int, seed: int) -> np.ndarray:
    """k-means++ seeding followed by Lloyd iterations; returns centroids."""
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            cum = np.cumsum(d2)
            pick = int(np.searchsorted(cum, rng.random() * total, side="right"))
            pick = min(pick, int(np.flatnonzero(d2 > 0)[-1]))
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            pick = int(free[rng.integers(len(free))])
        chosen.append(pick)
        d2 = np.minimum(d2, ((X - X[pick]) ** 2).sum(axis=1))
    C = X[chosen].copy()
    x_sq = (X * X).sum(axis=1)
    for _ in range(iters):
        scores = x_sq[:, None] - 2.0 * (X @ C.T) + (C * C).sum(axis=1)[None, :]
        assign = scores.argmin(axis=1)
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(C)
        np.add.at(sums, assign, X)
        newC = C.copy()
        nz = counts > 0
        newC[nz] = sums[nz] / counts[nz, None]
        move = np.sqrt(((newC - C) ** 2).sum(axis=1)).max()
        C = newC
        if move < MOVE_TOL:
            break
    return C


def build_ivf(
    store: EmbeddingStore,
    metric: Metric | str = Metric.L2,
    nlist: int | None = None,
    kmeans_iters: int = 20,
    seed: int = 0,
    nprobe_default: int | None = None,
) -> IvfIndex:
    ids, X = _store_arrays(store)
    n = len(ids)
    nlist = default_nlist(n) if nlist is None else nlist
    if not 1 <= nlist <= n:
        raise VectorIndexError(f"nlist must lie in [1, {n}], got {nlist}")
    C = kmeans(X, nlist, kmeans_iters, seed)
    assign = _sq_to_centroids(X, C).argmin(axis=1)
    lists = [np.flatnonzero(assign == c) for c in range(nlist)]
    nprobe = default_nprobe(nlist) if nprobe_default is None else nprobe_default
    if not 1 <= nprobe <= nlist:
        raise VectorIndexError(f"nprobe_default must lie in [1, {nlist}]")
    return IvfIndex(Metric(metric), ids, X, C, lists, nprobe, seed, kmeans_iters)


def probe_order(idx: IvfIndex, v: np.ndarray) -> np.ndarray:
    diff = idx.centroids - v
    cd = (diff * diff).sum(axis=1)
    return np.lexsort((np.arange(idx.nlist), cd))


def knn_ivf(idx: IvfIndex, q, k: int, nprobe: int | None = None) -> list[tuple[str, float]]:
    nprobe = idx.nprobe_default if nprobe is None else nprobe
    if not 1 <= nprobe <= idx.nlist:
        raise VectorIndexError(f"nprobe must lie in [1, {idx.nlist}], got {nprobe}")
    if k < 1:
        raise VectorIndexError("k must be >= 1")
    v = _query_vec(q, idx.d)
    probed = [idx.lists[c] for c in probe_order(idx, v)[:nprobe]]
    cand = np.concatenate(probed) if probed else np.empty(0, dtype=np.int64)
    if cand.size == 0:
        return []
    return _ranked(idx.ids[cand], distances(idx.vectors[cand], v, idx.metric), k)


def knn(idx: FlatIndex | IvfIndex, q, k: int, nprobe: int | None = None) -> list[tuple[str, float]]:
    if isinstance(idx, IvfIndex):
        return knn_ivf(idx, q, k, nprobe)
    return knn_flat(idx, q, k)


# --- persistence ----------------------------------------------------------------

def _store_of(idx: FlatIndex | IvfIndex) -> EmbeddingStore:
    return EmbeddingStore.from_embeddings(idx.d, (Embedding(i, v) for i, v in zip(idx.ids.tolist(), idx.vectors)))


def save_index(idx: FlatIndex | IvfIndex, directory: str | Path) -> None:
    """Directory layout: embeddings.csv, meta.json and, for IVF, centroids.csv
    and lists.csv (``id,list``)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    save_store(_store_of(idx), out / "embeddings.csv")
    meta = {"kind": "flat", "metric": idx.metric.value, "d": idx.d, "count": len(idx)}
    if isinstance(idx, IvfIndex):
        meta.update(kind="ivf", nlist=idx.nlist, nprobe_default=idx.nprobe_default,
                    seed=idx.seed, kmeans_iters=idx.kmeans_iters)
        with (out / "centroids.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in idx.centroids.tolist():
                w.writerow([repr(v) for v in row])
        with (out / "lists.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "list"])
            for c, members in enumerate(idx.lists):
                for pos in members.tolist():
                    w.writerow([idx.ids[pos], c])
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_index(directory: str | Path) -> FlatIndex | IvfIndex:
    src = Path(directory)
    meta = json.loads((src / "meta.json").read_text(encoding="utf-8"))
    store = load_store(src / "embeddings.csv")
    if store.d != meta["d"] or len(store) != meta["count"]:
        raise VectorIndexError("embeddings.csv does not match meta.json")
    ids, X = _store_arrays(store)
    metric = Metric(meta["metric"])
    if meta["kind"] == "flat":
        return FlatIndex(metric, ids, X)
    with (src / "centroids.csv").open(newline="", encoding="utf-8") as fh:
        C = np.array([[float(v) for v in row] for row in csv.reader(fh) if row], dtype=np.float64)
    pos = {i: p for p, i in enumerate(ids.tolist())}
    members: list[list[int]] = [[] for _ in range(meta["nlist"])]
    with (src / "lists.csv").open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if row:
                members[int(row[1])].append(pos[row[0]])
    lists = [np.array(m, dtype=np.int64) for m in members]
    return IvfIndex(metric, ids, X, C.reshape(meta["nlist"], -1), lists,
                    meta["nprobe_default"], meta["seed"], meta["kmeans_iters"])
