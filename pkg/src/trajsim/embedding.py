"""Two-layer feed-forward trajectory encoder and embedding storage.

The encoder flattens the first ``L`` points to a ``2L`` vector (padding short
trajectories with their last point), applies ``ReLU(x W1 + b1)`` and a second
affine layer to reach ``d`` dimensions. Weights are never trained here: they are
loaded from a file or drawn from a seeded uniform distribution.
"""

from __future__ import annotations

import csv
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import Dataset, Trajectory
from .timing import Stopwatch

DEFAULT_D = 128
DEFAULT_L = 200


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Embedding:
    id: str
    vec: np.ndarray

    def __post_init__(self):
        v = np.array(self.vec, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise EmbeddingError(f"embedding {self.id!r} has non-finite components")
        v.flags.writeable = False
        object.__setattr__(self, "vec", v)

    @property
    def d(self) -> int:
        return self.vec.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Embedding):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.vec, other.vec)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FfnWeights:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name in ("W1", "b1", "W2", "b2"):
            a = np.array(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(a)):
                raise EmbeddingError(f"{name} has non-finite entries")
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        two_l, d = self.W1.shape
        if two_l % 2 or self.b1.shape != (d,) or self.W2.shape != (d, d) or self.b2.shape != (d,):
            raise EmbeddingError(
                f"inconsistent shapes W1{self.W1.shape} b1{self.b1.shape} W2{self.W2.shape} b2{self.b2.shape}"
            )

    @property
    def d(self) -> int:
        return self.W1.shape[1]

    @property
    def L(self) -> int:
        return self.W1.shape[0] // 2

    def __eq__(self, other):
        if not isinstance(other, FfnWeights):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in ("W1", "b1", "W2", "b2"))

    __hash__ = None

    @classmethod
    def from_seed(cls, seed: int, d: int = DEFAULT_D, L: int = DEFAULT_L) -> "FfnWeights":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation."""
        rng = np.random.default_rng(seed)
        a1, a2 = 1.0 / math.sqrt(2 * L), 1.0 / math.sqrt(d)
        return cls(
            rng.uniform(-a1, a1, size=(2 * L, d)),
            rng.uniform(-a1, a1, size=d),
            rng.uniform(-a2, a2, size=(d, d)),
            rng.uniform(-a2, a2, size=d),
        )

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for name in ("W1", "b1", "W2", "b2"):
                a = getattr(self, name)
                fh.write(f"{name} {' '.join(str(s) for s in a.shape)}\n")
                for row in np.atleast_2d(a).tolist():
                    fh.write(",".join(repr(v) for v in row) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FfnWeights":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        arrays = {}
        pos = 0
        for name in ("W1", "b1", "W2", "b2"):
            if pos >= len(lines):
                raise EmbeddingError(f"weights file ends before {name}")
            head = lines[pos].split()
            if not head or head[0] != name:
                raise EmbeddingError(f"line {pos + 1}: expected block {name}")
            try:
                shape = tuple(int(s) for s in head[1:])
                nrows = shape[0] if len(shape) == 2 else 1
                rows = [[float(v) for v in line.split(",")] for line in lines[pos + 1:pos + 1 + nrows]]
                arrays[name] = np.array(rows, dtype=np.float64).reshape(shape)
            except ValueError as exc:
                raise EmbeddingError(f"block {name} starting at line {pos + 1}: {exc}") from None
            pos += 1 + nrows
        return cls(**arrays)


def flatten(T: Trajectory, L: int) -> np.ndarray:
    if len(T) == 0:
        raise EmbeddingError(f"trajectory {T.id!r} is empty")
    xy = T.xy[:L]
    if xy.shape[0] < L:
        xy = np.vstack([xy, np.repeat(xy[-1:], L - xy.shape[0], axis=0)])
    return xy.reshape(-1)


def ffn_encode(T: Trajectory, w: FfnWeights) -> Embedding:
    x = flatten(T, w.L)
    h = np.maximum(x @ w.W1 + w.b1, 0.0)
    return Embedding(T.id, h @ w.W2 + w.b2)


def similarity(h: Embedding, h2: Embedding) -> float:
    """``1 - ||h - h2||_1``."""
    if h.d != h2.d:
        raise EmbeddingError(f"dimension mismatch: {h.d} vs {h2.d}")
    return 1.0 - float(np.abs(h.vec - h2.vec).sum())


@dataclass
class EmbeddingStore:
    d: int
    entries: dict[str, Embedding] = field(default_factory=dict)
    emb_s: float = 0.0

    def add(self, e: Embedding) -> None:
        if e.d != self.d:
            raise EmbeddingError(f"embedding {e.id!r} has dimension {e.d}, store has {self.d}")
        if e.id in self.entries:
            raise EmbeddingError(f"duplicate embedding id {e.id!r}")
        self.entries[e.id] = e

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries.values())

    def __getitem__(self, key: str) -> Embedding:
        return self.entries[key]

    def __eq__(self, other):
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return self.d == other.d and list(self.entries) == list(other.entries) and all(
            self.entries[k] == other.entries[k] for k in self.entries
        )

    @property
    def ids(self) -> list[str]:
        return list(self.entries)

    def matrix(self) -> np.ndarray:
        if not self.entries:
            return np.empty((0, self.d))
        return np.vstack([e.vec for e in self.entries.values()])

    @classmethod
    def from_embeddings(cls, d: int, embeddings: Iterable[Embedding]) -> "EmbeddingStore":
        store = cls(d)
        for e in embeddings:
            store.add(e)
        return store


_POOL_WEIGHTS: dict = {}


def _encode_chunk(trajs: list[Trajectory]) -> list[Embedding]:
    w = _POOL_WEIGHTS["w"]
    return [ffn_encode(t, w) for t in trajs]


def encode_dataset(ds: Dataset | Iterable[Trajectory], w: FfnWeights, workers: int = 1) -> EmbeddingStore:
    """One embedding per trajectory, encoded individually so results never depend
    on batching or worker count. Wall time lands in ``store.emb_s``."""
    trajs = list(ds)
    with Stopwatch() as sw:
        if workers <= 1 or len(trajs) < 2:
            embs = [ffn_encode(t, w) for t in trajs]
        else:
            step = -(-len(trajs) // workers)
            chunks = [trajs[i:i + step] for i in range(0, len(trajs), step)]
            _POOL_WEIGHTS["w"] = w
            try:
                ctx = multiprocessing.get_context("fork")
                with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
                    embs = [e for part in ex.map(_encode_chunk, chunks) for e in part]
            finally:
                _POOL_WEIGHTS.clear()
        store = EmbeddingStore.from_embeddings(w.d, embs)
    store.emb_s = sw.elapsed
    return store


def save_store(store: EmbeddingStore, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["id"] + [f"v{k}" for k in range(1, store.d + 1)])
        for e in store:
            wr.writerow([e.id] + [repr(v) for v in e.vec.tolist()])


def load_store(path: str | Path) -> EmbeddingStore:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "id":
            raise EmbeddingError("embedding CSV must start with an 'id,v1,...,vd' header")
        d = len(header) - 1
        store = EmbeddingStore(d)
        for row in reader:
            if not row:
                continue
            if len(row) != d + 1:
                raise EmbeddingError(f"line {reader.line_num}: expected {d} values, got {len(row) - 1}")
            store.add(Embedding(row[0], [float(v) for v in row[1:]]))
    return store
