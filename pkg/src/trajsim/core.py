"""Trajectory data model, CSV ingestion and synthetic datasets.

Trajectories keep their coordinates in read-only float64 arrays so they can be
shared between workers without copying or defensive locking.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

CSV_HEADER = ("traj_id", "x", "y", "t")


class TrajectoryError(ValueError):
    """Raised when trajectory data violates an invariant."""


class CsvParseError(TrajectoryError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Point:
    x: float
    y: float
    t: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if self.t is not None:
            object.__setattr__(self, "t", float(self.t))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise TrajectoryError(f"non-finite coordinate in {self!r}")
        if self.t is not None and not (math.isfinite(self.t) and self.t >= 0):
            raise TrajectoryError(f"timestamp must be finite and >= 0, got {self.t!r}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """An ordered sequence of planar points, optionally timestamped.

    ``xy`` has shape ``(n, 2)``; ``t`` is ``None`` for paths or an ``(n,)``
    array of non-decreasing seconds.
    """

    id: str
    xy: np.ndarray
    t: np.ndarray | None = None

    def __post_init__(self):
        xy = np.array(self.xy, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(xy)):
            raise TrajectoryError(f"trajectory {self.id!r}: non-finite coordinates")
        xy.flags.writeable = False
        object.__setattr__(self, "xy", xy)
        if self.t is not None:
            t = np.array(self.t, dtype=np.float64).reshape(-1)
            if t.shape[0] != xy.shape[0]:
                raise TrajectoryError(f"trajectory {self.id!r}: {t.shape[0]} timestamps for {xy.shape[0]} points")
            if not np.all(np.isfinite(t)) or np.any(t < 0):
                raise TrajectoryError(f"trajectory {self.id!r}: timestamps must be finite and >= 0")
            if np.any(np.diff(t) < 0):
                raise TrajectoryError(f"trajectory {self.id!r}: timestamps decrease")
            t.flags.writeable = False
            object.__setattr__(self, "t", t)

    @classmethod
    def from_points(cls, id: str, points: Iterable[Point | Sequence[float]]) -> "Trajectory":
        pts = [p if isinstance(p, Point) else Point(*p) for p in points]
        stamped = {p.t is not None for p in pts}
        if len(stamped) > 1:
            raise TrajectoryError(f"trajectory {id!r}: mixes timestamped and untimestamped points")
        xy = np.array([(p.x, p.y) for p in pts], dtype=np.float64).reshape(-1, 2)
        t = np.array([p.t for p in pts], dtype=np.float64) if stamped == {True} else None
        return cls(id, xy, t)

    def __len__(self) -> int:
        return self.xy.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        if self.id != other.id or not np.array_equal(self.xy, other.xy):
            return False
        if (self.t is None) != (other.t is None):
            return False
        return self.t is None or np.array_equal(self.t, other.t)

    __hash__ = None

    @property
    def timestamped(self) -> bool:
        return self.t is not None

    @property
    def points(self) -> list[Point]:
        if self.t is None:
            return [Point(float(x), float(y)) for x, y in self.xy]
        return [Point(float(x), float(y), float(t)) for (x, y), t in zip(self.xy, self.t)]

    @property
    def duration(self) -> float:
        if self.t is None or len(self) == 0:
            return 0.0
        return float(self.t[-1] - self.t[0])

    def __repr__(self):
        kind = "timestamped" if self.timestamped else "path"
        return f"Trajectory({self.id!r}, n={len(self)}, {kind})"


@dataclass(frozen=True)
class Dataset:
    trajectories: tuple[Trajectory, ...] = ()
    source: str = ""
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        object.__setattr__(self, "trajectories", trajs)
        index = {}
        for pos, tr in enumerate(trajs):
            if tr.id in index:
                raise TrajectoryError(f"duplicate trajectory id {tr.id!r}")
            index[tr.id] = pos
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.trajectories)

    def __getitem__(self, i: int) -> Trajectory:
        return self.trajectories[i]

    @property
    def ids(self) -> list[str]:
        return [t.id for t in self.trajectories]

    def get(self, traj_id: str) -> Trajectory:
        return self.trajectories[self._index[traj_id]]

    @property
    def metadata(self) -> dict:
        lengths = [len(t) for t in self.trajectories]
        return {
            "source": self.source,
            "count": len(lengths),
            "points": int(sum(lengths)),
            "min_points": min(lengths, default=0),
            "max_points": max(lengths, default=0),
            "timestamped": bool(lengths) and all(t.timestamped for t in self.trajectories),
        }


def _parse_float(text: str, what: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise CsvParseError(line, f"cannot parse {what} {text!r}") from None
    if not math.isfinite(value):
        raise CsvParseError(line, f"{what} is not finite")
    return value


def load_csv(path: str | Path) -> Dataset:
    """Read a ``traj_id,x,y,t`` CSV into a Dataset.

    Rows of one trajectory must be contiguous and in sequence order; an empty
    ``t`` cell marks an untimestamped point.
    """
    path = Path(path)
    groups: list[tuple[str, list[Point]]] = []
    seen: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return Dataset((), source=str(path))
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise CsvParseError(1, f"expected header {','.join(CSV_HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 4:
                raise CsvParseError(line, f"expected 4 fields, got {len(row)}")
            tid, xs, ys, ts = row
            if not tid:
                raise CsvParseError(line, "empty traj_id")
            x = _parse_float(xs, "x", line)
            y = _parse_float(ys, "y", line)
            t = _parse_float(ts, "t", line) if ts.strip() else None
            if t is not None and t < 0:
                raise CsvParseError(line, "negative timestamp")
            if not groups or groups[-1][0] != tid:
                if tid in seen:
                    raise TrajectoryError(f"line {line}: rows of trajectory {tid!r} are not contiguous")
                seen.add(tid)
                groups.append((tid, []))
            pts = groups[-1][1]
            if pts:
                prev = pts[-1]
                if (prev.t is None) != (t is None):
                    raise TrajectoryError(f"line {line}: trajectory {tid!r} mixes timestamped and untimestamped points")
                if t is not None and t < prev.t:
                    raise TrajectoryError(f"line {line}: trajectory {tid!r} timestamps decrease")
            pts.append(Point(x, y, t))
    return Dataset(tuple(Trajectory.from_points(tid, pts) for tid, pts in groups), source=str(path))


def write_csv(ds: Dataset | Iterable[Trajectory], path: str | Path) -> None:
    # repr() round-trips float64 exactly, which keeps load/write lossless
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for tr in ds:
            if tr.t is None:
                for x, y in tr.xy.tolist():
                    w.writerow((tr.id, repr(x), repr(y), ""))
            else:
                for (x, y), t in zip(tr.xy.tolist(), tr.t.tolist()):
                    w.writerow((tr.id, repr(x), repr(y), repr(t)))


def filter_by_length(ds: Dataset, min_n: int = 1, max_n: float = math.inf) -> Dataset:
    if min_n < 1 or min_n > max_n:
        raise ValueError(f"need 1 <= min_n <= max_n, got {min_n}, {max_n}")
    kept = tuple(t for t in ds if min_n <= len(t) <= max_n)
    return Dataset(kept, source=ds.source)


def _fold(v: np.ndarray, size: float) -> np.ndarray:
    # reflect an unbounded walk into [0, size]
    period = 2.0 * size
    v = np.mod(v, period)
    return size - np.abs(v - size)


def generate_synthetic(
    count: int,
    n_range: tuple[int, int] = (20, 200),
    seed: int = 0,
    timestamped: bool = False,
    *,
    extent: float = 10_000.0,
    step: float = 50.0,
    id_prefix: str = "t",
) -> Dataset:
    """Bounded random walks inside ``[0, extent]^2``.

    Each step adds a Gaussian displacement (sd ``step``) to a slowly varying
    heading so walks look vaguely like vehicle tracks. With ``timestamped`` the
    clock starts at 0 and advances by a uniform 1-30 s per step.
    """
    lo, hi = n_range
    if count < 0 or lo < 1 or hi < lo:
        raise ValueError(f"invalid count/n_range: {count}, {n_range}")
    rng = np.random.default_rng(seed)
    trajs = []
    for i in range(count):
        n = int(rng.integers(lo, hi + 1))
        start = rng.uniform(0.0, extent, size=2)
        heading = rng.uniform(-step, step, size=2)
        steps = rng.normal(0.0, step, size=(n - 1, 2)) + heading
        walk = np.vstack([start, start + np.cumsum(steps, axis=0)])
        xy = _fold(walk, extent)
        t = None
        if timestamped:
            t = np.concatenate([[0.0], np.cumsum(rng.uniform(1.0, 30.0, size=n - 1))])
        trajs.append(Trajectory(f"{id_prefix}{i}", xy, t))
    return Dataset(tuple(trajs), source=f"synthetic(count={count}, n_range={lo},{hi}, seed={seed})")


def sample_pairs(ds: Dataset, n_pairs: int, seed: int = 0) -> list[tuple[Trajectory, Trajectory]]:
    if len(ds) == 0:
        raise ValueError("cannot sample pairs from an empty dataset")
    if n_pairs < 0:
        raise ValueError("n_pairs must be >= 0")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(ds), size=(n_pairs, 2))
    return [(ds[i], ds[j]) for i, j in idx.tolist()]
