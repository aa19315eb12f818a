"""Non-learned trajectory similarity measures (sequential reference versions).

Measures fall into three computational classes:

* linear scan: SPD, CDDS, SAR
* dynamic programming: DTW, discrete Frechet, ERP, EDR, LCSS, STEDR
* enumeration: Hausdorff, OWD

Ground distance is Euclidean everywhere and always evaluated as
``sqrt(dx*dx + dy*dy)`` so that compiled kernels, the pure-Python DP rules and
the parallel engine produce identical floats.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from statistics import NormalDist
from typing import Callable, NamedTuple

import numpy as np

from . import _kernels
from .core import Point, Trajectory

INF = math.inf
# two samples are paired by CDDS when their timestamps differ by at most this
TIME_ALIGN_TOL = 1e-6
# standard deviation below which a SAX dimension is treated as constant
SAX_FLAT_STD = 1e-6


class MeasureError(ValueError):
    """Invalid input or parameters for a measure."""


class Family(str, enum.Enum):
    SCAN = "linear-scan"
    DP = "dp"
    ENUM = "enumeration"


class MeasureKind(str, enum.Enum):
    SPD = "spd"
    CDDS = "cdds"
    SAR = "sar"
    DTW = "dtw"
    FRECHET_DISCRETE = "frechet"
    ERP = "erp"
    EDR = "edr"
    LCSS = "lcss"
    STEDR = "stedr"
    HAUSDORFF = "hausdorff"
    OWD = "owd"

    @property
    def family(self) -> Family:
        return _FAMILY[self]

    @property
    def larger_is_similar(self) -> bool:
        return self in (MeasureKind.CDDS, MeasureKind.SAR, MeasureKind.LCSS)

    @property
    def needs_time(self) -> bool:
        return self in (MeasureKind.CDDS, MeasureKind.SAR, MeasureKind.STEDR)

    @property
    def integer_valued(self) -> bool:
        return self in (MeasureKind.EDR, MeasureKind.LCSS, MeasureKind.STEDR)


_FAMILY = {
    MeasureKind.SPD: Family.SCAN,
    MeasureKind.CDDS: Family.SCAN,
    MeasureKind.SAR: Family.SCAN,
    MeasureKind.DTW: Family.DP,
    MeasureKind.FRECHET_DISCRETE: Family.DP,
    MeasureKind.ERP: Family.DP,
    MeasureKind.EDR: Family.DP,
    MeasureKind.LCSS: Family.DP,
    MeasureKind.STEDR: Family.DP,
    MeasureKind.HAUSDORFF: Family.ENUM,
    MeasureKind.OWD: Family.ENUM,
}

_SAX_FIELDS = ("sax_word_length", "sax_alphabet", "sax_symbol_threshold")
_REQUIRED = {
    MeasureKind.CDDS: {"eps_spatial"},
    MeasureKind.SAR: set(_SAX_FIELDS),
    MeasureKind.ERP: {"gap_point"},
    MeasureKind.EDR: {"eps_spatial"},
    MeasureKind.LCSS: {"eps_spatial"},
    MeasureKind.STEDR: {"eps_spatial", "eps_temporal"},
}

SAX_DEFAULTS = {"sax_word_length": 8, "sax_alphabet": 4, "sax_symbol_threshold": 0}


@dataclass(frozen=True)
class MeasureParams:
    eps_spatial: float | None = None
    eps_temporal: float | None = None
    gap_point: Point | None = None
    sax_word_length: int | None = None
    sax_alphabet: int | None = None
    sax_symbol_threshold: int | None = None

    def __post_init__(self):
        for name in ("eps_spatial", "eps_temporal"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0):
                raise MeasureError(f"{name} must be finite and >= 0, got {v!r}")
        if self.gap_point is not None:
            g = self.gap_point
            if not isinstance(g, Point):
                g = Point(*g)
                object.__setattr__(self, "gap_point", g)
            if g.t is not None:
                raise MeasureError("gap_point must not carry a timestamp")
        if self.sax_word_length is not None and self.sax_word_length < 1:
            raise MeasureError("sax_word_length must be >= 1")
        if self.sax_alphabet is not None and not 2 <= self.sax_alphabet <= 20:
            raise MeasureError("sax_alphabet must lie in [2, 20]")
        if self.sax_symbol_threshold is not None and self.sax_symbol_threshold < 0:
            raise MeasureError("sax_symbol_threshold must be >= 0")

    def present(self) -> set[str]:
        return {f.name for f in fields(self) if getattr(self, f.name) is not None}


@dataclass(frozen=True)
class MeasureSpec:
    kind: MeasureKind
    params: MeasureParams = MeasureParams()

    def __post_init__(self):
        object.__setattr__(self, "kind", MeasureKind(self.kind))
        required = _REQUIRED.get(self.kind, set())
        present = self.params.present()
        missing = required - present
        if missing:
            raise MeasureError(f"{self.kind.value} requires {', '.join(sorted(missing))}")
        extra = present - required
        if extra:
            raise MeasureError(f"{self.kind.value} does not take {', '.join(sorted(extra))}")

    @classmethod
    def of(cls, kind: MeasureKind | str, **params) -> "MeasureSpec":
        """Build a spec, filling SAX defaults for SAR."""
        kind = MeasureKind(kind)
        if kind is MeasureKind.SAR:
            params = {**SAX_DEFAULTS, **params}
        return cls(kind, MeasureParams(**params))

    @property
    def family(self) -> Family:
        return self.kind.family

    @property
    def larger_is_similar(self) -> bool:
        return self.kind.larger_is_similar


# --- helpers ---------------------------------------------------------------

def point_distance(ax: float, ay: float, bx: float, by: float) -> float:
    dx = ax - bx
    dy = ay - by
    return math.sqrt(dx * dx + dy * dy)


def exact_partials(values) -> list[float]:
    """Non-overlapping partials whose exact sum equals ``sum(values)``.

    Shewchuk's algorithm; ``math.fsum`` of the concatenated partials of several
    chunks is the correctly rounded total, independent of how the input was
    chunked.
    """
    partials: list[float] = []
    for x in values:
        i = 0
        for y in partials:
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo:
                partials[i] = lo
                i += 1
            x = hi
        partials[i:] = [x]
    return partials


def _nonempty(*trajs: Trajectory) -> None:
    for tr in trajs:
        if len(tr) == 0:
            raise MeasureError(f"trajectory {tr.id!r} is empty")


def _timestamped(*trajs: Trajectory) -> None:
    for tr in trajs:
        if tr.t is None:
            raise MeasureError(f"trajectory {tr.id!r} has no timestamps")


# --- linear scan -------------------------------------------------------------

def spd_terms(T: Trajectory, T2: Trajectory, idx=None) -> list[float]:
    a, b = T.xy.tolist(), T2.xy.tolist()
    rng = range(len(a)) if idx is None else idx
    return [point_distance(a[i][0], a[i][1], b[i][0], b[i][1]) for i in rng]


def spd(T: Trajectory, T2: Trajectory) -> float:
    """Sum of distances between points with equal index."""
    if len(T) != len(T2):
        raise MeasureError(f"SPD needs equal lengths, got {len(T)} and {len(T2)}")
    return math.fsum(spd_terms(T, T2))


def pair_by_time(T: Trajectory, T2: Trajectory, tol: float = TIME_ALIGN_TOL) -> list[tuple[int, int]]:
    """Two-pointer merge pairing samples whose timestamps agree within ``tol``."""
    ta, tb = T.t.tolist(), T2.t.tolist()
    i = j = 0
    out = []
    while i < len(ta) and j < len(tb):
        if abs(ta[i] - tb[j]) <= tol:
            out.append((i, j))
            i += 1
            j += 1
        elif ta[i] < tb[j]:
            i += 1
        else:
            j += 1
    return out


def cdds_flags(T: Trajectory, T2: Trajectory, pairs, eps: float, idx=None) -> list[bool]:
    a, b = T.xy.tolist(), T2.xy.tolist()
    rng = range(len(pairs)) if idx is None else idx
    out = []
    for k in rng:
        i, j = pairs[k]
        out.append(point_distance(a[i][0], a[i][1], b[j][0], b[j][1]) <= eps)
    return out


def cdds_aggregate(T: Trajectory, T2: Trajectory, pairs, flags) -> float:
    """Total duration of maximal runs of consecutive close paired samples."""
    ta, tb = T.t.tolist(), T2.t.tolist()
    spans = []
    start = None
    for k, close in enumerate(flags):
        if close and start is None:
            start = k
        if start is not None and (not close or k == len(flags) - 1):
            end = k if close else k - 1
            if end > start:
                i0, j0 = pairs[start]
                i1, j1 = pairs[end]
                spans.append((ta[i1] + tb[j1]) / 2 - (ta[i0] + tb[j0]) / 2)
            start = None
    return math.fsum(spans)


def cdds(T: Trajectory, T2: Trajectory, eps: float) -> float:
    """Close-distance duration: time both trajectories stay within ``eps``."""
    _timestamped(T, T2)
    pairs = pair_by_time(T, T2)
    return cdds_aggregate(T, T2, pairs, cdds_flags(T, T2, pairs, eps))


class SaxWord(NamedTuple):
    bounds: list[float]      # word_length + 1 segment boundaries in seconds
    symbols: list[tuple[int, int]]  # (x symbol, y symbol) per segment


def sax_breakpoints(alphabet: int) -> list[float]:
    nd = NormalDist()
    return [nd.inv_cdf(k / alphabet) for k in range(1, alphabet)]


def sax_word(T: Trajectory, word_length: int, alphabet: int) -> SaxWord:
    """Equal-duration PAA of the z-normalised x and y series, then symbols.

    A segment that contains no sample takes the linearly interpolated value at
    its mid time.
    """
    if alphabet < 2:
        raise MeasureError("SAX alphabet must be >= 2")
    _timestamped(T)
    _nonempty(T)
    t = T.t
    t0, t1 = float(t[0]), float(t[-1])
    dur = t1 - t0
    bounds = [t0 + dur * k / word_length for k in range(word_length)] + [t1]
    breaks = np.asarray(sax_breakpoints(alphabet))
    if dur > 0:
        seg = np.minimum(((t - t0) / dur * word_length).astype(np.int64), word_length - 1)
    else:
        seg = np.zeros(len(t), dtype=np.int64)
    mids = (np.asarray(bounds[:-1]) + np.asarray(bounds[1:])) / 2
    counts = np.bincount(seg, minlength=word_length)
    symbols = []
    for dim in range(2):
        v = T.xy[:, dim]
        sd = v.std()
        z = (v - v.mean()) / sd if sd >= SAX_FLAT_STD else np.zeros_like(v)
        sums = np.bincount(seg, weights=z, minlength=word_length)
        paa = np.divide(sums, counts, out=np.zeros(word_length), where=counts > 0)
        empty = counts == 0
        if empty.any():
            paa[empty] = np.interp(mids[empty], t, z)
        symbols.append(np.searchsorted(breaks, paa, side="right").tolist())
    return SaxWord(bounds, list(zip(symbols[0], symbols[1])))


def sar_alignment(wa: SaxWord, wb: SaxWord) -> list[tuple[int, int, float]]:
    """Merge the two segment sequences in time; yields (k, l, overlap seconds)."""
    out = []
    k = l = 0
    na, nb = len(wa.symbols), len(wb.symbols)
    while k < na and l < nb:
        lo = max(wa.bounds[k], wb.bounds[l])
        hi = min(wa.bounds[k + 1], wb.bounds[l + 1])
        if hi > lo:
            out.append((k, l, hi - lo))
        if wa.bounds[k + 1] <= wb.bounds[l + 1]:
            k += 1
        else:
            l += 1
    return out


def sar_terms(wa: SaxWord, wb: SaxWord, aligned, threshold: int, idx=None) -> list[float]:
    rng = range(len(aligned)) if idx is None else idx
    out = []
    for q in rng:
        k, l, overlap = aligned[q]
        (ax, ay), (bx, by) = wa.symbols[k], wb.symbols[l]
        if max(abs(ax - bx), abs(ay - by)) <= threshold:
            out.append(overlap)
    return out


def sar(T: Trajectory, T2: Trajectory, params: MeasureParams) -> float:
    """Duration over which the SAX words of both trajectories agree."""
    _timestamped(T, T2)
    _nonempty(T, T2)
    wa = sax_word(T, params.sax_word_length, params.sax_alphabet)
    wb = sax_word(T2, params.sax_word_length, params.sax_alphabet)
    aligned = sar_alignment(wa, wb)
    return math.fsum(sar_terms(wa, wb, aligned, params.sax_symbol_threshold))


# --- dynamic programming -----------------------------------------------------

def dtw(T: Trajectory, T2: Trajectory) -> float:
    _nonempty(T, T2)
    return float(_kernels.dtw(T.xy, T2.xy))


def frechet_discrete(T: Trajectory, T2: Trajectory) -> float:
    _nonempty(T, T2)
    return float(_kernels.frechet(T.xy, T2.xy))


def erp(T: Trajectory, T2: Trajectory, g: Point | tuple = Point(0.0, 0.0)) -> float:
    g = g if isinstance(g, Point) else Point(*g)
    return float(_kernels.erp(T.xy, T2.xy, g.x, g.y))


def edr(T: Trajectory, T2: Trajectory, eps: float) -> int:
    return int(_kernels.edr(T.xy, T2.xy, eps))


def lcss(T: Trajectory, T2: Trajectory, eps: float) -> int:
    return int(_kernels.lcss(T.xy, T2.xy, eps))


def stedr(T: Trajectory, T2: Trajectory, eps: float, eps_t: float) -> int:
    _timestamped(T, T2)
    return int(_kernels.stedr(T.xy, T2.xy, T.t, T2.t, eps, eps_t))


class DpRule(NamedTuple):
    """Cell recurrences of one DP measure on one trajectory pair.

    ``boundary(i, j, prev)`` gives row-0 / column-0 cells, where ``prev`` is the
    preceding boundary cell (``None`` at the origin). ``cell(i, j, diag, up,
    left)`` gives interior cells from their three upstream neighbours.
    """

    boundary: Callable[[int, int, float | None], float]
    cell: Callable[[int, int, float, float, float], float]
    integer: bool


def dp_rule(spec: MeasureSpec, T: Trajectory, T2: Trajectory) -> DpRule:
    kind = spec.kind
    if kind.family is not Family.DP:
        raise MeasureError(f"{kind.value} is not a DP measure")
    if kind in (MeasureKind.DTW, MeasureKind.FRECHET_DISCRETE):
        _nonempty(T, T2)
    if kind.needs_time:
        _timestamped(T, T2)
    p = spec.params
    px, py = T.xy[:, 0].tolist(), T.xy[:, 1].tolist()
    qx, qy = T2.xy[:, 0].tolist(), T2.xy[:, 1].tolist()
    sqrt = math.sqrt

    if kind is MeasureKind.DTW or kind is MeasureKind.FRECHET_DISCRETE:
        def boundary(i, j, prev):
            return 0.0 if i == 0 and j == 0 else INF

        if kind is MeasureKind.DTW:
            def cell(i, j, diag, up, left):
                dx = px[i - 1] - qx[j - 1]
                dy = py[i - 1] - qy[j - 1]
                return sqrt(dx * dx + dy * dy) + min(diag, up, left)
        else:
            def cell(i, j, diag, up, left):
                dx = px[i - 1] - qx[j - 1]
                dy = py[i - 1] - qy[j - 1]
                return max(sqrt(dx * dx + dy * dy), min(diag, up, left))
        return DpRule(boundary, cell, False)

    if kind is MeasureKind.ERP:
        gx, gy = p.gap_point.x, p.gap_point.y
        gp = [point_distance(x, y, gx, gy) for x, y in zip(px, py)]
        gq = [point_distance(x, y, gx, gy) for x, y in zip(qx, qy)]

        def boundary(i, j, prev):
            if i == 0 and j == 0:
                return 0.0
            return prev + (gp[i - 1] if j == 0 else gq[j - 1])

        def cell(i, j, diag, up, left):
            dx = px[i - 1] - qx[j - 1]
            dy = py[i - 1] - qy[j - 1]
            return min(diag + sqrt(dx * dx + dy * dy), up + gp[i - 1], left + gq[j - 1])
        return DpRule(boundary, cell, False)

    eps = p.eps_spatial
    if kind is MeasureKind.LCSS:
        def boundary(i, j, prev):
            return 0.0

        def cell(i, j, diag, up, left):
            dx = px[i - 1] - qx[j - 1]
            dy = py[i - 1] - qy[j - 1]
            if sqrt(dx * dx + dy * dy) <= eps:
                return diag + 1.0
            return max(up, left)
        return DpRule(boundary, cell, True)

    def boundary(i, j, prev):
        return float(i + j)

    if kind is MeasureKind.EDR:
        def cell(i, j, diag, up, left):
            dx = px[i - 1] - qx[j - 1]
            dy = py[i - 1] - qy[j - 1]
            sub = 0.0 if sqrt(dx * dx + dy * dy) <= eps else 1.0
            return min(diag + sub, up + 1.0, left + 1.0)
    else:
        eps_t = p.eps_temporal
        tp, tq = T.t.tolist(), T2.t.tolist()

        def cell(i, j, diag, up, left):
            dx = px[i - 1] - qx[j - 1]
            dy = py[i - 1] - qy[j - 1]
            ok = sqrt(dx * dx + dy * dy) <= eps and abs(tp[i - 1] - tq[j - 1]) <= eps_t
            return min(diag + (0.0 if ok else 1.0), up + 1.0, left + 1.0)
    return DpRule(boundary, cell, True)


@dataclass(frozen=True)
class ScoreMatrix:
    values: np.ndarray

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def score(self) -> float:
        return float(self.values[-1, -1])


def score_matrix(spec: MeasureSpec, T: Trajectory, T2: Trajectory) -> ScoreMatrix:
    """Full (|T|+1) x (|T2|+1) DP table, filled row by row. Diagnostic only."""
    rule = dp_rule(spec, T, T2)
    n, m = len(T), len(T2)
    M = np.empty((n + 1, m + 1))
    for i in range(n + 1):
        for j in range(m + 1):
            if i == 0 and j == 0:
                M[i, j] = rule.boundary(0, 0, None)
            elif i == 0:
                M[i, j] = rule.boundary(0, j, M[0, j - 1])
            elif j == 0:
                M[i, j] = rule.boundary(i, 0, M[i - 1, 0])
            else:
                M[i, j] = rule.cell(i, j, M[i - 1, j - 1], M[i - 1, j], M[i, j - 1])
    return ScoreMatrix(M)


# --- enumeration -------------------------------------------------------------

def hausdorff(T: Trajectory, T2: Trajectory) -> float:
    _nonempty(T, T2)
    return float(_kernels.hausdorff(T.xy, T2.xy))


def owd(T: Trajectory, T2: Trajectory) -> float:
    """Symmetric one-way distance: mean of the two average nearest-point distances."""
    _nonempty(T, T2)
    row_min, col_min = _kernels.nearest_distances(T.xy, T2.xy)
    return (math.fsum(row_min.tolist()) / len(T) + math.fsum(col_min.tolist()) / len(T2)) / 2


# --- dispatch ----------------------------------------------------------------

def evaluate(spec: MeasureSpec, T: Trajectory, T2: Trajectory) -> float:
    """Score of ``spec`` on (T, T2); ints for EDR/LCSS/STEDR, floats otherwise."""
    kind, p = spec.kind, spec.params
    if kind is MeasureKind.SPD:
        return spd(T, T2)
    if kind is MeasureKind.CDDS:
        return cdds(T, T2, p.eps_spatial)
    if kind is MeasureKind.SAR:
        return sar(T, T2, p)
    if kind is MeasureKind.DTW:
        return dtw(T, T2)
    if kind is MeasureKind.FRECHET_DISCRETE:
        return frechet_discrete(T, T2)
    if kind is MeasureKind.ERP:
        return erp(T, T2, p.gap_point)
    if kind is MeasureKind.EDR:
        return edr(T, T2, p.eps_spatial)
    if kind is MeasureKind.LCSS:
        return lcss(T, T2, p.eps_spatial)
    if kind is MeasureKind.STEDR:
        return stedr(T, T2, p.eps_spatial, p.eps_temporal)
    if kind is MeasureKind.HAUSDORFF:
        return hausdorff(T, T2)
    if kind is MeasureKind.OWD:
        return owd(T, T2)
    raise MeasureError(f"unknown measure {kind!r}")
