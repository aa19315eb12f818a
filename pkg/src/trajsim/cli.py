"""``trajsim`` command line: dataset generation, embedding, indexing and benchmarks.

Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import signal
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import _kernels
from .analytics import (
    embedding_distance_matrix,
    hit_ratio,
    kmedoids,
    knn_embedding,
    knn_exact_many,
    pair_recall,
    precompute_distance_matrix,
    rand_index,
    save_clustering,
    save_distance_matrix,
)
from .core import Dataset, TrajectoryError, generate_synthetic, load_csv, sample_pairs, write_csv
from .embedding import DEFAULT_D, EmbeddingError, FfnWeights, encode_dataset, load_store, save_store
from .index import (
    IvfIndex,
    Metric,
    VectorIndexError,
    build_flat,
    build_ivf,
    load_index,
    save_index,
)
from .measures import MeasureError, MeasureKind, MeasureSpec, Point
from .parallel import BatchError, ParallelConfig, default_workers, run_batch
from .report import STATUS_OT, BenchReport, measure_config
from .timing import Stopwatch, TimingBreakdown

DEFAULT_WORKERS_PER_PAIR = 64
DEFAULT_BATCH = 512
DEFAULT_REPS = 5


class UsageError(Exception):
    pass


class Overtime(BaseException):
    """Deadline signal; a BaseException so generic error handlers let it through."""


# --- argument helpers -------------------------------------------------------------

def _n_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}") from None
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"need 1 <= LO <= HI, got {text!r}")
    return lo, hi


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _add_data(p: argparse.ArgumentParser, synthetic_default: int | None = None) -> None:
    g = p.add_argument_group("dataset")
    g.add_argument("--data", type=Path, help="trajectory CSV (traj_id,x,y,t)")
    g.add_argument("--synthetic", type=int, default=synthetic_default, metavar="N",
                   help="generate N synthetic trajectories instead of reading --data")
    g.add_argument("--n-range", type=_n_range, default=(20, 200), metavar="LO,HI")
    g.add_argument("--timestamped", action="store_true")
    g.add_argument("--seed", type=int, default=0)


def _add_measure(p: argparse.ArgumentParser, default: str | None = "dtw") -> None:
    g = p.add_argument_group("measure")
    g.add_argument("--measure", choices=[k.value for k in MeasureKind], default=default)
    g.add_argument("--eps", type=float, help="spatial threshold (EDR, LCSS, STEDR, CDDS)")
    g.add_argument("--eps-t", type=float, help="temporal threshold (STEDR)")
    g.add_argument("--gap-x", type=float, help="ERP gap point x (default 0)")
    g.add_argument("--gap-y", type=float, help="ERP gap point y (default 0)")
    g.add_argument("--sax-word-length", type=int)
    g.add_argument("--sax-alphabet", type=int)
    g.add_argument("--sax-threshold", type=int)


def _add_workers(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=_positive, help="batch workers (env TRAJSIM_WORKERS, else CPU count)")
    p.add_argument("--workers-per-pair", type=_positive, default=DEFAULT_WORKERS_PER_PAIR,
                   help="n_c, workers cooperating on one pair")


def _add_weights(p: argparse.ArgumentParser) -> None:
    p.add_argument("--weights", type=Path, help="FFN weights file")
    p.add_argument("--weights-seed", type=int, help="draw seeded FFN weights")
    p.add_argument("--d", type=_positive, default=DEFAULT_D, help="embedding dimension")


def _add_bench(p: argparse.ArgumentParser) -> None:
    p.add_argument("--reps", type=_positive, default=DEFAULT_REPS)
    p.add_argument("--timeout-s", type=float, help="abort a run after this many seconds and record OT")
    p.add_argument("--out", type=Path, required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajsim", description="Trajectory similarity benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic dataset CSV")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--n-range", type=_n_range, default=(20, 200), metavar="LO,HI")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timestamped", action="store_true")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("sim", help="pairwise similarity sweep")
    _add_data(p)
    _add_measure(p)
    _add_workers(p)
    p.add_argument("--pairs", type=_positive, default=1000)
    p.add_argument("--mode", choices=["single", "batched"], default="batched")
    p.add_argument("--batch-size", type=_positive, default=DEFAULT_BATCH)
    _add_bench(p)

    p = sub.add_parser("embed", help="encode a dataset with FFN weights")
    _add_data(p)
    _add_weights(p)
    p.add_argument("--workers", type=_positive)
    p.add_argument("--save-weights", type=Path, help="also write the weights used")
    p.add_argument("--out", type=Path, required=True, help="embedding CSV")

    p = sub.add_parser("index", help="build a FLAT or IVF index from an embedding CSV")
    p.add_argument("--embeddings", type=Path, required=True)
    p.add_argument("--index", choices=["flat", "ivf"], default="ivf")
    p.add_argument("--metric", choices=[m.value for m in Metric], default="l2")
    p.add_argument("--nlist", type=_positive)
    p.add_argument("--nprobe", type=_positive, help="default nprobe stored with the index")
    p.add_argument("--kmeans-iters", type=_positive, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="index directory")

    p = sub.add_parser("knn", help="kNN query benchmark with HR@k against exact ground truth")
    _add_data(p)
    _add_measure(p)
    _add_workers(p)
    _add_weights(p)
    p.add_argument("--queries", type=Path, help="query CSV, disjoint from the data")
    p.add_argument("--n-queries", type=_positive, default=10,
                   help="synthetic queries drawn outside the data when --queries is absent")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--index", choices=["flat", "ivf"], default="ivf")
    p.add_argument("--index-dir", type=Path, help="prebuilt index directory (skips encoding the data)")
    p.add_argument("--metric", choices=[m.value for m in Metric], default="l2")
    p.add_argument("--nlist", type=_positive)
    p.add_argument("--nprobe", type=_positive)
    p.add_argument("--truth-only", action="store_true", help="only emit exact kNN")
    _add_bench(p)

    p = sub.add_parser("cluster", help="k-medoids clustering benchmark")
    _add_data(p, synthetic_default=1000)
    _add_measure(p)
    _add_workers(p)
    _add_weights(p)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--source", choices=["raw", "emb", "both"], default="raw")
    p.add_argument("--metric", choices=[m.value for m in Metric], default="l1")
    p.add_argument("--max-iters", type=_positive, default=100)
    p.add_argument("--save-matrix", action="store_true", help="write the raw distance matrix CSV")
    _add_bench(p)
    return parser


def _dataset(args) -> Dataset:
    if args.data is not None:
        return load_csv(args.data)
    if args.synthetic is None:
        raise UsageError("one of --data or --synthetic is required")
    lo, hi = args.n_range
    return generate_synthetic(args.synthetic, (lo, hi), seed=args.seed, timestamped=args.timestamped)


def _spec(args) -> MeasureSpec:
    kind = MeasureKind(args.measure)
    params = {}
    if args.eps is not None:
        params["eps_spatial"] = args.eps
    if args.eps_t is not None:
        params["eps_temporal"] = args.eps_t
    if args.gap_x is not None or args.gap_y is not None or kind is MeasureKind.ERP:
        params["gap_point"] = Point(args.gap_x or 0.0, args.gap_y or 0.0)
    for flag, name in (("sax_word_length", "sax_word_length"), ("sax_alphabet", "sax_alphabet"),
                       ("sax_threshold", "sax_symbol_threshold")):
        if getattr(args, flag) is not None:
            params[name] = getattr(args, flag)
    try:
        return MeasureSpec.of(kind, **params)
    except (MeasureError, TrajectoryError) as exc:
        raise UsageError(str(exc)) from None


def _workers(args) -> int:
    return args.workers if args.workers is not None else default_workers()


def _weights(args, required: bool = True) -> FfnWeights | None:
    if args.weights is not None:
        w = FfnWeights.load(args.weights)
        if w.d != args.d and args.d != DEFAULT_D:
            raise UsageError(f"--d {args.d} disagrees with weights dimension {w.d}")
        return w
    if args.weights_seed is not None:
        return FfnWeights.from_seed(args.weights_seed, d=args.d)
    if required:
        raise UsageError("a weights source is required: --weights or --weights-seed")
    return None


@contextmanager
def _deadline(seconds: float | None):
    if not seconds:
        yield
        return

    def fire(signum, frame):
        raise Overtime()

    old = signal.signal(signal.SIGALRM, fire)
    signal.setitimer(signal.ITIMER_REAL, seconds)
    try:
        yield
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        signal.signal(signal.SIGALRM, old)


def _repeat(report: BenchReport, reps: int, timeout: float | None, run):
    """Call ``run()`` ``reps`` times; returns the first result. Overtime stops early."""
    first = None
    for r in range(reps):
        start = time.perf_counter()
        try:
            with _deadline(timeout):
                result, timing = run()
        except Overtime:
            report.status = STATUS_OT
            report.runs.append(TimingBreakdown(total_s=time.perf_counter() - start))
            return first
        timing.total_s = max(timing.total_s, time.perf_counter() - start)
        report.runs.append(timing)
        if r == 0:
            first = result
    return first


def _setup_s() -> float:
    with Stopwatch() as sw:
        _kernels.warm_up()
    return sw.elapsed


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))


# --- commands ---------------------------------------------------------------------

def cmd_gen(args) -> int:
    lo, hi = args.n_range
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    ds = generate_synthetic(args.count, (lo, hi), seed=args.seed, timestamped=args.timestamped)
    write_csv(ds, args.out)
    return 0


def cmd_sim(args) -> int:
    spec = _spec(args)
    ds = _dataset(args)
    if len(ds) == 0:
        raise UsageError("dataset is empty")
    workers = _workers(args)
    pairs = sample_pairs(ds, args.pairs, seed=args.seed)
    if args.mode == "single":
        cfg, mode = ParallelConfig(n_c=args.workers_per_pair), "intra_pair"
    else:
        cfg, mode = ParallelConfig(n_c=1, batch_workers=workers), "pair_per_worker"
    args.out.mkdir(parents=True, exist_ok=True)
    report = BenchReport(
        "sim", ds.metadata, measure=measure_config(spec), mode=args.mode,
        workers={"batch_workers": cfg.batch_workers, "workers_per_pair": cfg.n_c},
        process_setup_s=_setup_s(),
    )
    scores = _repeat(report, args.reps, args.timeout_s, lambda: run_batch(spec, pairs, cfg, mode, args.batch_size))
    if scores is not None:
        _write_rows(args.out / "scores.csv", ["pair", "a_id", "b_id", "score"],
                    [(k, a.id, b.id, _fmt(s)) for k, ((a, b), s) in enumerate(zip(pairs, scores))])
        cmp = report.timing.cmp_s
        report.details["pairs"] = len(pairs)
        report.details["pairs_per_s"] = len(pairs) / cmp if cmp > 0 else None
    report.write(args.out / "report.json")
    return 0


def cmd_embed(args) -> int:
    w = _weights(args)
    ds = _dataset(args)
    store = encode_dataset(ds, w, workers=_workers(args))
    save_store(store, args.out)
    if args.save_weights is not None:
        w.save(args.save_weights)
    report = BenchReport("embed", ds.metadata, runs=[TimingBreakdown(emb_s=store.emb_s, total_s=store.emb_s)],
                         details={"d": w.d, "L": w.L})
    report.write(args.out.with_name(args.out.name + ".report.json"))
    return 0


def _build_index(store, kind: str, metric: str, nlist, nprobe, seed: int, iters: int = 20):
    if kind == "flat":
        return build_flat(store, metric)
    return build_ivf(store, metric, nlist=nlist, kmeans_iters=iters, seed=seed, nprobe_default=nprobe)


def _index_config(idx, nprobe=None) -> dict:
    cfg = {"kind": "flat", "metric": idx.metric.value}
    if isinstance(idx, IvfIndex):
        cfg.update(kind="ivf", nlist=idx.nlist, nprobe=nprobe or idx.nprobe_default)
    return cfg


def cmd_index(args) -> int:
    store = load_store(args.embeddings)
    with Stopwatch() as sw:
        idx = _build_index(store, args.index, args.metric, args.nlist, args.nprobe, args.seed, args.kmeans_iters)
    save_index(idx, args.out)
    meta = {"source": str(args.embeddings), "count": len(store), "points": 0, "min_points": 0,
            "max_points": 0, "timestamped": False}
    report = BenchReport("index", meta, runs=[TimingBreakdown(cmp_s=sw.elapsed, total_s=sw.elapsed)],
                         index=_index_config(idx))
    report.write(args.out / "build_report.json")
    return 0


def _queries(args, ds: Dataset) -> Dataset:
    if args.queries is not None:
        qs = load_csv(args.queries)
    else:
        meta = ds.metadata
        qs = generate_synthetic(args.n_queries, (max(1, meta["min_points"]), max(1, meta["max_points"])),
                                seed=args.seed + 1, timestamped=meta["timestamped"], id_prefix="q")
    clash = set(qs.ids) & set(ds.ids)
    if clash:
        raise UsageError(f"query ids overlap the data: {sorted(clash)[:5]}")
    return qs


def cmd_knn(args) -> int:
    spec = _spec(args)
    ds = _dataset(args)
    if not 1 <= args.k <= len(ds):
        raise UsageError(f"--k must lie in [1, {len(ds)}]")
    w = None if args.truth_only else _weights(args)
    qs = _queries(args, ds)
    workers = _workers(args)
    cfg = ParallelConfig(n_c=1, batch_workers=workers)
    args.out.mkdir(parents=True, exist_ok=True)

    truth_report = BenchReport("knn", ds.metadata, measure=measure_config(spec), mode="batched",
                               workers={"batch_workers": workers, "workers_per_pair": 1},
                               accuracy={"k": args.k}, process_setup_s=_setup_s())
    truth, truth_timing = knn_exact_many(ds, list(qs), args.k, spec, cfg)
    _write_rows(args.out / "truth.csv", ["query_id", "rank", "id", "score"],
                [(r.query_id, i + 1, nid, _fmt(s)) for r in truth for i, (nid, s) in enumerate(r.neighbors)])
    if args.truth_only:
        truth_report.runs.append(truth_timing)
        truth_report.details["queries"] = len(qs)
        truth_report.write(args.out / "report.json")
        return 0

    details = {"queries": len(qs), "truth_timing": truth_timing.as_dict()}
    if args.index_dir is not None:
        with Stopwatch() as sw:
            idx = load_index(args.index_dir)
        details["index_load_s"] = sw.elapsed
        if idx.d != w.d:
            raise UsageError(f"index dimension {idx.d} does not match weights dimension {w.d}")
        if sorted(idx.ids.tolist()) != sorted(ds.ids):
            raise UsageError("index does not hold the embeddings of --data")
    else:
        with Stopwatch() as sw:
            store = encode_dataset(ds, w, workers=workers)
            idx = _build_index(store, args.index, args.metric, args.nlist, None, args.seed)
        details["data_emb_s"] = store.emb_s
        details["index_build_s"] = sw.elapsed
    nprobe = args.nprobe if isinstance(idx, IvfIndex) else None
    if nprobe is not None and nprobe > idx.nlist:
        raise UsageError(f"--nprobe must lie in [1, {idx.nlist}]")

    report = truth_report
    report.index = _index_config(idx, nprobe)
    report.details = details

    def run():
        total = TimingBreakdown()
        found = []
        for q in qs:
            res, t = knn_embedding(idx, w, q, args.k, nprobe)
            found.append(res)
            total = total + t
        return found, total

    found = _repeat(report, args.reps, args.timeout_s, run)
    if found is not None:
        per_query = {a.query_id: hit_ratio(a, t) for a, t in zip(found, truth)}
        report.accuracy.update(hr_at_k=sum(per_query.values()) / len(per_query), hr_per_query=per_query)
        _write_rows(args.out / "knn.csv", ["query_id", "rank", "id", "distance"],
                    [(r.query_id, i + 1, nid, _fmt(s)) for r in found for i, (nid, s) in enumerate(r.neighbors)])
        _write_rows(args.out / "hr.csv", ["query_id", "hr"], [(q, _fmt(v)) for q, v in per_query.items()])
    report.write(args.out / "report.json")
    return 0


def cmd_cluster(args) -> int:
    spec = _spec(args)
    if spec.larger_is_similar:
        raise UsageError(f"clustering needs a distance measure, {spec.kind.value} is a similarity")
    ds = _dataset(args)
    if not 1 <= args.k <= len(ds):
        raise UsageError(f"--k must lie in [1, {len(ds)}]")
    w = _weights(args, required=args.source != "raw")
    workers = _workers(args)
    cfg = ParallelConfig(n_c=1, batch_workers=workers)
    args.out.mkdir(parents=True, exist_ok=True)
    report = BenchReport("cluster", ds.metadata, measure=measure_config(spec), mode="batched",
                         workers={"batch_workers": workers, "workers_per_pair": 1},
                         accuracy={}, process_setup_s=_setup_s())
    ids = ds.ids
    phases: list[dict] = []

    def run():
        timing, phase, out = TimingBreakdown(), {}, {}
        if args.source in ("raw", "both"):
            with Stopwatch() as sw:
                M = precompute_distance_matrix(ds, spec, cfg)
            phase["matrix_s"] = sw.elapsed
            with Stopwatch() as sw2:
                out["raw"] = kmedoids(ids, M, args.k, seed=args.seed, max_iters=args.max_iters)
            phase["raw_clst_s"] = sw2.elapsed
            out["matrix"] = M
            timing.cmp_s += sw.elapsed + sw2.elapsed
        if args.source in ("emb", "both"):
            with Stopwatch() as sw:
                store = encode_dataset(ds, w, workers=workers)
            with Stopwatch() as sw2:
                E = embedding_distance_matrix(store.matrix(), args.metric)
                out["emb"] = kmedoids(store.ids, E, args.k, seed=args.seed, max_iters=args.max_iters)
            phase["emb_s"], phase["emb_clst_s"] = sw.elapsed, sw2.elapsed
            timing.emb_s += sw.elapsed
            timing.cmp_s += sw2.elapsed
        phases.append(phase)
        return out, timing

    out = _repeat(report, args.reps, args.timeout_s, run)
    report.details["phases"] = phases
    if out is not None:
        for name in ("raw", "emb"):
            if name in out:
                save_clustering(out[name], args.out / f"clusters_{name}.csv")
                report.details[f"{name}_cost"] = out[name].total_cost
                report.details[f"{name}_iterations"] = out[name].iterations
        if "raw" in out and "emb" in out:
            report.accuracy.update(rand_index=rand_index(out["raw"], out["emb"]),
                                   pair_recall=pair_recall(out["raw"], out["emb"]))
        if args.save_matrix and "matrix" in out:
            save_distance_matrix(out["matrix"], args.out / "matrix_raw.csv")
    report.write(args.out / "report.json")
    return 0


COMMANDS = {"gen": cmd_gen, "sim": cmd_sim, "embed": cmd_embed, "index": cmd_index,
            "knn": cmd_knn, "cluster": cmd_cluster}

RUNTIME_ERRORS = (TrajectoryError, MeasureError, BatchError, EmbeddingError, VectorIndexError, OSError, ValueError)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
    except RUNTIME_ERRORS as exc:
        print(f"trajsim {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
