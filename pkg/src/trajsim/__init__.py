"""Trajectory similarity measures, parallel evaluation, embeddings and kNN benchmarks."""

from .analytics import (
    Clustering,
    KnnResult,
    hit_ratio,
    kmedoids,
    knn_embedding,
    knn_exact,
    knn_exact_many,
    pair_recall,
    precompute_distance_matrix,
    rand_index,
)
from .core import Dataset, Point, Trajectory, TrajectoryError, generate_synthetic, load_csv, write_csv
from .embedding import Embedding, EmbeddingStore, FfnWeights, encode_dataset, ffn_encode
from .index import FlatIndex, IvfIndex, Metric, build_flat, build_ivf, knn_flat, knn_ivf
from .measures import MeasureError, MeasureKind, MeasureParams, MeasureSpec, evaluate
from .parallel import Assignment, ParallelConfig, par_evaluate, run_batch
from .timing import TimingBreakdown

__version__ = "0.1.0"
