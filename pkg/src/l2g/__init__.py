"""Local-to-global image retrieval: Chamfer local-feature search with
on-the-fly multidimensional-scaling re-ranking and global-feature merging."""

from .chamfer import ChamferParams, chamfer_dissimilarity, chamfer_similarity
from .errors import L2GError
from .evaluation import (
    GroundTruth,
    QueryGroundTruth,
    average_precision,
    mean_ap,
    recall_curve,
)
from .features import (
    FeatureCollection,
    GlobalFeature,
    GlobalStore,
    LocalFeatureSet,
    load_collection,
    load_globals,
    save_collection,
    save_globals,
)
from .index import (
    ExternalSimilarity,
    LocalIndex,
    RankedList,
    SparseDistances,
    build_index,
    load_index,
    load_sparse_distances,
    precompute_sparse_distances,
    query_topk,
    save_index,
    save_sparse_distances,
)
from .mds import (
    DissimilarityMatrix,
    Embedding,
    MdsConfig,
    WeightMatrix,
    classical_init,
    fill_missing,
    isotonic_disparities,
    smacof,
    stress,
)
from .rerank import (
    QueryContext,
    RerankConfig,
    build_query_matrix,
    l2g_query,
    merge_scores,
    sg_refine,
)
from .synth import generate_euclidean_instance, generate_partial_match_benchmark

__version__ = "0.1.0"

__all__ = [
    "ChamferParams",
    "DissimilarityMatrix",
    "Embedding",
    "ExternalSimilarity",
    "FeatureCollection",
    "GlobalFeature",
    "GlobalStore",
    "GroundTruth",
    "L2GError",
    "LocalFeatureSet",
    "LocalIndex",
    "MdsConfig",
    "QueryContext",
    "QueryGroundTruth",
    "RankedList",
    "RerankConfig",
    "SparseDistances",
    "WeightMatrix",
    "average_precision",
    "build_index",
    "build_query_matrix",
    "chamfer_dissimilarity",
    "chamfer_similarity",
    "classical_init",
    "fill_missing",
    "generate_euclidean_instance",
    "generate_partial_match_benchmark",
    "isotonic_disparities",
    "l2g_query",
    "load_collection",
    "load_globals",
    "load_index",
    "load_sparse_distances",
    "mean_ap",
    "merge_scores",
    "precompute_sparse_distances",
    "query_topk",
    "recall_curve",
    "save_collection",
    "save_globals",
    "save_index",
    "save_sparse_distances",
    "sg_refine",
    "smacof",
    "stress",
]
