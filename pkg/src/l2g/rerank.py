"""Per-query local-to-global re-ranking.

For one query: take the top candidates from local search, assemble their
(k+1) x (k+1) dissimilarity matrix from the offline sparse store (missing
pairs filled with the maximum distance 1), embed query and candidates
with SMACOF, refine the embedding vectors with neighbor aggregation and
beta-weighted query expansion, and merge the resulting scores with
refined global-feature scores as a weighted average.  Candidates beyond
the re-ranking pool keep their initial search order below everything
re-ranked.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chamfer import ChamferParams
from .errors import MissingGlobals
from .features import GlobalStore, LocalFeatureSet
from .index import LocalIndex, RankedList, SparseDistances, rank_all, rank_with_ties
from .mds import DissimilarityMatrix, MdsConfig, fill_missing, smacof

MODES = ("mds_only", "sg_only", "mds_plus_sg")
EMBEDDING_SOURCES = ("mds", "similarity_rows")

# Final scores of re-ranked candidates live in [0, 1]; the untouched tail
# is shifted below them by this offset.
TAIL_OFFSET = -2.0


@dataclass(frozen=True)
class RerankConfig:
    """Pipeline knobs; the defaults are the tuned operating point.

    embedding_source="similarity_rows" is the ablation that feeds
    1 - dissimilarity rows straight into the refinement step, skipping
    the MDS embedding.
    """

    k_mds: int = 700
    m_rerank: int = 1600
    sg_k: int = 6
    beta: float = 0.31
    w: float = 0.19
    chamfer: ChamferParams = field(default_factory=ChamferParams)
    mds: MdsConfig = field(default_factory=MdsConfig)
    mode: str = "mds_plus_sg"
    embedding_source: str = "mds"

    def __post_init__(self):
        if self.k_mds < 1 or self.m_rerank < 1:
            raise ValueError("k_mds and m_rerank must be >= 1")
        if not 0.0 <= self.w <= 1.0:
            raise ValueError("w must lie in [0, 1]")
        if self.sg_k < 0:
            raise ValueError("sg_k must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.embedding_source not in EMBEDDING_SOURCES:
            raise ValueError(f"unknown embedding source {self.embedding_source!r}")


@dataclass
class QueryContext:
    """Assembled per-query matrix; the query is the last index."""

    candidate_ordinals: np.ndarray
    query_dissimilarities: np.ndarray
    matrix: DissimilarityMatrix

    @property
    def query_index(self) -> int:
        return len(self.candidate_ordinals)


def build_query_matrix(
    query_dists: Sequence[tuple[int, float]], sparse: SparseDistances
) -> QueryContext:
    """Assemble the (k+1) x (k+1) dissimilarity matrix for one query.

    Candidate-candidate entries take the minimum over the two stored
    directions of the sparse store; pairs absent in both directions stay
    masked (filled with 1 later).  The query row and column carry the
    supplied search dissimilarities and are never masked.
    """
    ordinals = np.array([o for o, _ in query_dists], dtype=np.int64)
    query_d = np.array([d for _, d in query_dists], dtype=np.float64)
    k = len(ordinals)
    n = k + 1

    position = np.full(sparse.n_images, -1, dtype=np.int64)
    position[ordinals] = np.arange(k)
    directed = np.full((n, n), np.inf)
    for local, ordinal in enumerate(ordinals):
        cols = position[sparse.neighbors[ordinal]]
        hit = cols >= 0
        directed[local, cols[hit]] = sparse.values[ordinal][hit]
    combined = np.minimum(directed, directed.T)
    combined[k, :k] = query_d
    combined[:k, k] = query_d
    mask = np.isinf(combined)
    values = np.where(mask, np.nan, combined)
    np.fill_diagonal(values, 0.0)
    np.fill_diagonal(mask, False)
    matrix = DissimilarityMatrix(values, mask)
    return QueryContext(
        candidate_ordinals=ordinals, query_dissimilarities=query_d, matrix=matrix
    )


def _normalize_rows(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    return np.divide(vectors, norms, out=np.zeros_like(vectors), where=norms > 0)


def sg_refine(
    embeddings: np.ndarray, query_index: int, sg_k: int, beta: float
) -> np.ndarray:
    """Neighbor aggregation plus query expansion over one embedding set.

    Candidates (all rows but the query) are replaced by the
    similarity-weighted mean of themselves (weight 1) and their sg_k
    nearest candidates (weights max(0, cosine)), renormalized.  The query
    is expanded with beta times the mean of the first sg_k refined
    candidates; candidates are expected in initial-rank order, so those
    are the search stage's top hits, which anchors the expansion to the
    exact search scores rather than to the lossy embedding.  Returns the
    cosine scores of the candidates against the expanded query, in
    candidate order.
    """
    vectors = np.asarray(embeddings, dtype=np.float64)
    n = vectors.shape[0]
    cand_rows = [i for i in range(n) if i != query_index]
    cands = _normalize_rows(vectors[cand_rows])
    query = _normalize_rows(vectors[query_index : query_index + 1])[0]
    m = cands.shape[0]

    k_eff = min(sg_k, m - 1) if m > 1 else 0
    if k_eff > 0:
        sims = cands @ cands.T
        np.fill_diagonal(sims, -np.inf)
        refined = cands.copy()  # self-weight 1
        neighbor_idx = np.argpartition(-sims, k_eff - 1, axis=1)[:, :k_eff]
        rows = np.arange(m)[:, None]
        weights = np.maximum(sims[rows, neighbor_idx], 0.0)
        refined += np.einsum("ij,ijk->ik", weights, cands[neighbor_idx])
        denom = 1.0 + weights.sum(axis=1, keepdims=True)
        refined = _normalize_rows(refined / denom)
    else:
        refined = cands

    expand = min(sg_k, m)
    if expand > 0 and beta != 0.0:
        top = refined[:expand]
        query = _normalize_rows((query + beta * top.mean(axis=0))[None, :])[0]
    return refined @ query


def minmax_normalize(scores: np.ndarray) -> np.ndarray:
    """Affine map to [0, 1]; constant inputs map to zero."""
    scores = np.asarray(scores, dtype=np.float64)
    lo = scores.min()
    hi = scores.max()
    if hi <= lo:
        return np.zeros_like(scores)
    return (scores - lo) / (hi - lo)


def merge_scores(
    mds_scores: np.ndarray, global_scores: np.ndarray, w: float
) -> np.ndarray:
    """Weighted average of the two score lists, each min-max normalized."""
    a = minmax_normalize(mds_scores)
    b = minmax_normalize(global_scores)
    if a.shape != b.shape:
        raise ValueError("score lists must cover the same candidates")
    return w * a + (1.0 - w) * b


def _global_vectors(
    store: GlobalStore | None, image_ids: list[str], what: str
) -> np.ndarray:
    if store is None:
        raise MissingGlobals(f"{what} requires global features but none are loaded")
    missing = [i for i in image_ids if store.get(i) is None]
    if missing:
        raise MissingGlobals(f"no global feature for {missing[0]!r}")
    return store.matrix(image_ids)


def l2g_query_with_stats(
    index: LocalIndex,
    sparse: SparseDistances | None,
    query: LocalFeatureSet,
    globals_store: GlobalStore | None,
    config: RerankConfig,
) -> tuple[RankedList, dict]:
    """Full per-query pipeline; also returns stage timings and counters."""
    n_db = index.n_images
    pool = max(min(config.k_mds, n_db), min(config.m_rerank, n_db))
    t0 = time.perf_counter()
    initial = rank_all(
        index,
        query,
        config.chamfer,
        rescore_depth=min(index.approx.rescore_factor * pool, n_db),
    )
    search_ms = 1e3 * (time.perf_counter() - t0)
    ranking, stats = rerank_initial_ranking(
        index, sparse, query, globals_store, config, initial
    )
    stats["search_ms"] = search_ms
    return ranking, stats


def rerank_initial_ranking(
    index: LocalIndex,
    sparse: SparseDistances | None,
    query: LocalFeatureSet,
    globals_store: GlobalStore | None,
    config: RerankConfig,
    initial: RankedList,
) -> tuple[RankedList, dict]:
    """Pipeline stages after search, given the initial full ranking."""
    n_db = index.n_images
    k_mds = min(config.k_mds, n_db)
    m_rerank = min(config.m_rerank, n_db)
    pool = max(k_mds, m_rerank)

    stats = {"search_ms": 0.0, "mds_ms": 0.0, "rerank_ms": 0.0,
             "mds_iterations": 0}

    head_ordinals = initial.ordinals[:pool]
    head_dissims = initial.scores[:pool]
    # invert the power modulation to recover plain Chamfer similarities,
    # used to bridge candidates outside the embedded set
    head_sims = 1.0 - head_dissims ** (1.0 / config.chamfer.power)

    need_mds = config.mode in ("mds_only", "mds_plus_sg")
    mds_component = None
    if need_mds:
        if sparse is None:
            raise ValueError(f"mode {config.mode!r} requires sparse distances")
        t2 = time.perf_counter()
        ctx = build_query_matrix(
            list(zip(head_ordinals[:k_mds].tolist(), head_dissims[:k_mds].tolist())),
            sparse,
        )
        if config.embedding_source == "similarity_rows":
            filled = fill_missing(ctx.matrix)
            vectors = 1.0 - filled.values
            embedding_iters = 0
        else:
            result = smacof(ctx.matrix, weights=None, config=config.mds)
            vectors = result.coords
            embedding_iters = result.n_iter
        t3 = time.perf_counter()
        refined = sg_refine(vectors, ctx.query_index, config.sg_k, config.beta)
        t4 = time.perf_counter()
        stats["mds_ms"] = 1e3 * (t3 - t2)
        stats["rerank_ms"] += 1e3 * (t4 - t3)
        stats["mds_iterations"] = embedding_iters
        # bridge k_mds..m_rerank with min-max normalized initial similarities
        mds_component = np.empty(pool)
        mds_component[:k_mds] = refined
        if pool > k_mds:
            mds_component[k_mds:] = minmax_normalize(head_sims)[k_mds:]

    need_globals = config.mode in ("sg_only", "mds_plus_sg")
    global_component = None
    if need_globals:
        t5 = time.perf_counter()
        pool_ids = [index.db[o].image_id for o in head_ordinals[:m_rerank]]
        vectors = _global_vectors(
            globals_store, pool_ids + [query.image_id], f"mode {config.mode!r}"
        )
        global_component = sg_refine(vectors, len(pool_ids), config.sg_k, config.beta)
        if m_rerank < pool:
            # pool beyond the SG window keeps bridged similarity scores
            bridged = minmax_normalize(head_sims)
            global_component = np.concatenate([global_component, bridged[m_rerank:]])
        stats["rerank_ms"] += 1e3 * (time.perf_counter() - t5)

    if config.mode == "mds_only":
        final_pool = minmax_normalize(mds_component)
    elif config.mode == "sg_only":
        final_pool = minmax_normalize(global_component)
    else:
        final_pool = merge_scores(mds_component, global_component, config.w)

    # re-rank only the top m_rerank; candidates between m_rerank and pool
    # and past the pool keep their initial order, strictly below
    rerank_span = m_rerank
    order = rank_with_ties(
        final_pool[:rerank_span],
        ascending=False,
        tiebreak=head_ordinals[:rerank_span],
    )
    final_ordinals = [head_ordinals[:rerank_span][order]]
    final_scores = [final_pool[:rerank_span][order]]
    if n_db > rerank_span:
        tail_ordinals = initial.ordinals[rerank_span:]
        tail_dissims = initial.scores[rerank_span:]
        tail_scores = TAIL_OFFSET + minmax_normalize(-tail_dissims)
        final_ordinals.append(tail_ordinals)
        final_scores.append(tail_scores)
    ranking = RankedList(
        np.concatenate(final_ordinals),
        np.concatenate(final_scores),
        ascending=False,
    )
    return ranking, stats


def l2g_query(
    index: LocalIndex,
    sparse: SparseDistances | None,
    query: LocalFeatureSet,
    globals_store: GlobalStore | None,
    config: RerankConfig,
) -> RankedList:
    """Per-query pipeline: local search, on-the-fly embedding, refinement,
    merged scores; tail candidates keep their initial order at the bottom."""
    ranking, _ = l2g_query_with_stats(index, sparse, query, globals_store, config)
    return ranking
