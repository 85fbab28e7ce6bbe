"""Local-feature search index: exact and quantized Chamfer retrieval.

The exact mode scores a query against every database image in one pass
over a flattened descriptor matrix.  The approximate mode quantizes all
database descriptors into a k-means codebook with posting lists; each
query descriptor probes its nearest centers, a per-image accumulator
collects the best inner products, and the top accumulator candidates are
re-scored exactly.  The same machinery precomputes, offline, each database
image's top-k neighbor dissimilarities (the sparse store consumed by the
re-ranking stage).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import binio
from .chamfer import SELF_MATCH_SNAP, ChamferParams, dissimilarity_from_similarity
from .errors import (
    DimensionMismatch,
    EmptyDatabase,
    IoFailure,
    KTooLarge,
)
from .features import FeatureCollection, LocalFeatureSet


def _snap_array(sims: np.ndarray) -> np.ndarray:
    """Vector version of the exact-match snap used by the chamfer module."""
    return np.where(sims >= 1.0 - SELF_MATCH_SNAP, 1.0, np.maximum(sims, 0.0))

KMEANS_MAX_ITERS = 25  # fixed cap; builds must be reproducible under a seed


@dataclass(frozen=True)
class ApproxParams:
    """Quantizer knobs: clusters=0 picks sqrt(total descriptor count)."""

    clusters: int = 0
    probe: int = 8
    rescore_factor: int = 4
    seed: int = 0


@dataclass
class RankedList:
    """Ordinals with scores, strictly ordered, ties broken by ordinal.

    ascending=True means scores are dissimilarities (best first is the
    smallest); ascending=False means similarities/final scores.
    """

    ordinals: np.ndarray
    scores: np.ndarray
    ascending: bool

    def __len__(self) -> int:
        return len(self.ordinals)

    def __iter__(self):
        return zip(self.ordinals.tolist(), self.scores.tolist())

    def top(self, k: int) -> "RankedList":
        return RankedList(self.ordinals[:k], self.scores[:k], self.ascending)


def rank_with_ties(
    scores: np.ndarray, ascending: bool, tiebreak: np.ndarray | None = None
) -> np.ndarray:
    """Sort positions by score; equal scores fall back to the tiebreak key
    (the position itself by default, i.e. the ordinal when scores are
    indexed by ordinal)."""
    keys = scores if ascending else -scores
    tb = np.arange(len(scores)) if tiebreak is None else tiebreak
    return np.lexsort((tb, keys))


def _kmeans_pp_init(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding on unit vectors (squared Euclidean = 2 - 2 dot)."""
    n = data.shape[0]
    centers = np.empty((k, data.shape[1]))
    first = int(rng.integers(n))
    centers[0] = data[first]
    d2 = np.maximum(2.0 - 2.0 * (data @ centers[0]), 0.0)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            choice = int(rng.integers(n))
        else:
            choice = int(rng.choice(n, p=d2 / total))
        centers[i] = data[choice]
        d2 = np.minimum(d2, np.maximum(2.0 - 2.0 * (data @ centers[i]), 0.0))
    return centers


def _spherical_kmeans(
    data: np.ndarray, k: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded k-means with unit-norm centroids; returns (codebook, assign)."""
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(data, k, rng)
    assign = np.argmax(data @ centers.T, axis=1)
    for _ in range(KMEANS_MAX_ITERS):
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, data)
        counts = np.bincount(assign, minlength=k).astype(np.float64)
        norms = np.linalg.norm(sums, axis=1)
        ok = (counts > 0) & (norms > 0)
        centers[ok] = sums[ok] / norms[ok, None]
        empty = np.flatnonzero(~ok)
        if empty.size:
            # reseed empty centers with the points worst served so far
            fit = (data * centers[assign]).sum(axis=1)
            worst = np.argsort(fit, kind="stable")[: empty.size]
            centers[empty] = data[worst]
        new_assign = np.argmax(data @ centers.T, axis=1)
        if np.array_equal(new_assign, assign):
            assign = new_assign
            break
        assign = new_assign
    return centers, assign


class ExternalSimilarity:
    """Pluggable pairwise similarities replacing Chamfer (L2GS files).

    Entries are (row ordinal, column ordinal, similarity); absent pairs
    are missing.  Row/column spaces depend on use: query-to-database for
    search, database-to-database for the sparse precompute.
    """

    def __init__(self, rows: np.ndarray, cols: np.ndarray, values: np.ndarray):
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        self._by_row: dict[int, list[int]] = {}
        for pos, r in enumerate(self.rows.tolist()):
            self._by_row.setdefault(r, []).append(pos)

    def similarity(self, i: int, j: int) -> float | None:
        for pos in self._by_row.get(i, ()):
            if self.cols[pos] == j:
                return float(self.values[pos])
        return None

    def row_similarities(self, i: int, n: int) -> tuple[np.ndarray, np.ndarray]:
        """(similarities, observed mask) over columns 0..n-1 for row i."""
        sims = np.zeros(n)
        observed = np.zeros(n, dtype=bool)
        pos = self._by_row.get(i, ())
        if pos:
            cols = self.cols[pos]
            sims[cols] = self.values[pos]
            observed[cols] = True
        return sims, observed


def save_external_similarity(ext: ExternalSimilarity, path: str | os.PathLike) -> None:
    try:
        with open(path, "wb") as f:
            f.write(binio.MAGIC_SIMILARITY)
            for r, c, v in zip(ext.rows, ext.cols, ext.values):
                binio.write_u32(f, int(r))
                binio.write_u32(f, int(c))
                binio.write_f32(f, float(v))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_external_similarity(path: str | os.PathLike) -> ExternalSimilarity:
    try:
        with open(path, "rb") as f:
            binio.expect_magic(f, binio.MAGIC_SIMILARITY)
            payload = f.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(payload) % 12 != 0:
        raise binio.TruncatedFile("similarity payload is not a whole number of triples")
    triples = np.frombuffer(payload, dtype=[("i", "<u4"), ("j", "<u4"), ("v", "<f4")])
    return ExternalSimilarity(
        triples["i"].astype(np.int64),
        triples["j"].astype(np.int64),
        triples["v"].astype(np.float64),
    )


@dataclass
class LocalIndex:
    """Searchable database of local feature sets.

    Descriptors of all images are flattened into one float64 matrix with
    per-image offsets so a whole-database Chamfer pass is a single matmul
    plus a segmented max.  Approximate mode adds the codebook and posting
    lists.  Immutable after build.
    """

    db: FeatureCollection
    mode: str
    approx: ApproxParams = field(default_factory=ApproxParams)
    flat: np.ndarray | None = None
    offsets: np.ndarray | None = None
    codebook: np.ndarray | None = None
    posting_image: list[np.ndarray] | None = None
    posting_descriptor: list[np.ndarray] | None = None
    _flat32: np.ndarray | None = None

    @property
    def n_images(self) -> int:
        return len(self.db)

    @property
    def n_clusters(self) -> int:
        return 0 if self.codebook is None else self.codebook.shape[0]

    @property
    def flat32(self) -> np.ndarray:
        """Float32 view of the flattened descriptors, for bulk offline
        passes where float32 precision suffices (values are stored as
        float32 on disk anyway)."""
        if self._flat32 is None:
            self._flat32 = self.flat.astype(np.float32)
        return self._flat32


def build_index(
    db: FeatureCollection,
    mode: str = "exact",
    approx: ApproxParams = ApproxParams(),
) -> LocalIndex:
    """Build an index; approximate mode clusters descriptors with a seed."""
    if len(db) == 0:
        raise EmptyDatabase("cannot index an empty collection")
    if mode not in ("exact", "approx"):
        raise ValueError(f"unknown index mode {mode!r}")
    lens = np.array([s.n for s in db], dtype=np.int64)
    offsets = np.concatenate(([0], np.cumsum(lens)))
    flat = np.concatenate([s.unit_f64 for s in db], axis=0)
    index = LocalIndex(db=db, mode=mode, approx=approx, flat=flat, offsets=offsets)
    if mode == "approx":
        total = flat.shape[0]
        k = approx.clusters if approx.clusters > 0 else max(1, int(round(np.sqrt(total))))
        k = min(k, total)
        codebook, assign = _spherical_kmeans(flat, k, approx.seed)
        image_of = np.repeat(np.arange(len(db)), lens)
        descriptor_of = np.concatenate([np.arange(n) for n in lens])
        posting_image = []
        posting_descriptor = []
        for c in range(k):
            members = np.flatnonzero(assign == c)
            posting_image.append(image_of[members].astype(np.uint32))
            posting_descriptor.append(descriptor_of[members].astype(np.uint32))
        index.codebook = codebook
        index.posting_image = posting_image
        index.posting_descriptor = posting_descriptor
    return index


def _chamfer_similarities_all(
    index: LocalIndex, query_desc: np.ndarray, fast: bool = False
) -> np.ndarray:
    """Exact Chamfer similarity of the query against every image.

    fast=True runs the matmul in float32 (used by the offline neighbor
    precompute; about twice the throughput, error ~1e-7 on the similarity).
    """
    if fast:
        products = query_desc.astype(np.float32) @ index.flat32.T
    else:
        products = query_desc @ index.flat.T
    best = np.maximum.reduceat(products, index.offsets[:-1], axis=1)
    np.maximum(best, 0.0, out=best)
    return _snap_array(best.mean(axis=0, dtype=np.float64))


def _chamfer_similarities_subset(
    index: LocalIndex, query_desc: np.ndarray, images: np.ndarray
) -> np.ndarray:
    sims = np.empty(len(images))
    for pos, img in enumerate(images):
        lo, hi = index.offsets[img], index.offsets[img + 1]
        products = query_desc @ index.flat[lo:hi].T
        best = np.maximum(products.max(axis=1), 0.0)
        sims[pos] = best.mean()
    return _snap_array(sims)


def _approx_similarities(index: LocalIndex, query_desc: np.ndarray) -> np.ndarray:
    """Posting-list accumulator: per image, sum of each query descriptor's
    best inner product found in the probed clusters, clamped at 0."""
    n_images = index.n_images
    probe = max(1, min(index.approx.probe, index.n_clusters))
    center_sims = query_desc @ index.codebook.T
    acc = np.zeros(n_images)
    best = np.full(n_images, -np.inf)
    for qi in range(query_desc.shape[0]):
        order = np.argpartition(-center_sims[qi], probe - 1)[:probe]
        best.fill(-np.inf)
        touched: list[np.ndarray] = []
        for c in order:
            imgs = index.posting_image[c]
            if imgs.size == 0:
                continue
            rows = index.offsets[imgs] + index.posting_descriptor[c]
            dots = index.flat[rows] @ query_desc[qi]
            np.maximum.at(best, imgs, dots)
            touched.append(imgs)
        if touched:
            t = np.unique(np.concatenate(touched))
            acc[t] += np.maximum(best[t], 0.0)
    return acc / query_desc.shape[0]


def _validate_query(index: LocalIndex, query: LocalFeatureSet) -> np.ndarray:
    if query.dim != index.db.dim:
        raise DimensionMismatch(
            f"query dim {query.dim} != database dim {index.db.dim}"
        )
    return query.unit_f64


def rank_all(
    index: LocalIndex,
    query: LocalFeatureSet,
    params: ChamferParams,
    rescore_depth: int | None = None,
    external: ExternalSimilarity | None = None,
    query_ordinal: int | None = None,
    fast: bool = False,
) -> RankedList:
    """Rank the whole database by ascending Chamfer dissimilarity.

    Exact mode sorts true similarities.  Approximate mode sorts the
    accumulator scores, exactly re-scoring the top rescore_depth
    candidates.  With an external similarity plug-in, scores come from the
    supplied file (missing pairs count as similarity 0).
    """
    n = index.n_images
    if external is not None:
        if query_ordinal is None:
            raise ValueError("external similarity requires a query ordinal")
        sims, _ = external.row_similarities(query_ordinal, n)
    elif index.mode == "exact":
        sims = _chamfer_similarities_all(index, _validate_query(index, query), fast)
    else:
        query_desc = _validate_query(index, query)
        approx_sims = _approx_similarities(index, query_desc)
        depth = n if rescore_depth is None else min(rescore_depth, n)
        order = rank_with_ties(approx_sims, ascending=False)
        head = order[:depth]
        exact_head = _chamfer_similarities_subset(index, query_desc, head)
        sims = approx_sims.copy()
        sims[head] = exact_head
        # keep rescored candidates ahead of accumulator-only tail scores
        dissims = np.ones(n)
        dissims[head] = np.array(
            [dissimilarity_from_similarity(s, params) for s in exact_head]
        )
        tail = order[depth:]
        if tail.size:
            tail_scores = approx_sims[tail]
            # map accumulator scores strictly above 1: below every exact score
            span = tail_scores.max() - tail_scores.min()
            rel = (tail_scores - tail_scores.min()) / span if span > 0 else np.zeros_like(tail_scores)
            dissims[tail] = 1.0 + 1e-6 + (1.0 - rel)
        order = rank_with_ties(dissims, ascending=True)
        return RankedList(order, dissims[order], ascending=True)
    dissims = (1.0 - np.clip(sims, 0.0, 1.0)) ** params.power
    order = rank_with_ties(dissims, ascending=True)
    return RankedList(order, dissims[order], ascending=True)


def query_topk(
    index: LocalIndex,
    query: LocalFeatureSet,
    k: int,
    params: ChamferParams,
    external: ExternalSimilarity | None = None,
    query_ordinal: int | None = None,
) -> RankedList:
    """Top-k images by ascending dissimilarity.

    Approximate mode re-scores the top 4k accumulator candidates exactly
    (factor configurable via ApproxParams.rescore_factor).
    """
    n = index.n_images
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise KTooLarge(f"k={k} exceeds the database size {n}")
    depth = min(index.approx.rescore_factor * k, n)
    full = rank_all(
        index,
        query,
        params,
        rescore_depth=depth,
        external=external,
        query_ordinal=query_ordinal,
    )
    return full.top(k)


@dataclass
class SparseDistances:
    """Per-image top-k_nn neighbor dissimilarities (offline store).

    neighbors[i] holds k_nn image ordinals sorted by ascending value;
    self-pairs are excluded.  lookup is directional: (i, j) may be stored
    while (j, i) is not.
    """

    neighbors: np.ndarray  # (n, k_nn) uint32
    values: np.ndarray  # (n, k_nn) float32

    @property
    def n_images(self) -> int:
        return self.neighbors.shape[0]

    @property
    def k_nn(self) -> int:
        return self.neighbors.shape[1]

    def lookup(self, i: int, j: int) -> float | None:
        hits = np.flatnonzero(self.neighbors[i] == j)
        if hits.size == 0:
            return None
        return float(self.values[i, hits[0]])


def precompute_sparse_distances(
    index: LocalIndex,
    k_nn: int,
    params: ChamferParams,
    external: ExternalSimilarity | None = None,
) -> SparseDistances:
    """For each database image, its k_nn nearest neighbors by dissimilarity.

    Each image is queried against the rest using the index's own search
    mode (exact scoring runs in float32: this is an offline bulk pass and
    the store persists float32 anyway).  With an external similarity
    plug-in, unobserved pairs score as similarity 0, i.e. the maximal
    dissimilarity 1.
    """
    n = index.n_images
    if k_nn >= n:
        raise KTooLarge(f"k_nn={k_nn} must be smaller than the database ({n})")
    if external is None and index.mode == "exact":
        return _precompute_exact_batched(index, k_nn, params)
    neighbors = np.empty((n, k_nn), dtype=np.uint32)
    values = np.empty((n, k_nn), dtype=np.float32)
    for i in range(n):
        ranked = rank_all(
            index,
            index.db[i],
            params,
            rescore_depth=min(index.approx.rescore_factor * (k_nn + 1), n),
            external=external,
            query_ordinal=i if external is not None else None,
            fast=True,
        )
        keep = ranked.ordinals != i
        ordinals = ranked.ordinals[keep][:k_nn]
        vals = ranked.scores[keep][:k_nn]
        neighbors[i] = ordinals.astype(np.uint32)
        values[i] = vals.astype(np.float32)
    return SparseDistances(neighbors=neighbors, values=values)


def _precompute_exact_batched(
    index: LocalIndex, k_nn: int, params: ChamferParams
) -> SparseDistances:
    """All-pairs exact pass, tiled so the inner chunk stays cache-resident.

    Database descriptors are zero-padded to a uniform per-image slot count
    so the per-image maximum is a contiguous-axis reduction; padding rows
    contribute inner product 0, which the clamp in the Chamfer score
    absorbs.  Query images are processed in row batches against database
    chunks, keeping only the (rows, n_images) best-match table.
    """
    n = index.n_images
    offsets = index.offsets
    counts = np.diff(offsets)
    slots = int(counts.max())
    dim = index.db.dim
    padded = np.zeros((n, slots, dim), dtype=np.float32)
    for img in range(n):
        padded[img, : counts[img]] = index.flat32[offsets[img] : offsets[img + 1]]
    padded = padded.reshape(n * slots, dim)

    neighbors = np.empty((n, k_nn), dtype=np.uint32)
    values = np.empty((n, k_nn), dtype=np.float32)
    batch_rows = 512
    chunk_images = max(1, 32768 // slots)
    q = 0
    while q < n:
        q_end = q
        rows = 0
        while q_end < n and (rows == 0 or rows + counts[q_end] <= batch_rows):
            rows += counts[q_end]
            q_end += 1
        block = index.flat32[offsets[q] : offsets[q_end]]
        best = np.empty((rows, n), dtype=np.float32)
        for i0 in range(0, n, chunk_images):
            i1 = min(i0 + chunk_images, n)
            products = block @ padded[i0 * slots : i1 * slots].T
            best[:, i0:i1] = products.reshape(rows, i1 - i0, slots).max(axis=2)
        np.maximum(best, 0.0, out=best)
        row0 = 0
        for img in range(q, q_end):
            cnt = counts[img]
            sims = _snap_array(
                best[row0 : row0 + cnt].mean(axis=0, dtype=np.float64)
            )
            row0 += cnt
            dissims = (1.0 - np.clip(sims, 0.0, 1.0)) ** params.power
            dissims[img] = np.inf  # exclude the self-pair
            head = np.argpartition(dissims, k_nn - 1)[:k_nn] if k_nn < n - 1 else (
                np.flatnonzero(np.isfinite(dissims))
            )
            order = head[np.lexsort((head, dissims[head]))]
            neighbors[img] = order.astype(np.uint32)
            values[img] = dissims[order].astype(np.float32)
        q = q_end
    return SparseDistances(neighbors=neighbors, values=values)


def save_sparse_distances(sparse: SparseDistances, path: str | os.PathLike) -> None:
    try:
        with open(path, "wb") as f:
            f.write(binio.MAGIC_SPARSE)
            binio.write_u32(f, binio.FORMAT_VERSION)
            binio.write_u32(f, sparse.n_images)
            binio.write_u32(f, sparse.k_nn)
            for i in range(sparse.n_images):
                interleaved = np.empty(2 * sparse.k_nn, dtype=np.uint32)
                interleaved[0::2] = sparse.neighbors[i]
                interleaved[1::2] = sparse.values[i].view(np.uint32)
                f.write(interleaved.astype("<u4").tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_sparse_distances(path: str | os.PathLike) -> SparseDistances:
    try:
        with open(path, "rb") as f:
            binio.expect_magic(f, binio.MAGIC_SPARSE)
            binio.expect_version(f)
            n = binio.read_u32(f)
            k_nn = binio.read_u32(f)
            neighbors = np.empty((n, k_nn), dtype=np.uint32)
            values = np.empty((n, k_nn), dtype=np.float32)
            for i in range(n):
                raw = binio.read_u32_array(f, 2 * k_nn)
                neighbors[i] = raw[0::2]
                values[i] = raw[1::2].view(np.float32)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return SparseDistances(neighbors=neighbors, values=values)


def save_index(index: LocalIndex, path: str | os.PathLike) -> None:
    """Persist an index (embeds the database features; self-contained)."""
    try:
        with open(path, "wb") as f:
            f.write(binio.MAGIC_INDEX)
            binio.write_u32(f, binio.FORMAT_VERSION)
            binio.write_u32(f, 0 if index.mode == "exact" else 1)
            binio.write_u32(f, index.approx.seed)
            binio.write_u32(f, index.approx.probe)
            binio.write_u32(f, index.approx.rescore_factor)
            binio.write_u32(f, len(index.db))
            binio.write_u32(f, index.db.dim)
            for s in index.db:
                binio.write_string(f, s.image_id)
                binio.write_u32(f, s.n)
                binio.write_f32_array(f, s.descriptors)
            if index.mode == "approx":
                binio.write_u32(f, index.n_clusters)
                binio.write_f32_array(f, index.codebook)
                for c in range(index.n_clusters):
                    binio.write_u32(f, len(index.posting_image[c]))
                    binio.write_u32_array(f, index.posting_image[c])
                    binio.write_u32_array(f, index.posting_descriptor[c])
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_index(path: str | os.PathLike) -> LocalIndex:
    try:
        with open(path, "rb") as f:
            binio.expect_magic(f, binio.MAGIC_INDEX)
            binio.expect_version(f)
            mode = "exact" if binio.read_u32(f) == 0 else "approx"
            seed = binio.read_u32(f)
            probe = binio.read_u32(f)
            rescore = binio.read_u32(f)
            count = binio.read_u32(f)
            dim = binio.read_u32(f)
            sets = []
            for _ in range(count):
                image_id = binio.read_string(f)
                n = binio.read_u32(f)
                rows = binio.read_f32_array(f, n * dim).reshape(n, dim)
                sets.append(LocalFeatureSet(image_id, rows))
            db = FeatureCollection(sets)
            lens = np.array([s.n for s in db], dtype=np.int64)
            offsets = np.concatenate(([0], np.cumsum(lens)))
            flat = np.concatenate([s.unit_f64 for s in db], axis=0)
            approx = ApproxParams(seed=seed, probe=probe, rescore_factor=rescore)
            index = LocalIndex(
                db=db, mode=mode, approx=approx, flat=flat, offsets=offsets
            )
            if mode == "approx":
                k = binio.read_u32(f)
                index.codebook = (
                    binio.read_f32_array(f, k * dim).reshape(k, dim).astype(np.float64)
                )
                index.posting_image = []
                index.posting_descriptor = []
                for _ in range(k):
                    size = binio.read_u32(f)
                    index.posting_image.append(binio.read_u32_array(f, size))
                    index.posting_descriptor.append(binio.read_u32_array(f, size))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return index
