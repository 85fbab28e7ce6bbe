"""Seeded synthetic benchmarks that make the pipeline claims testable.

The partial-match benchmark builds the failure mode that motivates local
search.  Each queried scene has a descriptor pool; the query sees a wide
window of it, while database images of the scene copy only a small
fraction of the query-visible descriptors (easy >= 20% of their rows,
hard 10-20%, junk-level near-duplicates below that) plus a few pool
descriptors outside the query's view, which is what ties same-scene
images to each other.  Every database image also samples a universal
vocabulary shared across the corpus; the upper tail of that sampling
turns some distractors into confusers that interleave with the weakest
true matches, so the initial local ranking is good but imperfect.
Global features are the mean descriptor plus heavy noise: informative
about the scene gist but unreliable per image, which is what makes
merging them with the local side worthwhile.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import GroundTruth, QueryGroundTruth
from .features import (
    FeatureCollection,
    GlobalFeature,
    GlobalStore,
    LocalFeatureSet,
)
from .mds import DissimilarityMatrix


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    rows = rng.normal(size=(n, dim))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows


def _tinted_rows(
    rng: np.random.Generator, n: int, dim: int, gist: np.ndarray, weight: float
) -> np.ndarray:
    """Unit rows sharing a common gist component of the given weight."""
    rows = weight * gist[None, :] + np.sqrt(1.0 - weight**2) * _unit_rows(rng, n, dim)
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows


def generate_euclidean_instance(
    seed: int, n: int, dim: int
) -> tuple[np.ndarray, DissimilarityMatrix]:
    """Uniform points in [0,1]^dim with exact distances rescaled to [0,1].

    Points are rescaled alongside the distances, so the matrix equals the
    pairwise distances of the returned points exactly.
    """
    if n < 2:
        raise ValueError("need at least two points")
    rng = np.random.default_rng(seed)
    points = rng.uniform(size=(n, dim))
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    dist = np.triu(dist, k=1)
    dist = dist + dist.T  # exactly symmetric
    dmax = dist.max()
    if dmax > 0:
        dist = dist / dmax
        points = points / dmax
    return points, DissimilarityMatrix.complete(dist)


@dataclass(frozen=True)
class BenchmarkParams:
    """Construction constants for the partial-match benchmark.

    Shared-descriptor counts are inclusive ranges over the query-visible
    scene window; with 64 rows per database image the defaults put easy
    matches at 20-29% overlap and hard ones at 10-19%.  universal_draws
    rows of every database image come from a corpus-wide vocabulary that
    the query also carries, producing confuser distractors.  The gist
    weights control how much scene identity leaks into descriptors (and
    hence into the mean-based global features).
    """

    dim: int = 32
    query_scene_descriptors: int = 20
    query_universal_descriptors: int = 6
    db_descriptors: int = 48
    scene_extra_pool: int = 32
    scene_extra: int = 20  # pool descriptors outside the query's view
    universal_pool: int = 64
    universal_draws: int = 6
    distractor_universal: tuple[int, int] = (2, 12)
    scene_size: int = 12  # per scene: easy, hard, far views, mixed, 2 junk
    far_slots: int = 2  # distant views: hard overlap, no extras, gist-heavy
    shared_easy: tuple[int, int] = (10, 14)
    shared_hard: tuple[int, int] = (5, 9)
    shared_junk: tuple[int, int] = (2, 3)
    distractor_descriptors: tuple[int, int] = (44, 52)
    noise_sigma: float = 0.02
    # hard matches repeat structure: their shared rows copy this fraction of
    # unique query descriptors (repetitive facades), easy matches copy
    # distinct ones
    hard_unique_fraction: float = 0.35
    far_unique_fraction: float = 0.18
    anchor_gist: float = 0.25
    filler_gist: float = 0.20
    global_noise: float = 0.025
    easy_threshold: float = 0.2  # shared fraction at/above which a match is easy

    @property
    def query_descriptors(self) -> int:
        return self.query_scene_descriptors + self.query_universal_descriptors

    def __post_init__(self):
        if self.scene_size < 4 + self.far_slots:
            raise ValueError("scene_size too small for easy/hard/far/junk slots")
        if self.shared_easy[1] > self.query_scene_descriptors:
            raise ValueError("cannot share more descriptors than the query window")
        needed = self.shared_easy[1] + self.scene_extra + self.universal_draws
        if needed > self.db_descriptors:
            raise ValueError("shared + extra + universal rows exceed the image size")
        if self.query_universal_descriptors > self.universal_pool:
            raise ValueError("query cannot carry more universal rows than exist")


def _noisy_copy(
    rng: np.random.Generator, rows: np.ndarray, sigma: float
) -> np.ndarray:
    out = rows + sigma * rng.normal(size=rows.shape)
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out


def _scene_image(
    rng: np.random.Generator,
    window: np.ndarray,
    extras: np.ndarray,
    universal: np.ndarray,
    gist: np.ndarray,
    n_shared: int,
    params: BenchmarkParams,
    far: bool = False,
) -> np.ndarray:
    """One database image: noisy copies of n_shared query-visible rows,
    scene_extra outside-view rows, universal vocabulary, tinted filler.

    Below the easy overlap threshold the copies cover only a reduced set
    of unique window rows (repeated structure), so weak matches really
    are weak on the query side.  Far views additionally skip the
    outside-view rows: no other image of the scene shares local structure
    with them, so only their (gist-heavy) global feature gives them away.
    """
    parts = []
    if n_shared > 0:
        easy = n_shared / params.db_descriptors >= params.easy_threshold
        if far:
            fraction = params.far_unique_fraction
        elif easy:
            fraction = 1.0
        else:
            fraction = params.hard_unique_fraction
        unique = min(n_shared, max(2, int(round(n_shared * fraction))))
        rows = rng.choice(window.shape[0], size=unique, replace=False)
        picked = np.concatenate(
            [rows, rng.choice(rows, size=n_shared - unique, replace=True)]
        )
        parts.append(_noisy_copy(rng, window[picked], params.noise_sigma))
    n_extra = 0 if far else min(params.scene_extra, extras.shape[0])
    if n_extra > 0:
        picked = rng.choice(extras.shape[0], size=n_extra, replace=False)
        parts.append(_noisy_copy(rng, extras[picked], params.noise_sigma))
    n_univ = min(params.universal_draws, universal.shape[0])
    if n_univ > 0:
        picked = rng.choice(universal.shape[0], size=n_univ, replace=False)
        parts.append(_noisy_copy(rng, universal[picked], params.noise_sigma))
    n_filler = params.db_descriptors - sum(p.shape[0] for p in parts)
    if n_filler > 0:
        parts.append(_tinted_rows(rng, n_filler, params.dim, gist, params.filler_gist))
    return np.vstack(parts).astype(np.float32)


def _global_feature(
    rng: np.random.Generator, image_id: str, descriptors: np.ndarray, sigma: float
) -> GlobalFeature:
    vec = descriptors.astype(np.float64).mean(axis=0)
    vec = vec + sigma * rng.normal(size=vec.shape)
    norm = np.linalg.norm(vec)
    if norm == 0:
        vec = np.ones_like(vec)
        norm = np.linalg.norm(vec)
    return GlobalFeature(image_id, (vec / norm).astype(np.float32))


def generate_partial_match_benchmark(
    seed: int,
    n_db: int,
    n_queries: int,
    n_distractors: int,
    params: BenchmarkParams = BenchmarkParams(),
) -> tuple[FeatureCollection, FeatureCollection, GlobalStore, GroundTruth]:
    """Deterministic benchmark: (database, queries, globals, ground truth).

    The database holds n_db scene images followed by n_distractors noise
    images; the global store covers database and query images.  The first
    n_queries scenes are queried; every queried scene contributes at
    least one easy and one hard positive plus junk-level near-duplicates.
    """
    if n_db < 1 or n_queries < 1 or n_distractors < 0:
        raise ValueError("need n_db >= 1, n_queries >= 1, n_distractors >= 0")
    if n_db < n_queries * params.scene_size:
        raise ValueError(
            f"n_db={n_db} too small for {n_queries} queries "
            f"({params.scene_size} images per scene)"
        )
    rng = np.random.default_rng(seed)
    dim = params.dim
    n_scenes = (n_db + params.scene_size - 1) // params.scene_size

    universal = _unit_rows(rng, params.universal_pool, dim)
    gists = _unit_rows(rng, n_scenes, dim)
    windows = []
    extras = []
    query_universal = []
    for s in range(n_scenes):
        windows.append(
            _tinted_rows(rng, params.query_scene_descriptors, dim, gists[s],
                         params.anchor_gist)
        )
        extras.append(
            _tinted_rows(rng, params.scene_extra_pool, dim, gists[s],
                         params.anchor_gist)
        )
        query_universal.append(
            rng.choice(params.universal_pool,
                       size=params.query_universal_descriptors, replace=False)
        )

    db_sets: list[LocalFeatureSet] = []
    globals_: list[GlobalFeature] = []
    easy_ids: list[list[str]] = [[] for _ in range(n_scenes)]
    hard_ids: list[list[str]] = [[] for _ in range(n_scenes)]
    junk_ids: list[list[str]] = [[] for _ in range(n_scenes)]

    n_desc = params.db_descriptors
    for i in range(n_db):
        scene = i // params.scene_size
        slot = i % params.scene_size
        image_id = f"db{i:06d}"
        junk_slot = slot >= params.scene_size - 2
        far_slot = 2 <= slot < 2 + params.far_slots and not junk_slot
        if junk_slot:
            lo, hi = params.shared_junk
        elif slot == 0:
            lo, hi = params.shared_easy
        elif slot == 1 or far_slot:
            lo, hi = params.shared_hard
        else:
            lo, hi = params.shared_hard[0], params.shared_easy[1]
        n_shared = int(rng.integers(lo, hi + 1))
        desc = _scene_image(
            rng, windows[scene], extras[scene], universal, gists[scene],
            n_shared, params, far=far_slot,
        )
        db_sets.append(LocalFeatureSet(image_id, desc))
        globals_.append(_global_feature(rng, image_id, desc, params.global_noise))
        if junk_slot:
            junk_ids[scene].append(image_id)
        elif n_shared / n_desc >= params.easy_threshold:
            easy_ids[scene].append(image_id)
        else:
            hard_ids[scene].append(image_id)

    lo_d, hi_d = params.distractor_descriptors
    lo_u, hi_u = params.distractor_universal
    for i in range(n_distractors):
        image_id = f"dx{i:06d}"
        count = int(rng.integers(lo_d, hi_d + 1))
        n_univ = min(int(rng.integers(lo_u, hi_u + 1)), params.universal_pool, count)
        picked = rng.choice(params.universal_pool, size=n_univ, replace=False)
        # distractors borrow a random scene's gist: lookalike architecture
        tint = gists[int(rng.integers(n_scenes))]
        rows = np.vstack(
            [
                _noisy_copy(rng, universal[picked], params.noise_sigma),
                _tinted_rows(rng, count - n_univ, dim, tint, params.filler_gist),
            ]
        ).astype(np.float32)
        db_sets.append(LocalFeatureSet(image_id, rows))
        globals_.append(_global_feature(rng, image_id, rows, params.global_noise))

    query_sets: list[LocalFeatureSet] = []
    gt_queries: dict[str, QueryGroundTruth] = {}
    for q in range(n_queries):
        query_id = f"q{q:04d}"
        desc = np.vstack(
            [windows[q], universal[query_universal[q]]]
        ).astype(np.float32)
        query_sets.append(LocalFeatureSet(query_id, desc))
        globals_.append(_global_feature(rng, query_id, desc, params.global_noise))
        gt_queries[query_id] = QueryGroundTruth(
            easy=frozenset(easy_ids[q]),
            hard=frozenset(hard_ids[q]),
            junk=frozenset(junk_ids[q]),
        )

    database = FeatureCollection(db_sets)
    queries = FeatureCollection(query_sets)
    store = GlobalStore(globals_)
    return database, queries, store, GroundTruth(gt_queries)
