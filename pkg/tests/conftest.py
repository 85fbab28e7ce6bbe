"""Shared fixtures: the full-scale benchmark is built once per session."""

import time
from dataclasses import dataclass

import pytest

from l2g.chamfer import ChamferParams
from l2g.features import FeatureCollection, GlobalStore
from l2g.evaluation import GroundTruth
from l2g.index import LocalIndex, SparseDistances, build_index, precompute_sparse_distances
from l2g.synth import generate_partial_match_benchmark

ACCEPTANCE_SEED = 42
ACCEPTANCE_DB = 2000
ACCEPTANCE_QUERIES = 50
ACCEPTANCE_DISTRACTORS = 1500
ACCEPTANCE_K_NN = 700


@dataclass
class AcceptanceBench:
    database: FeatureCollection
    queries: FeatureCollection
    globals_store: GlobalStore
    gt: GroundTruth
    index: LocalIndex
    sparse: SparseDistances
    chamfer: ChamferParams
    build_seconds: float


@pytest.fixture(scope="session")
def acceptance_bench() -> AcceptanceBench:
    """Benchmark of criterion scale: 2000 db / 50 queries / 1500 distractors,
    exact index and the offline k_nn=700 neighbor store."""
    t0 = time.time()
    database, queries, store, gt = generate_partial_match_benchmark(
        ACCEPTANCE_SEED, ACCEPTANCE_DB, ACCEPTANCE_QUERIES, ACCEPTANCE_DISTRACTORS
    )
    chamfer = ChamferParams()
    index = build_index(database, "exact")
    sparse = precompute_sparse_distances(index, ACCEPTANCE_K_NN, chamfer)
    return AcceptanceBench(
        database=database,
        queries=queries,
        globals_store=store,
        gt=gt,
        index=index,
        sparse=sparse,
        chamfer=chamfer,
        build_seconds=time.time() - t0,
    )
