"""SMACOF, classical init, isotonic disparities, and matrix plumbing."""

import numpy as np
import pytest

from l2g import errors
from l2g.mds import (
    DissimilarityMatrix,
    MdsConfig,
    WeightMatrix,
    classical_init,
    fill_missing,
    isotonic_disparities,
    smacof,
    stress,
)
from l2g.synth import generate_euclidean_instance


def pairwise(coords):
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff**2).sum(axis=2))


def naive_pava(values):
    """Oracle: repeatedly merge adjacent decreasing blocks (unit weights)."""
    blocks = [[v] for v in values]
    changed = True
    while changed:
        changed = False
        for i in range(len(blocks) - 1):
            a = sum(blocks[i]) / len(blocks[i])
            b = sum(blocks[i + 1]) / len(blocks[i + 1])
            if a > b:
                blocks[i] = blocks[i] + blocks[i + 1]
                del blocks[i + 1]
                changed = True
                break
    out = []
    for blk in blocks:
        out.extend([sum(blk) / len(blk)] * len(blk))
    return np.array(out)


# ---------------------------------------------------------------- matrices


def test_matrix_validation():
    good = np.array([[0, 0.5], [0.5, 0]])
    DissimilarityMatrix.complete(good)
    with pytest.raises(ValueError):
        DissimilarityMatrix.complete(np.array([[0, 1.5], [1.5, 0]]))
    with pytest.raises(ValueError):
        DissimilarityMatrix.complete(np.array([[0.1, 0.5], [0.5, 0]]))
    with pytest.raises(ValueError):
        DissimilarityMatrix.complete(np.array([[0, 0.5], [0.4, 0]]))


def test_weight_validation():
    WeightMatrix.uniform(3)
    with pytest.raises(errors.DegenerateWeights):
        WeightMatrix(np.array([[0, 0, 0], [0, 0, 1], [0, 1, 0]], float))
    with pytest.raises(ValueError):
        WeightMatrix(np.array([[0, -1], [-1, 0]], float))


def test_fill_missing_complete_unchanged():
    values = np.array([[0, 0.3], [0.3, 0]])
    m = DissimilarityMatrix.complete(values)
    assert fill_missing(m) is m


def test_fill_missing_sets_exact_one():
    values = np.array([[0, 0.2, np.nan], [0.2, 0, 0.7], [np.nan, 0.7, 0]])
    mask = np.isnan(values)
    m = DissimilarityMatrix(values, mask)
    filled = fill_missing(m)
    assert filled.values[0, 2] == 1.0
    assert filled.values[2, 0] == 1.0
    assert filled.values[0, 1] == 0.2
    assert filled.is_complete


def test_fill_missing_all_masked():
    n = 4
    values = np.zeros((n, n))
    mask = ~np.eye(n, dtype=bool)
    m = DissimilarityMatrix.with_missing(values, mask)
    filled = fill_missing(m)
    off = ~np.eye(n, dtype=bool)
    assert np.all(filled.values[off] == 1.0)


def test_fill_missing_randomized_masks():
    rng = np.random.default_rng(0)
    for _ in range(25):
        n = int(rng.integers(3, 12))
        vals = np.round(rng.uniform(0, 1, (n, n)), 6)
        vals = np.triu(vals, 1)
        vals = vals + vals.T
        mask = rng.uniform(size=(n, n)) < 0.4
        mask = np.triu(mask, 1)
        mask = mask | mask.T
        m = DissimilarityMatrix.with_missing(vals, mask)
        filled = fill_missing(m)
        assert np.all(filled.values[mask] == 1.0)
        keep = ~mask & ~np.eye(n, dtype=bool)
        np.testing.assert_array_equal(filled.values[keep], vals[keep])


# ---------------------------------------------------------- classical init


def test_classical_two_points():
    m = DissimilarityMatrix.complete(np.array([[0, 1], [1, 0]], float))
    coords = classical_init(m, 1)
    assert abs(pairwise(coords)[0, 1] - 1.0) < 1e-9


def test_classical_recovers_euclidean():
    _, matrix = generate_euclidean_instance(seed=5, n=20, dim=5)
    coords = classical_init(matrix, 5)
    np.testing.assert_allclose(pairwise(coords), matrix.values, atol=1e-6)


def test_classical_low_dim_leaves_residual():
    # unit square scaled so the diagonal is 1; 1-d projection cannot be exact
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1]]) / np.sqrt(2)
    d = pairwise(pts)
    m = DissimilarityMatrix.complete(d)
    coords = classical_init(m, 1)
    residual = stress(coords, m, WeightMatrix.uniform(4))
    assert residual > 1e-3


def test_classical_pads_extra_dims():
    m = DissimilarityMatrix.complete(np.array([[0, 1], [1, 0]], float))
    coords = classical_init(m, 5)
    assert coords.shape == (2, 5)
    assert np.all(coords[:, 1:] == 0.0)


# ------------------------------------------------------------------ stress


def test_stress_exact_fit_is_zero():
    pts, matrix = generate_euclidean_instance(seed=2, n=10, dim=3)
    assert stress(pts, matrix, WeightMatrix.uniform(10)) < 1e-20


def test_stress_coincident_points_closed_form():
    m = DissimilarityMatrix.complete(np.ones((3, 3)) - np.eye(3))
    coords = np.zeros((3, 2))
    assert stress(coords, m, WeightMatrix.uniform(3)) == pytest.approx(3.0)


def test_stress_matches_double_loop():
    rng = np.random.default_rng(9)
    for _ in range(10):
        n = int(rng.integers(3, 12))
        coords = rng.normal(size=(n, 4))
        vals = rng.uniform(0, 1, (n, n))
        vals = np.triu(vals, 1)
        vals = vals + vals.T
        w = rng.uniform(0, 1, (n, n))
        w = np.triu(w, 1)
        w = w + w.T
        expected = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                dist = np.linalg.norm(coords[i] - coords[j])
                expected += w[i, j] * (vals[i, j] - dist) ** 2
        got = stress(coords, vals, w)
        assert got == pytest.approx(expected, abs=1e-10)


# ------------------------------------------------------------- disparities


def test_disparities_monotone_input_unchanged():
    d = np.array([0.1, 0.2, 0.3, 0.4])
    dist = np.array([1.0, 2.0, 2.5, 7.0])
    np.testing.assert_array_equal(isotonic_disparities(d, dist), dist)


def test_disparities_hand_run_pava():
    # full pooling of [3, 1, 2]: expected output from a reference PAVA pass
    d = np.array([1.0, 2.0, 3.0])
    dist = np.array([3.0, 1.0, 2.0])
    np.testing.assert_allclose(isotonic_disparities(d, dist), [2.0, 2.0, 2.0])


def test_disparities_ties_pooled():
    d = np.array([0.5, 0.5, 1.0])
    dist = np.array([1.0, 3.0, 5.0])
    got = isotonic_disparities(d, dist)
    np.testing.assert_allclose(got, [2.0, 2.0, 5.0])


def test_disparities_match_naive_oracle():
    rng = np.random.default_rng(4)
    for _ in range(30):
        n = int(rng.integers(2, 40))
        d = rng.uniform(size=n)  # distinct almost surely: no tie blocks
        dist = rng.uniform(size=n) * 3
        order = np.argsort(d)
        got = isotonic_disparities(d, dist)
        np.testing.assert_allclose(got[order], naive_pava(dist[order]), atol=1e-12)


def test_disparities_order_respected():
    rng = np.random.default_rng(8)
    d = rng.uniform(size=50)
    dist = rng.uniform(size=50)
    got = isotonic_disparities(d, dist)
    order = np.argsort(d)
    assert np.all(np.diff(got[order]) >= -1e-12)


# ------------------------------------------------------------------ smacof


def test_two_points_exact():
    m = DissimilarityMatrix.complete(np.array([[0, 0.5], [0.5, 0]]))
    emb = smacof(m, config=MdsConfig(dim=1, eps=1e-12, max_iter=100))
    assert abs(pairwise(emb.coords)[0, 1] - 0.5) < 1e-6
    assert emb.stress_trace[-1] < 1e-10


def test_euclidean_recovery_50_points():
    _, matrix = generate_euclidean_instance(seed=0, n=50, dim=8)
    emb = smacof(matrix, config=MdsConfig(dim=8, eps=1e-9, max_iter=500))
    err = np.abs(pairwise(emb.coords) - matrix.values).max()
    assert err < 1e-3


def test_monotone_trace_metric_and_nonmetric():
    rng = np.random.default_rng(123)
    for trial in range(20):
        n = int(rng.integers(3, 40))
        vals = rng.uniform(0, 1, (n, n))
        vals = np.triu(vals, 1)
        vals = vals + vals.T
        w = (rng.uniform(size=(n, n)) < 0.8) * rng.uniform(0.1, 1, (n, n))
        w = np.triu(w, 1)
        w = w + w.T
        if np.any(w.sum(axis=1) <= 0):
            continue
        mode = "nonmetric" if trial % 2 else "metric"
        emb = smacof(
            DissimilarityMatrix.complete(vals),
            WeightMatrix(w),
            MdsConfig(dim=int(rng.integers(1, 6)), eps=1e-8, max_iter=60,
                      mode=mode, init="random", seed=trial),
        )
        trace = np.array(emb.stress_trace)
        assert np.all(np.diff(trace) <= 1e-12), f"trial {trial} ({mode})"


def test_missing_entries_filled_before_embedding():
    vals = np.array([[0, 0.4, np.nan], [0.4, 0, 0.5], [np.nan, 0.5, 0]])
    m = DissimilarityMatrix(vals, np.isnan(vals))
    emb = smacof(m, config=MdsConfig(dim=2, eps=1e-10, max_iter=200))
    d = pairwise(emb.coords)
    # the masked pair should be pushed toward the fill value 1
    assert d[0, 2] > d[0, 1]


def test_rigid_motion_invariance():
    rng = np.random.default_rng(6)
    _, matrix = generate_euclidean_instance(seed=3, n=20, dim=4)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    shift = rng.normal(size=4)
    init = rng.uniform(size=(20, 4))
    cfg = MdsConfig(dim=4, eps=1e-8, max_iter=50)
    emb_a = smacof(matrix, config=cfg, init_coords=init)
    emb_b = smacof(matrix, config=cfg, init_coords=init @ q + shift)
    np.testing.assert_allclose(
        pairwise(emb_a.coords), pairwise(emb_b.coords), atol=1e-9
    )


def test_nonmetric_order_fidelity():
    # monotone-transformed Euclidean input: ranks must be recovered
    from scipy.stats import spearmanr

    _, matrix = generate_euclidean_instance(seed=10, n=30, dim=4)
    transformed = DissimilarityMatrix.complete(matrix.values**2)
    emb = smacof(
        transformed,
        config=MdsConfig(dim=4, eps=1e-10, max_iter=300, mode="nonmetric"),
    )
    triu = np.triu_indices(30, k=1)
    rho = spearmanr(transformed.values[triu], pairwise(emb.coords)[triu]).statistic
    assert rho >= 0.99


def test_degenerate_weights_rejected():
    m = DissimilarityMatrix.complete(np.array([[0, 0.5], [0.5, 0]]))
    with pytest.raises(errors.DegenerateWeights):
        smacof(m, WeightMatrix.uniform(3))


def test_embedding_counts_iterations():
    _, matrix = generate_euclidean_instance(seed=1, n=15, dim=3)
    emb = smacof(matrix, config=MdsConfig(dim=3, eps=0.1, max_iter=40))
    assert emb.n_iter == len(emb.stress_trace) - 1
    assert emb.converged
