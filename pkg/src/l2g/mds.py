"""Weighted SMACOF multidimensional scaling on bounded dissimilarities.

Handles incomplete matrices (missing entries are filled with the maximum
distance 1 before embedding), metric and non-metric targets, and arbitrary
non-negative symmetric weights.  The non-metric path fits disparities by
weighted isotonic regression (pool adjacent violators) with ties pooled
into single blocks, then rescales them so their weighted sum of squares
matches that of the input dissimilarities; with that convention the
recorded stress trace is non-increasing in both modes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DegenerateWeights, EigenFailure, NonFinite

STRESS_FLOOR = 1e-12  # denominator guard in the relative-decrease test


@dataclass(frozen=True)
class DissimilarityMatrix:
    """Symmetric (n, n) dissimilarities in [0, 1] with a missing-entry mask.

    Masked entries carry no value (stored as NaN) until filled.  The
    diagonal is zero and never masked.
    """

    values: np.ndarray
    mask: np.ndarray  # True where the entry is missing

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        n = values.shape[0]
        if values.shape != (n, n) or mask.shape != (n, n):
            raise ValueError(f"expected square matrices, got {values.shape}")
        if not np.array_equal(mask, mask.T):
            raise ValueError("mask must be symmetric")
        if np.any(np.diag(mask)):
            raise ValueError("diagonal entries cannot be missing")
        if np.any(np.diag(values) != 0.0):
            raise ValueError("diagonal must be exactly zero")
        observed = values[~mask]
        if np.any(np.isnan(observed)):
            raise ValueError("observed entries must not be NaN")
        if np.any((observed < 0.0) | (observed > 1.0)):
            raise ValueError("dissimilarities must lie in [0, 1]")
        sym = values.copy()
        sym[mask] = 0.0
        if not np.array_equal(sym, sym.T):
            raise ValueError("observed entries must be symmetric")

    @classmethod
    def complete(cls, values: np.ndarray) -> "DissimilarityMatrix":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.zeros(values.shape, dtype=bool))

    @classmethod
    def with_missing(cls, values: np.ndarray, mask: np.ndarray) -> "DissimilarityMatrix":
        values = np.asarray(values, dtype=np.float64).copy()
        mask = np.asarray(mask, dtype=bool)
        values[mask] = np.nan
        return cls(values, mask)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def is_complete(self) -> bool:
        return not self.mask.any()


@dataclass(frozen=True)
class WeightMatrix:
    """Symmetric non-negative weights with zero diagonal.

    Every point must have at least one positive off-diagonal weight,
    otherwise it is unconstrained and the embedding is ill-posed.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        n = values.shape[0]
        if values.shape != (n, n):
            raise ValueError(f"expected a square matrix, got {values.shape}")
        if not np.array_equal(values, values.T):
            raise ValueError("weights must be symmetric")
        if np.any(values < 0.0):
            raise ValueError("weights must be non-negative")
        if np.any(np.diag(values) != 0.0):
            raise ValueError("diagonal weights must be zero")
        if np.any(values.sum(axis=1) <= 0.0):
            i = int(np.argmin(values.sum(axis=1)))
            raise DegenerateWeights(f"point {i} has no positive weight")

    @classmethod
    def uniform(cls, n: int) -> "WeightMatrix":
        values = np.ones((n, n)) - np.eye(n)
        return cls(values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def is_uniform(self) -> bool:
        off = ~np.eye(self.n, dtype=bool)
        return bool(np.all(self.values[off] == 1.0))


@dataclass(frozen=True)
class MdsConfig:
    """Knobs for one SMACOF run.

    eps is the relative stress-decrease threshold; mode selects metric
    targets (raw dissimilarities) or non-metric disparities; init picks
    Torgerson double-centering or a seeded random start.
    """

    dim: int = 128
    eps: float = 0.1
    max_iter: int = 100
    mode: str = "metric"
    init: str = "classical"
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.mode not in ("metric", "nonmetric"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.init not in ("classical", "random"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class Embedding:
    """SMACOF output: coordinates plus the per-iteration stress trace.

    stress_trace[0] is the stress of the initial configuration, so the
    iteration count is len(stress_trace) - 1.
    """

    coords: np.ndarray
    stress_trace: list[float]
    converged: bool
    init_seed_used: int | None = None

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def n_iter(self) -> int:
        return len(self.stress_trace) - 1


def fill_missing(matrix: DissimilarityMatrix) -> DissimilarityMatrix:
    """Replace every masked off-diagonal entry with the maximum distance 1."""
    if matrix.is_complete:
        return matrix
    values = matrix.values.copy()
    values[matrix.mask] = 1.0
    return DissimilarityMatrix.complete(values)


def classical_init(matrix: DissimilarityMatrix, dim: int) -> np.ndarray:
    """Torgerson double-centering initialization.

    Squared dissimilarities are double-centered, the top-dim eigenpairs
    extracted (negative eigenvalues clamped to zero), and coordinates
    scaled by the square roots of the eigenvalues.  Exact for Euclidean
    inputs with sufficient dim.
    """
    if not matrix.is_complete:
        raise ValueError("classical_init requires a complete matrix")
    d2 = matrix.values**2
    n = matrix.n
    # B = -0.5 * J d2 J with J the centering projector
    row_means = d2.mean(axis=1, keepdims=True)
    b = -0.5 * (d2 - row_means - row_means.T + d2.mean())
    k = min(dim, n)
    try:
        eigvals, eigvecs = scipy.linalg.eigh(b, subset_by_index=[n - k, n - 1])
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise EigenFailure(str(exc)) from exc
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    coords = eigvecs[:, order] * np.sqrt(eigvals)[None, :]
    if k < dim:
        coords = np.hstack([coords, np.zeros((n, dim - k))])
    return coords


def _pairwise_distances(coords: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix via the Gram trick, zero diagonal."""
    sq = np.sum(coords * coords, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (coords @ coords.T)
    np.maximum(d2, 0.0, out=d2)
    dist = np.sqrt(d2)
    np.fill_diagonal(dist, 0.0)
    return dist


def stress(
    coords: np.ndarray,
    targets: DissimilarityMatrix | np.ndarray,
    weights: WeightMatrix | np.ndarray | None = None,
) -> float:
    """Raw stress sum_{i<j} w_ij (target_ij - dist_ij)^2."""
    t = targets.values if isinstance(targets, DissimilarityMatrix) else np.asarray(targets)
    dist = _pairwise_distances(np.asarray(coords, dtype=np.float64))
    diff = t - dist
    if weights is None:
        w = 1.0
    elif isinstance(weights, WeightMatrix):
        w = weights.values
    else:
        w = np.asarray(weights)
    total = float(np.sum(w * diff * diff))
    # each off-diagonal pair appears twice; the diagonal contributes zero
    return 0.5 * total


def _pava(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted pool-adjacent-violators: non-decreasing least-squares fit."""
    n = len(values)
    means = np.empty(n)
    wsum = np.empty(n)
    length = np.empty(n, dtype=np.intp)
    top = 0
    for i in range(n):
        means[top] = values[i]
        wsum[top] = weights[i]
        length[top] = 1
        top += 1
        while top > 1 and means[top - 2] > means[top - 1]:
            w = wsum[top - 2] + wsum[top - 1]
            if w > 0:
                means[top - 2] = (
                    wsum[top - 2] * means[top - 2] + wsum[top - 1] * means[top - 1]
                ) / w
            wsum[top - 2] = w
            length[top - 2] += length[top - 1]
            top -= 1
    return np.repeat(means[:top], length[:top])


def isotonic_disparities(d: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Monotone least-squares fit of dist against the rank order of d.

    Tied dissimilarities are pooled into a single block, so equal inputs
    get equal disparities.  The result is returned aligned with the input
    order and satisfies d_i < d_j  =>  d*_i <= d*_j.
    """
    d = np.asarray(d, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    if d.shape != dist.shape or d.ndim != 1:
        raise ValueError("d and dist must be 1-d arrays of equal length")
    return _weighted_disparities(d, dist, np.ones_like(d))


def _weighted_disparities(
    d: np.ndarray, dist: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    order = np.argsort(d, kind="stable")
    d_sorted = d[order]
    dist_sorted = dist[order]
    w_sorted = weights[order]
    # pool ties in d to single blocks before running PAVA
    boundaries = np.flatnonzero(np.diff(d_sorted) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    block_w = np.add.reduceat(w_sorted, starts)
    block_vals = np.add.reduceat(w_sorted * dist_sorted, starts)
    safe_w = np.where(block_w > 0, block_w, 1.0)
    block_means = np.where(block_w > 0, block_vals / safe_w, 0.0)
    fitted_blocks = _pava(block_means, block_w)
    counts = np.diff(np.concatenate((starts, [len(d_sorted)])))
    fitted = np.repeat(fitted_blocks, counts)
    out = np.empty_like(fitted)
    out[order] = fitted
    return out


def smacof(
    matrix: DissimilarityMatrix,
    weights: WeightMatrix | None = None,
    config: MdsConfig = MdsConfig(),
    init_coords: np.ndarray | None = None,
) -> Embedding:
    """Embed a (possibly incomplete) dissimilarity matrix by stress majorization.

    Missing entries are first filled with the maximum distance 1.  Each
    iteration applies the Guttman transform X <- V+ B(X) X; for uniform
    weights V+ reduces to scaling by 1/n.  In non-metric mode disparities
    are refit by isotonic regression before each stress evaluation and
    rescaled to match the weighted sum of squares of the input, which
    keeps the recorded stress trace non-increasing.  Iteration stops when
    the relative stress decrease drops below config.eps or at
    config.max_iter.

    Parameters
    ----------
    matrix : DissimilarityMatrix
        Target dissimilarities, n >= 2.
    weights : WeightMatrix, optional
        Defaults to uniform weights.
    config : MdsConfig
        Dimension, convergence threshold, mode, and initialization.
    init_coords : ndarray, optional
        Explicit (n, dim) starting configuration overriding config.init.

    Returns
    -------
    Embedding with coordinates, stress trace, and convergence flag.
    """
    n = matrix.n
    if n < 2:
        raise ValueError("smacof needs at least two points")
    matrix = fill_missing(matrix)
    if weights is None:
        weights = WeightMatrix.uniform(n)
    if weights.n != n:
        raise DegenerateWeights(
            f"weight matrix size {weights.n} does not match n={n}"
        )
    w = weights.values
    d = matrix.values
    uniform = weights.is_uniform
    v_pinv = None
    if not uniform:
        v = np.diag(w.sum(axis=1)) - w
        v_pinv = np.linalg.pinv(v)

    init_seed_used: int | None = None
    if init_coords is not None:
        coords = np.array(init_coords, dtype=np.float64)
        if coords.shape != (n, config.dim):
            raise ValueError(
                f"init_coords must have shape {(n, config.dim)}, got {coords.shape}"
            )
    elif config.init == "classical":
        try:
            coords = classical_init(matrix, config.dim)
        except EigenFailure:
            init_seed_used = config.seed
            rng = np.random.default_rng(config.seed)
            coords = rng.uniform(size=(n, config.dim))
    else:
        init_seed_used = config.seed
        rng = np.random.default_rng(config.seed)
        coords = rng.uniform(size=(n, config.dim))

    nonmetric = config.mode == "nonmetric"
    triu = np.triu_indices(n, k=1)
    w_flat = w[triu]
    active = w_flat > 0
    d_flat = d[triu]
    target_sq = float(np.sum(w_flat[active] * d_flat[active] ** 2))

    def disparity_matrix(dist: np.ndarray) -> np.ndarray:
        """Weighted isotonic fit of dist against d, rescaled onto the
        sphere sum w * delta^2 = sum w * d^2 (zero-weight pairs excluded)."""
        fitted = np.zeros_like(d_flat)
        fitted[active] = _weighted_disparities(
            d_flat[active], dist[triu][active], w_flat[active]
        )
        fitted_sq = float(np.sum(w_flat[active] * fitted[active] ** 2))
        if fitted_sq > 0 and target_sq > 0:
            fitted *= np.sqrt(target_sq / fitted_sq)
        delta = np.zeros((n, n))
        delta[triu] = fitted
        return delta + delta.T

    dist = _pairwise_distances(coords)
    delta = disparity_matrix(dist) if nonmetric else d
    trace = [stress(coords, delta, weights)]
    converged = False
    for _ in range(config.max_iter):
        # Guttman transform with the current targets
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dist > 0, w * delta / np.where(dist > 0, dist, 1.0), 0.0)
        b = -ratio
        np.fill_diagonal(b, ratio.sum(axis=1))
        if uniform:
            coords = (b @ coords) / n
        else:
            coords = v_pinv @ (b @ coords)
        dist = _pairwise_distances(coords)
        if nonmetric:
            delta = disparity_matrix(dist)
        cur = stress(coords, delta, weights)
        prev = trace[-1]
        trace.append(cur)
        if (prev - cur) / max(prev, STRESS_FLOOR) < config.eps:
            converged = True
            break
    if not np.all(np.isfinite(coords)):
        raise NonFinite("SMACOF produced non-finite coordinates")
    return Embedding(
        coords=coords,
        stress_trace=trace,
        converged=converged,
        init_seed_used=init_seed_used,
    )
