"""Asymmetric Chamfer similarity between local descriptor sets.

The similarity of a query set Q against a database set X is the mean, over
query descriptors, of the best (clamped) inner product in X:

    s(Q -> X) = (1/|Q|) * sum_q max(0, max_x <q, x>)

With unit-norm rows this lands in [0, 1].  The dissimilarity applies a
power modulation to the complement, d = (1 - s)^p, which keeps d in [0, 1]
and strictly reverses the similarity ordering for any p > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .features import LocalFeatureSet

DEFAULT_POWER = 0.01

# Similarities this close to 1 are floating-point residue of an exact
# match; snap them so self-matches get dissimilarity exactly 0 under any
# power.
SELF_MATCH_SNAP = 1e-12


@dataclass(frozen=True)
class ChamferParams:
    """power modulates small vs large distances; direction is query->db."""

    power: float = DEFAULT_POWER
    direction: str = "query_to_db"

    def __post_init__(self):
        if not (math.isfinite(self.power) and self.power > 0):
            raise ValueError(f"power must be finite and positive, got {self.power}")
        if self.direction != "query_to_db":
            raise ValueError(f"unsupported direction {self.direction!r}")


def snap_similarity(s: float) -> float:
    if s >= 1.0 - SELF_MATCH_SNAP:
        return 1.0
    return max(s, 0.0)


def similarity_from_products(products: np.ndarray) -> float:
    """Chamfer similarity given the (|Q|, |X|) inner-product matrix."""
    best = products.max(axis=1)
    np.maximum(best, 0.0, out=best)
    return snap_similarity(float(best.mean()))


def chamfer_similarity(query: LocalFeatureSet, db: LocalFeatureSet) -> float:
    """s(Q -> X) in [0, 1]; asymmetric under argument swap."""
    if query.dim != db.dim:
        raise DimensionMismatch(f"query dim {query.dim} != db dim {db.dim}")
    return similarity_from_products(query.unit_f64 @ db.unit_f64.T)


def dissimilarity_from_similarity(s: float, params: ChamferParams) -> float:
    return float((1.0 - min(max(s, 0.0), 1.0)) ** params.power)


def chamfer_dissimilarity(
    query: LocalFeatureSet, db: LocalFeatureSet, params: ChamferParams
) -> float:
    """(1 - s(Q -> X))^power, in [0, 1], monotone decreasing in s."""
    return dissimilarity_from_similarity(chamfer_similarity(query, db), params)
