"""Graph construction: similarities, edge weights, and k-NN sparsification.

The per-pair similarity is the adjusted cosine of beta-weighted feature
vectors, centered on the graph-wide mean weighted vector.  Similarities map
to edge weights through a steep squashing curve,

    w = (tanh(alpha1 * (m - alpha2)) + 1) / 2,

evaluated in its algebraically identical logistic form 1/(1 + exp(-2*
alpha1*(m - alpha2))), which stays strictly positive where the tanh form
underflows.  A pair keeps its edge when either endpoint ranks the other
among its k most similar nodes (union rule).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DegenerateGraphError
from .features import DEGENERATE_NORM, FeatureWeights, apply_weights
from .model import CorrelationGraph, WindowConfig

#: degrees at or below this floor mark a node as isolated
DEGREE_FLOOR = 1e-12
#: largest representable edge weight strictly below 1
_MAX_WEIGHT = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class SimilarityParams:
    """Shape of the similarity-to-weight curve and the k-NN budget."""

    alpha1: float = 20.0
    alpha2: float = 0.0
    k: int = 200

    def __post_init__(self) -> None:
        if self.alpha1 <= 0.0:
            raise ValueError(f"alpha1 must be positive, got {self.alpha1}")
        if not (-1.0 < self.alpha2 < 1.0):
            raise ValueError(f"alpha2 must lie in (-1, 1), got {self.alpha2}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


def edge_weight(m, params: SimilarityParams):
    """Map similarity in [-1, 1] to an edge weight in (0, 1).

    Strictly increasing in m; equals 1/2 exactly at m = alpha2.  Accepts a
    scalar or an array.  The result is capped one ulp below 1 so stored
    weights always satisfy w < 1 even where the curve saturates.
    """
    m_arr = np.asarray(m, dtype=float)
    if np.any(m_arr < -1.0) or np.any(m_arr > 1.0):
        raise ValueError("similarity outside [-1, 1]")
    w = expit(2.0 * params.alpha1 * (m_arr - params.alpha2))
    w = np.minimum(w, _MAX_WEIGHT)
    if np.isscalar(m) or m_arr.ndim == 0:
        return float(w)
    return w


def similarity_matrix(weighted: np.ndarray) -> np.ndarray:
    """All pairwise adjusted cosines of the rows of a weighted feature matrix.

    Rows are centered on their common mean; a centered row with norm below
    DEGENERATE_NORM gets similarity 0 to every other node.  The result is
    symmetric bit-exactly (upper triangle computed once and mirrored) with a
    unit diagonal for non-degenerate rows.
    """
    weighted = np.asarray(weighted, dtype=float)
    centered = weighted - weighted.mean(axis=0)
    norms = np.sqrt((centered * centered).sum(axis=1))
    degenerate = norms < DEGENERATE_NORM
    safe = np.where(degenerate, 1.0, norms)
    unit = centered / safe[:, None]
    unit[degenerate] = 0.0
    sims = unit @ unit.T
    np.clip(sims, -1.0, 1.0, out=sims)
    upper = np.triu(sims, 1)
    sims = upper + upper.T
    np.fill_diagonal(sims, np.where(degenerate, 0.0, 1.0))
    return sims


def knn_neighbors(similarities: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of pairs kept under the union k-NN rule.

    A pair (i, j) is kept when j is among i's k most similar nodes or i is
    among j's; ties rank the lower index first; self pairs are never kept.
    k of n - 1 or more keeps every pair.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    similarities = np.asarray(similarities, dtype=float)
    n = similarities.shape[0]
    if similarities.shape != (n, n):
        raise ValueError("similarity matrix must be square")
    mask = np.zeros((n, n), dtype=bool)
    if n < 2:
        return mask
    if k >= n - 1:
        mask[:] = True
        np.fill_diagonal(mask, False)
        return mask
    ranked = similarities.copy()
    np.fill_diagonal(ranked, -np.inf)
    # stable argsort on descending similarity resolves ties by lower index
    order = np.argsort(-ranked, axis=1, kind="stable")
    rows = np.repeat(np.arange(n), k)
    mask[rows, order[:, :k].ravel()] = True
    mask |= mask.T
    return mask


def assemble_weights(
    features: np.ndarray,
    weights: FeatureWeights,
    params: SimilarityParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Edge weight matrix and degree vector for one set of feature rows.

    `features` holds one unscaled-by-beta (but already z-scored) row per
    node.  Edge weights are computed for the pairs selected by the union
    k-NN rule and mirrored bit-exactly; a node whose selected edges all
    vanish would have zero degree, which is treated as degenerate.
    """
    features = np.asarray(features, dtype=float)
    n = features.shape[0]
    sims = similarity_matrix(apply_weights(features, weights))
    mask = knn_neighbors(sims, params.k)
    w = np.zeros((n, n))
    w[mask] = edge_weight(sims[mask], params)
    upper = np.triu(w, 1)
    w = upper + upper.T
    degrees = w.sum(axis=1)
    if np.any(degrees <= DEGREE_FLOOR):
        isolated = int(np.flatnonzero(degrees <= DEGREE_FLOOR)[0])
        raise DegenerateGraphError(
            f"node {isolated} is isolated (degree {degrees[isolated]:.3e})"
        )
    return w, degrees


def build_graph(
    anchor: int,
    window: WindowConfig,
    features: np.ndarray,
    label_mask: np.ndarray,
    label_values: np.ndarray,
    weights: FeatureWeights,
    params: SimilarityParams,
) -> CorrelationGraph:
    """Assemble the correlation graph for one window."""
    features = np.asarray(features, dtype=float)
    n = window.n_nodes
    if features.shape[0] != n:
        raise ValueError(f"feature matrix has {features.shape[0]} rows, window has {n} nodes")
    w, degrees = assemble_weights(features, weights, params)
    return CorrelationGraph(
        anchor=anchor,
        window=window,
        weights=w,
        degrees=degrees,
        label_mask=np.asarray(label_mask, dtype=bool).copy(),
        label_values=np.asarray(label_values, dtype=float).copy(),
    )
