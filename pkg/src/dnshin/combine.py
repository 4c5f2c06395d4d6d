"""Weighting of the six metapath similarities into one combined matrix.

Each metapath gets one feature column: the row sums of its path-count
matrix.  A nearest-neighbor graph over domains (Euclidean distance on the
L2-normalized feature rows, unweighted, mutualized by OR) scores every
column by how well it preserves that graph's locality:

    score(f) = (f~' L f~) / (f~' D f~),   f~ = f - (f' D 1 / 1' D 1) 1

with L = D - A the graph Laplacian.  Lower scores mean better locality
preservation, so weights are normalized reciprocals.  Constant columns get
an infinite sentinel score and weight zero.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.neighbors import kneighbors_graph
from sklearn.preprocessing import normalize

from .errors import DimensionMismatchError
from .hin import HinGraph
from .metapath import ALL_METAPATHS, ClampStats, Metapath, commuting, pathsim

SCORE_EPSILON = 1e-12
SENTINEL = float("inf")


@dataclass
class MetapathWeights:
    """Raw locality scores and the normalized weights derived from them,
    both ordered like ALL_METAPATHS."""

    scores: np.ndarray
    weights: np.ndarray

    def as_dict(self) -> dict[str, dict[str, float]]:
        out = {}
        for path, score, weight in zip(ALL_METAPATHS, self.scores, self.weights):
            out[path.value] = {"score": float(score), "weight": float(weight)}
        return out


def build_features(counts: dict[Metapath, sparse.csr_array]) -> np.ndarray:
    """One column per metapath holding each domain's total path count."""
    matrices = [counts[path] for path in ALL_METAPATHS]
    n_d = matrices[0].shape[0]
    for path, matrix in zip(ALL_METAPATHS, matrices):
        if matrix.shape != (n_d, n_d):
            raise DimensionMismatchError(
                f"{path.value} counts are {matrix.shape}, expected {(n_d, n_d)}"
            )
    columns = [np.asarray(m.sum(axis=1)).ravel().astype(np.float64) for m in matrices]
    return np.column_stack(columns) if n_d else np.zeros((0, len(matrices)))


def knn_affinity(points: np.ndarray, n_neighbors: int) -> sparse.csr_array:
    """Unweighted k-nearest-neighbor graph, symmetrized with OR."""
    n = points.shape[0]
    if not 1 <= n_neighbors < n:
        raise ValueError(
            f"need 1 <= n_neighbors < n_points, got {n_neighbors} with {n} points"
        )
    graph = kneighbors_graph(points, n_neighbors=n_neighbors, mode="connectivity")
    sym = sparse.csr_array(graph + graph.T)
    sym.data[:] = 1.0
    return sym


def laplacian_scores_from_graph(
    features: np.ndarray, affinity: sparse.csr_array
) -> np.ndarray:
    """Locality-preservation score of every feature column on a fixed graph."""
    features = np.asarray(features, dtype=np.float64)
    if affinity.shape[0] != features.shape[0]:
        raise DimensionMismatchError(
            f"affinity is {affinity.shape}, features have {features.shape[0]} rows"
        )
    degrees = np.asarray(affinity.sum(axis=1)).ravel()
    total_degree = degrees.sum()
    scores = np.empty(features.shape[1])
    for r in range(features.shape[1]):
        f = features[:, r]
        if total_degree > 0:
            centered = f - (f @ degrees) / total_degree
        else:
            centered = f - f.mean()
        smoothness = centered @ (degrees * centered) - centered @ (affinity @ centered)
        variance = centered @ (degrees * centered)
        scores[r] = SENTINEL if variance <= 0 else smoothness / variance
    return scores


def laplacian_score(features: np.ndarray, knn_k: int) -> np.ndarray:
    """Score the feature columns against the neighbor graph of their own
    L2-normalized rows."""
    points = normalize(np.asarray(features, dtype=np.float64))
    return laplacian_scores_from_graph(features, knn_affinity(points, knn_k))


def scores_to_weights(scores: np.ndarray) -> MetapathWeights:
    """Map locality scores to normalized reciprocal weights.

    Sentinel (infinite) scores get weight 0.  Scores at or below
    SCORE_EPSILON indicate near-perfect locality preservation; the unit
    weight is split equally among them.  With no finite score at all, fall
    back to uniform weights and warn.
    """
    scores = np.asarray(scores, dtype=np.float64)
    k = scores.shape[0]
    finite = np.isfinite(scores)
    weights = np.zeros(k)
    if not finite.any():
        warnings.warn(
            "every metapath feature is degenerate; using uniform weights",
            stacklevel=2,
        )
        weights[:] = 1.0 / k
        return MetapathWeights(scores=scores, weights=weights)
    tiny = finite & (scores <= SCORE_EPSILON)
    if tiny.any():
        weights[tiny] = 1.0 / tiny.sum()
        return MetapathWeights(scores=scores, weights=weights)
    inverse = np.where(finite, 1.0 / np.where(finite, scores, 1.0), 0.0)
    weights = inverse / inverse.sum()
    return MetapathWeights(scores=scores, weights=weights)


def combine(
    weights: np.ndarray, sims: dict[Metapath, sparse.csr_array]
) -> sparse.csr_array:
    """Weighted entrywise sum of the per-metapath similarity matrices."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(ALL_METAPATHS),):
        raise DimensionMismatchError(
            f"expected {len(ALL_METAPATHS)} weights, got {weights.shape}"
        )
    shape = sims[ALL_METAPATHS[0]].shape
    total = sparse.csr_array(shape, dtype=np.float64)
    for path, weight in zip(ALL_METAPATHS, weights):
        sim = sims[path]
        if sim.shape != shape:
            raise DimensionMismatchError(
                f"{path.value} similarity is {sim.shape}, expected {shape}"
            )
        if weight != 0.0:
            total = total + weight * sim
    return sparse.csr_array(total)


class MetapathCombiner(BaseEstimator, TransformerMixin):
    """Transformer from a graph to its combined domain similarity matrix.

    Parameters
    ----------
    score_knn : int, default=5
        Neighborhood size of the locality graph used for scoring; clamped
        to n_domains - 1 on small windows.

    Attributes
    ----------
    similarities_ : per-metapath PathSim matrices
    clamp_stats_ : per-metapath clamp counters
    weights_ : MetapathWeights (scores and normalized weights)
    combined_ : the weighted-sum similarity matrix
    """

    def __init__(self, score_knn: int = 5):
        self.score_knn = score_knn

    def fit(self, X: HinGraph, y=None):
        counts: dict[Metapath, sparse.csr_array] = {}
        sims: dict[Metapath, sparse.csr_array] = {}
        clamps: dict[Metapath, ClampStats] = {}
        for path in ALL_METAPATHS:
            counts[path] = commuting(X, path)
            sims[path], clamps[path] = pathsim(counts[path])
        features = build_features(counts)
        n_d = features.shape[0]
        if n_d <= 1:
            warnings.warn(
                "not enough domains to build a locality graph; using uniform weights",
                stacklevel=2,
            )
            scores = np.full(len(ALL_METAPATHS), SENTINEL)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                weights = scores_to_weights(scores)
        else:
            k = min(self.score_knn, n_d - 1)
            if k < self.score_knn:
                warnings.warn(
                    f"clamping locality neighborhood from {self.score_knn} to {k}",
                    stacklevel=2,
                )
            scores = laplacian_score(features, k)
            weights = scores_to_weights(scores)
        self.similarities_ = sims
        self.clamp_stats_ = clamps
        self.features_ = features
        self.weights_ = weights
        self.combined_ = combine(weights.weights, sims)
        return self

    def transform(self, X: HinGraph) -> sparse.csr_array:
        self.fit(X)
        return self.combined_
