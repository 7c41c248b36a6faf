#!/usr/bin/env python3
"""
ClickCFA - Meta-dataset Clustering

k-means over standardised static encodings, silhouette-based choice of the
number of clusters and ordering of the clusters by the entropy of their CFA
labels, lowest first.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.stats import entropy
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score
from sklearn.preprocessing import StandardScaler

from assets.clickstream import ClickSession, build_static
from assets.errors import ClusteringError

logger = logging.getLogger('clickcfa-clustering')

DEFAULT_K_RANGE = range(2, 20)
MIN_POINTS_FOR_SELECTION = 20
N_RESTARTS = 10
MAX_ITERATIONS = 300


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    sse: float


@dataclass
class SelectionResult:
    best_k: int
    curve: List[Tuple[int, float]]
    best: KMeansResult


@dataclass
class MetaClusterSet:
    """Entropy-ordered partition of the meta-dataset."""

    clusters: List[np.ndarray]
    criterion: str
    centroids: np.ndarray
    label_entropy: List[float]
    silhouette_curve: List[Tuple[int, float]] = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def sizes(self) -> List[int]:
        return [len(c) for c in self.clusters]

    def report_rows(self, labels: np.ndarray) -> List[list]:
        """(order, size, entropy, CFA rate, centroid) per cluster."""
        labels = np.asarray(labels)
        rows = []
        for order, (members, h) in enumerate(zip(self.clusters, self.label_entropy), start=1):
            centroid = " ".join(f"{v:.4f}" for v in np.atleast_1d(self.centroids[order - 1]))
            rows.append([order, len(members), h, float(np.mean(labels[members])), centroid])
        return rows


def _as_points(points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    return points


def distinct_count(points) -> int:
    return int(np.unique(_as_points(points), axis=0).shape[0])


def kmeans(points, k: int, seed: int = 0, standardize: bool = True, n_init: int = N_RESTARTS) -> KMeansResult:
    """
    Lloyd's k-means from k-means++ seeding, best of `n_init` restarts.

    Args:
        points: (n, d) feature rows
        k: Number of clusters (>= 2)
        seed: Restart seed
        standardize: Scale every dimension to zero mean and unit variance first

    Returns:
        KMeansResult: Assignments, centroids in the original coordinates and SSE in the fitted space
    """
    points = _as_points(points)
    if k < 2:
        raise ClusteringError(f"k must be at least 2, got {k}")
    if distinct_count(points) < k:
        raise ClusteringError(f"{distinct_count(points)} distinct points cannot form {k} clusters")

    scaler = StandardScaler() if standardize else None
    fitted = scaler.fit_transform(points) if scaler else points
    model = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=n_init,
        max_iter=MAX_ITERATIONS,
        tol=0.0,
        algorithm="lloyd",
        random_state=seed,
    ).fit(fitted)
    centroids = scaler.inverse_transform(model.cluster_centers_) if scaler else model.cluster_centers_
    return KMeansResult(assignments=model.labels_.astype(np.int64), centroids=centroids, sse=float(model.inertia_))


def silhouette(points, assignments: Sequence[int]) -> float:
    """Mean Euclidean silhouette coefficient."""
    return float(silhouette_score(_as_points(points), np.asarray(assignments), metric="euclidean"))


def select_k(points, k_range: Sequence[int] = DEFAULT_K_RANGE, seed: int = 0, standardize: bool = True) -> SelectionResult:
    """
    Pick the number of clusters with the highest mean silhouette; ties go to the smaller k.

    The range is cut to k <= distinct points - 1. `best` is the clustering the
    winning score was computed on, with centroids in the original coordinates.
    """
    points = _as_points(points)
    if points.shape[0] < MIN_POINTS_FOR_SELECTION:
        logger.warning(f"Selecting k from only {points.shape[0]} points")
    limit = distinct_count(points) - 1
    candidates = [k for k in k_range if k <= limit]
    if len(candidates) < len(list(k_range)):
        logger.warning(f"Cluster range cut to k <= {limit} ({limit + 1} distinct points)")
    if not candidates:
        raise ClusteringError(f"{limit + 1} distinct points leave no k to select from")

    scaler = StandardScaler() if standardize else None
    fitted = scaler.fit_transform(points) if scaler else points
    curve: List[Tuple[int, float]] = []
    best, best_score = None, -np.inf
    for k in candidates:
        result = kmeans(fitted, k, seed=seed, standardize=False)
        score = silhouette(fitted, result.assignments)
        curve.append((k, score))
        if score > best_score:
            best, best_score = result, score
    if scaler:
        best = KMeansResult(best.assignments, scaler.inverse_transform(best.centroids), best.sse)
    best_k = best.centroids.shape[0]
    logger.info(f"Silhouette selection: k = {best_k} (score {best_score:.4f})")
    return SelectionResult(best_k=best_k, curve=curve, best=best)


def label_entropy(labels: Sequence[int]) -> float:
    """Shannon entropy in bits of a binary label multiset."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        return 0.0
    counts = np.bincount(labels, minlength=2)
    return float(entropy(counts, base=2))


def order_by_entropy(
    assignments: Sequence[int],
    labels: Sequence[int],
    centroids: np.ndarray,
    criterion: str
) -> MetaClusterSet:
    """Order clusters by label entropy ascending, larger clusters first on ties."""
    assignments = np.asarray(assignments, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if assignments.shape != labels.shape:
        raise ClusteringError("every clustered sample needs a label")
    cluster_ids = sorted(set(assignments.tolist()))
    members = {c: np.flatnonzero(assignments == c) for c in cluster_ids}
    entropies = {c: label_entropy(labels[members[c]]) for c in cluster_ids}
    ordered = sorted(cluster_ids, key=lambda c: (entropies[c], -len(members[c])))
    centroids = np.asarray(centroids, dtype=np.float64)
    return MetaClusterSet(
        clusters=[members[c] for c in ordered],
        criterion=criterion,
        centroids=np.stack([np.atleast_1d(centroids[c]) for c in ordered]),
        label_entropy=[entropies[c] for c in ordered],
    )


def static_features(sessions: Sequence[ClickSession], criterion: str) -> np.ndarray:
    return np.stack([build_static(s).features(criterion) for s in sessions])


def single_cluster(features: np.ndarray, labels: np.ndarray, criterion: str) -> MetaClusterSet:
    return order_by_entropy(
        np.zeros(len(labels), dtype=np.int64), labels, features.mean(axis=0, keepdims=True), criterion
    )


def build_meta_clusters(
    meta_sessions: Sequence[ClickSession],
    labels: Sequence[int],
    criterion: str,
    seed: int = 0,
    k_range: Sequence[int] = DEFAULT_K_RANGE,
    n_clusters: int = 0
) -> MetaClusterSet:
    """
    Cluster the meta-dataset on C1 or C2 static features.

    Args:
        meta_sessions: D_meta
        labels: CFA labels aligned with meta_sessions
        criterion: "C1" (total clicks) or "C2" (per-type counts)
        seed: k-means seed
        k_range: Candidate cluster counts for silhouette selection
        n_clusters: Fixed cluster count; 0 selects by silhouette

    Returns:
        MetaClusterSet: Entropy-ordered clusters (indices into meta_sessions)
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(meta_sessions) == 0:
        raise ClusteringError("meta-dataset is empty")
    features = static_features(meta_sessions, criterion)

    if n_clusters == 1:
        return single_cluster(features, labels, criterion)
    if n_clusters >= 2:
        result = kmeans(features, n_clusters, seed=seed)
        return order_by_entropy(result.assignments, labels, result.centroids, criterion)
    if len(meta_sessions) < MIN_POINTS_FOR_SELECTION or distinct_count(features) < 3:
        logger.warning(
            f"Meta-dataset of {len(meta_sessions)} sessions ({distinct_count(features)} distinct) "
            f"is too small for cluster selection, using a single cluster"
        )
        return single_cluster(features, labels, criterion)

    selection = select_k(features, k_range, seed=seed)
    result = selection.best
    clusters = order_by_entropy(result.assignments, labels, result.centroids, criterion)
    clusters.silhouette_curve = selection.curve
    logger.info(
        f"Meta clusters ({criterion}): sizes {clusters.sizes}, "
        f"entropies {[round(h, 4) for h in clusters.label_entropy]}"
    )
    return clusters
