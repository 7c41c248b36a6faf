from __future__ import annotations

import itertools

import numpy as np
import pytest
from sklearn.preprocessing import StandardScaler

from assets import clustering
from assets.clickstream import compute_cfa
from assets.clustering import (
    build_meta_clusters,
    distinct_count,
    kmeans,
    label_entropy,
    order_by_entropy,
    select_k,
    silhouette,
    static_features,
)
from assets.errors import ClusteringError

PL, PA, SB, SF, SP = range(5)


def test_silhouette_of_two_pairs() -> None:
    points = np.array([0.0, 1.0, 10.0, 11.0])
    expected = 1 - (2 / 10.5 + 2 / 9.5) / 4
    assert silhouette(points, [0, 0, 1, 1]) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize(
    "labels, expected",
    [([1, 1, 1, 0], 0.8113), ([1, 1, 0, 0], 1.0), ([0, 0, 0], 0.0), ([], 0.0)],
)
def test_label_entropy(labels: list, expected: float) -> None:
    assert label_entropy(labels) == pytest.approx(expected, abs=1e-4)


def test_kmeans_separates_blobs() -> None:
    rng = np.random.default_rng(0)
    points = np.concatenate([rng.normal(0, 0.1, size=(20, 2)), rng.normal(5, 0.1, size=(20, 2))])
    result = kmeans(points, 2, seed=1)
    assert len(set(result.assignments[:20].tolist())) == 1
    assert len(set(result.assignments[20:].tolist())) == 1
    assert result.assignments[0] != result.assignments[-1]
    assert result.centroids.shape == (2, 2)


def test_kmeans_is_deterministic() -> None:
    points = np.random.default_rng(3).uniform(size=(50, 5))
    a = kmeans(points, 4, seed=2)
    b = kmeans(points, 4, seed=2)
    np.testing.assert_array_equal(a.assignments, b.assignments)
    assert a.sse == b.sse


def test_kmeans_needs_enough_distinct_points() -> None:
    points = np.array([[1.0], [1.0], [2.0]])
    assert distinct_count(points) == 2
    with pytest.raises(ClusteringError):
        kmeans(points, 3)
    with pytest.raises(ClusteringError):
        kmeans(points, 1)


def test_select_k_cuts_the_range(caplog) -> None:
    points = np.array([0.0, 1.0, 10.0, 11.0])
    selection = select_k(points, range(2, 20), standardize=False)
    assert [k for k, _ in selection.curve] == [2, 3]
    assert selection.best_k == 2
    assert "cut" in caplog.text


def test_select_k_picks_the_highest_silhouette() -> None:
    points = np.array([0.0] * 10 + [1.0] * 10 + [50.0] * 10)
    selection = select_k(points, [2, 3], standardize=False)
    scores = dict(selection.curve)
    assert scores[3] == pytest.approx(1.0)
    assert scores[2] < scores[3]
    assert selection.best_k == 3


def test_select_k_prefers_smaller_k_on_ties(monkeypatch) -> None:
    monkeypatch.setattr("assets.clustering.silhouette", lambda points, assignments: 0.5)
    selection = select_k(np.arange(30, dtype=np.float64), [2, 3, 4], standardize=False)
    assert selection.best_k == 2


def test_select_k_without_candidates() -> None:
    with pytest.raises(ClusteringError):
        select_k(np.array([1.0, 1.0, 2.0]), [3, 4])


def test_order_by_entropy_puts_pure_clusters_first() -> None:
    assignments = [0, 0, 0, 1, 1, 1, 1, 2, 2]
    labels = [1, 0, 1, 1, 1, 1, 1, 0, 1]
    clusters = order_by_entropy(assignments, labels, np.array([[0.0], [1.0], [2.0]]), "C1")
    assert clusters.label_entropy[0] == 0.0
    assert clusters.clusters[0].tolist() == [3, 4, 5, 6]
    assert clusters.clusters[1].tolist() == [0, 1, 2]
    assert clusters.label_entropy == sorted(clusters.label_entropy)
    assert clusters.centroids[:, 0].tolist() == [1.0, 0.0, 2.0]


def test_equal_entropy_puts_larger_cluster_first() -> None:
    clusters = order_by_entropy([0, 1, 1], [1, 0, 0], np.zeros((2, 1)), "C1")
    assert [c.tolist() for c in clusters.clusters] == [[1, 2], [0]]


def test_order_by_entropy_needs_aligned_labels() -> None:
    with pytest.raises(ClusteringError):
        order_by_entropy([0, 1], [1], np.zeros((2, 1)), "C1")


def test_small_meta_set_uses_one_cluster(session_factory) -> None:
    sessions = [session_factory([PL, PA] * (i + 1), user=f"u{i}") for i in range(10)]
    labels = [compute_cfa(s).cfa for s in sessions]
    clusters = build_meta_clusters(sessions, labels, "C2")
    assert clusters.n_clusters == 1
    assert clusters.sizes == [10]


def test_identical_encodings_use_one_cluster(session_factory) -> None:
    sessions = [session_factory([PL, PA, PL], user=f"u{i}") for i in range(30)]
    clusters = build_meta_clusters(sessions, [1] * 30, "C1")
    assert clusters.n_clusters == 1


def test_fixed_cluster_count(small_corpus) -> None:
    sessions = list(small_corpus.sessions)
    labels = [compute_cfa(s).cfa for s in sessions]
    clusters = build_meta_clusters(sessions, labels, "C2", seed=1, n_clusters=2)
    assert clusters.n_clusters == 2
    assert sorted(np.concatenate(clusters.clusters).tolist()) == list(range(len(sessions)))
    assert clusters.silhouette_curve == []
    rows = clusters.report_rows(np.asarray(labels))
    assert [row[0] for row in rows] == [1, 2]
    assert sum(row[1] for row in rows) == len(sessions)


def test_selected_clusters_partition_the_meta_set(small_corpus) -> None:
    sessions = list(small_corpus.sessions)
    labels = [compute_cfa(s).cfa for s in sessions]
    clusters = build_meta_clusters(sessions, labels, "C1", seed=0, k_range=range(2, 6))
    assert 2 <= clusters.n_clusters <= 5
    assert sum(clusters.sizes) == len(sessions)
    assert clusters.silhouette_curve
    assert clusters.label_entropy == sorted(clusters.label_entropy)


def test_empty_meta_set() -> None:
    with pytest.raises(ClusteringError):
        build_meta_clusters([], [], "C1")


def _partition_sse(points: np.ndarray, assignment: tuple) -> float:
    labels = np.asarray(assignment)
    return float(sum(((points[labels == c] - points[labels == c].mean(axis=0)) ** 2).sum() for c in (0, 1)))


def test_kmeans_matches_exhaustive_two_partition() -> None:
    rng = np.random.default_rng(42)
    for _ in range(20):
        points = rng.uniform(-5, 5, size=(8, 2))
        # the first point stays in cluster 0, so every split is enumerated once
        best = min(
            _partition_sse(points, (0,) + rest)
            for rest in itertools.product((0, 1), repeat=7)
            if any(rest)
        )
        assert kmeans(points, 2, seed=0, standardize=False).sse == pytest.approx(best, abs=1e-9)


def test_select_k_returns_the_scored_clustering() -> None:
    rng = np.random.default_rng(5)
    points = np.concatenate([
        np.column_stack([rng.normal(0, 0.1, 25), rng.normal(0, 100, 25)]),
        np.column_stack([rng.normal(10, 0.1, 25), rng.normal(0, 100, 25)]),
    ])
    selection = select_k(points, [2, 3, 4], seed=1)
    assert selection.best_k == selection.best.centroids.shape[0]
    fitted = StandardScaler().fit_transform(points)
    assert silhouette(fitted, selection.best.assignments) == pytest.approx(dict(selection.curve)[selection.best_k])
    for c in range(selection.best_k):
        members = points[selection.best.assignments == c]
        np.testing.assert_allclose(selection.best.centroids[c], members.mean(axis=0), atol=1e-9)


def test_selected_clusters_reuse_the_selection_run(small_corpus, monkeypatch) -> None:
    sessions = list(small_corpus.sessions)
    labels = [compute_cfa(s).cfa for s in sessions]
    calls = []
    real_kmeans = clustering.kmeans

    def counting_kmeans(points, k, **kwargs):
        calls.append(k)
        return real_kmeans(points, k, **kwargs)

    monkeypatch.setattr("assets.clustering.kmeans", counting_kmeans)
    clusters = build_meta_clusters(sessions, labels, "C1", seed=0, k_range=range(2, 6))
    assert calls == [2, 3, 4, 5]

    assignments = np.empty(len(sessions), dtype=np.int64)
    for order, members in enumerate(clusters.clusters):
        assignments[members] = order
    fitted = StandardScaler().fit_transform(static_features(sessions, "C1"))
    assert silhouette(fitted, assignments) == pytest.approx(max(score for _, score in clusters.silhouette_curve))
