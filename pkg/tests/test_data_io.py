from __future__ import annotations

from collections import Counter

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from assets.clickstream import EventType, build_static, compute_cfa
from assets.clustering import kmeans, select_k
from assets.data_io import (
    Corpus,
    SynthArchetype,
    carve_meta,
    corpus_summary,
    default_archetypes,
    generate_synthetic,
    load_archetypes,
    meta_size,
    parse_log,
    serialize_corpus,
    split_folds,
    subsample,
    write_archetypes,
)
from assets.errors import CorpusRejectedError, InvalidArchetypeError, InvalidSplitError

FIXTURE_LOG = """\
# dataset: fixture
video\tv1\t600
u1\tv1\t0\t0.0\t1000.0\t1\t1.0
u1\tv1\t1\t30.0\t1030.0\t0\t1.0
u1\tv1\t0\t30.0\t1060.0\t1\t1.0
u1\tv1\t0\t10.0\t1070.0\t1\t1.0
u1\tv1\t0\t100.0\t1080.0\t1\t1.0
u1\tv1\t10\t10\t1200.0
u2\tv1\t0\t0.0\t2000.0\t1\t1.0
u2\tv1\t4\t20.0\t2020.0\t1\t1.5
u2\tv1\t1\t35.0\t2030.0\t0\t1.5
u2\tv1\t1\t35.0\t2033.0\t0\t1.5
u2\tv1\t6\t10\t2100.0
u2\tv1\t10\t10\t2500.0
"""


def _write(tmp_path, text: str, name: str = "log.tsv") -> str:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_parse_fixture_log(tmp_path) -> None:
    corpus, summary = parse_log(_write(tmp_path, FIXTURE_LOG))
    assert corpus.dataset_name == "fixture"
    assert len(corpus) == 2
    assert summary.total_lines == 13
    assert summary.event_records == 9
    assert summary.quiz_records == 3
    assert summary.video_records == 1
    assert summary.malformed == 0
    first, second = corpus.sessions
    # u1: play, pause, play, skip back (expected 40, got 10), skip forward (expected 20, got 100)
    assert first.event_types() == [0, 1, 0, 2, 3]
    assert compute_cfa(first).cfa == 1
    # u2: play, rate change, then two pauses within 5 s coalesced into the later one
    assert second.event_types() == [0, 4, 1]
    assert second.events[-1].timestamp == 2033.0
    assert summary.coalesced == 1
    # the earliest quiz record is the first attempt
    assert second.answer_timestamp == 2100.0
    assert compute_cfa(second).cfa == 0


def test_one_malformed_line_is_skipped_and_counted(tmp_path) -> None:
    text = FIXTURE_LOG + "u3\tv1\t0\tnot-a-number\t1.0\t1\t1.0\n"
    corpus, summary = parse_log(_write(tmp_path, text))
    assert len(corpus) == 2
    assert summary.malformed == 1


def test_empty_file_gives_empty_corpus(tmp_path, caplog) -> None:
    corpus, summary = parse_log(_write(tmp_path, ""))
    assert len(corpus) == 0
    assert summary.total_lines == 0
    assert "empty" in caplog.text


def test_mostly_malformed_log_is_rejected(tmp_path) -> None:
    text = "u1\tv1\t0\t0\t1\t1\t1\nbroken\nbroken again\n"
    with pytest.raises(CorpusRejectedError):
        parse_log(_write(tmp_path, text))


def test_sessions_without_quiz_are_unlabeled(tmp_path) -> None:
    text = "u9\tv9\t0\t0.0\t10.0\t1\t1.0\nu1\tv1\t0\t0.0\t10.0\t1\t1.0\nu1\tv1\t5\t10\t20.0\n"
    corpus, summary = parse_log(_write(tmp_path, text))
    assert summary.unlabeled == 1
    assert [s.session_id for s in corpus.sessions] == ["u1/v1"]


def test_serialize_round_trip(tmp_path, small_corpus) -> None:
    path = serialize_corpus(small_corpus, str(tmp_path / "corpus.tsv"))
    parsed, summary = parse_log(path)
    assert parsed == small_corpus
    assert summary.reclassified == 0
    assert summary.coalesced == 0


def test_corpus_summary(small_corpus) -> None:
    summary = corpus_summary(small_corpus)
    assert summary["sessions"] == 60
    assert summary["events"] == sum(s.length for s in small_corpus.sessions)
    assert sum(summary[t.name.lower()] for t in EventType) == summary["events"]
    assert 0.0 <= summary["avg_cfa"] <= 1.0


def test_ten_sessions_five_folds(small_corpus) -> None:
    corpus = Corpus(sessions=small_corpus.sessions[:10])
    folds = split_folds(corpus, 5, seed=0)
    assert Counter(folds.fold_assignments) == {f: 2 for f in range(5)}


def test_eleven_sessions_five_folds(small_corpus) -> None:
    corpus = Corpus(sessions=small_corpus.sessions[:11])
    sizes = sorted(Counter(split_folds(corpus, 5, seed=4).fold_assignments).values(), reverse=True)
    assert sizes == [3, 2, 2, 2, 2]


def test_folds_are_deterministic_and_order_independent(small_corpus) -> None:
    a = split_folds(small_corpus, 5, seed=7)
    b = split_folds(small_corpus, 5, seed=7)
    assert a.fold_assignments == b.fold_assignments
    reversed_corpus = split_folds(Corpus(sessions=small_corpus.sessions[::-1]), 5, seed=7)
    by_id = dict(zip(a.session_ids(), a.fold_assignments))
    assert dict(zip(reversed_corpus.session_ids(), reversed_corpus.fold_assignments)) == by_id


def test_folds_partition_the_corpus(small_corpus) -> None:
    corpus = split_folds(small_corpus, 5, seed=1)
    seen = [s.session_id for f in range(5) for s in corpus.fold(f)]
    assert sorted(seen) == sorted(corpus.session_ids())
    for f in range(5):
        assert not {s.session_id for s in corpus.fold(f)} & {s.session_id for s in corpus.outside_fold(f)}


def test_stratified_folds_balance_labels(small_corpus) -> None:
    corpus = split_folds(small_corpus, 5, seed=2, stratify=True)
    positives = [sum(compute_cfa(s).cfa for s in corpus.fold(f)) for f in range(5)]
    assert max(positives) - min(positives) <= 1


def test_more_folds_than_sessions(small_corpus) -> None:
    with pytest.raises(InvalidSplitError):
        split_folds(Corpus(sessions=small_corpus.sessions[:3]), 5)


def test_carve_meta_sizes_and_disjointness(small_corpus) -> None:
    sessions = list(generate_synthetic(default_archetypes(), 100, seed=2).sessions)
    train, meta = carve_meta(sessions, 0.1, seed=0)
    assert len(meta) == 10
    assert len(train) == 90
    assert not {s.session_id for s in train} & {s.session_id for s in meta}
    assert carve_meta(sessions, 0.1, seed=0) == (train, meta)


@pytest.mark.parametrize("fraction", [0.0, 0.5, 0.7])
def test_carve_meta_fraction_range(small_corpus, fraction: float) -> None:
    with pytest.raises(InvalidSplitError):
        carve_meta(list(small_corpus.sessions), fraction)


def test_carve_meta_empty_result(small_corpus) -> None:
    with pytest.raises(InvalidSplitError):
        carve_meta(list(small_corpus.sessions[:3]), 0.1)


def test_meta_usage_levels(small_corpus) -> None:
    meta = list(small_corpus.sessions[:40])
    assert [len(subsample(meta, f, seed=0)) for f in (0.0, 0.25, 0.5, 0.75, 1.0)] == [0, 10, 20, 30, 40]
    assert meta_size(15, 0.1) == 2
    assert meta_size(14, 0.1) == 1


def test_synthetic_is_deterministic(tmp_path) -> None:
    a = serialize_corpus(generate_synthetic(default_archetypes(), 30, seed=7), str(tmp_path / "a.tsv"))
    b = serialize_corpus(generate_synthetic(default_archetypes(), 30, seed=7), str(tmp_path / "b.tsv"))
    with open(a, "rb") as fa, open(b, "rb") as fb:
        assert fa.read() == fb.read()


def test_certain_archetype_gives_all_cfa() -> None:
    archetype = SynthArchetype(
        name="sure",
        event_type_transition_matrix=tuple(tuple(0.2 for _ in range(5)) for _ in range(5)),
        mean_session_length=8,
        cfa_base_prob=1.0,
        skip_forward_cfa_penalty=0.0,
    )
    corpus = generate_synthetic([archetype], 50, seed=3)
    assert all(compute_cfa(s).cfa == 1 for s in corpus.sessions)
    assert all(s.length >= 3 for s in corpus.sessions)


def test_non_stochastic_archetype() -> None:
    with pytest.raises(InvalidArchetypeError):
        SynthArchetype(
            name="bad",
            event_type_transition_matrix=tuple(tuple(0.3 for _ in range(5)) for _ in range(5)),
            mean_session_length=8,
            cfa_base_prob=0.5,
            skip_forward_cfa_penalty=0.0,
        )


def test_archetype_file_round_trip(tmp_path) -> None:
    path = write_archetypes(default_archetypes(), str(tmp_path / "arch.cfg"))
    assert load_archetypes(path) == default_archetypes()


def test_archetype_file_without_name(tmp_path) -> None:
    path = tmp_path / "arch.cfg"
    path.write_text("mean_session_length = 3\n", encoding="utf-8")
    with pytest.raises(InvalidArchetypeError):
        load_archetypes(str(path))


@pytest.mark.slow
def test_c2_kmeans_recovers_archetypes() -> None:
    corpus = generate_synthetic(default_archetypes(), 2000, seed=7)
    points = np.stack([build_static(s).features("C2") for s in corpus.sessions])
    truth = [s.archetype for s in corpus.sessions]
    result = kmeans(points, 2, seed=0)
    assert adjusted_rand_score(truth, result.assignments) > 0.9


@pytest.mark.slow
def test_silhouette_selects_two_clusters_on_archetype_meta_set() -> None:
    corpus = generate_synthetic(default_archetypes(), 2000, seed=7)
    _, meta = carve_meta(list(corpus.sessions), 0.1, seed=0)
    points = np.stack([build_static(s).features("C2") for s in meta])
    assert select_k(points, range(2, 20), seed=0).best_k == 2


@pytest.mark.slow
def test_skip_penalty_lowers_cfa_rate() -> None:
    corpus = generate_synthetic(default_archetypes(), 2000, seed=7)
    rates = {}
    for archetype in (0, 1):
        labels = [compute_cfa(s).cfa for s in corpus.sessions if s.archetype == archetype]
        rates[archetype] = float(np.mean(labels))
    assert rates[0] - rates[1] > 0.3


@pytest.mark.slow
def test_total_clicks_follow_generator() -> None:
    archetypes = default_archetypes()
    corpus = generate_synthetic(archetypes, 2000, seed=9)
    for index, archetype in enumerate(archetypes):
        sessions = [s for s in corpus.sessions if s.archetype == index]
        lengths = np.array([s.length for s in sessions], dtype=np.float64)
        mean = archetype.mean_session_length
        # Poisson lengths: the sample mean lies within 3 standard errors of the generator mean
        assert abs(lengths.mean() - mean) < 3 * np.sqrt(mean / len(sessions)) + 0.5
