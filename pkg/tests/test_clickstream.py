from __future__ import annotations

import types

import numpy as np
import pytest

from assets.clickstream import (
    ClickEvent,
    EventType,
    RawRecord,
    build_static,
    build_time_varying,
    classify_event,
    coalesce_events,
    compute_cfa,
    encode_events,
    pre_click_position,
)
from assets.errors import EmptyEncodingError, InvalidScoreError, MalformedRecordError

PL, PA, SB, SF, SP = (int(t) for t in EventType)


def _event(event_type: EventType, timestamp: float, position: float = 0.0) -> ClickEvent:
    state = 0 if event_type == EventType.PAUSE else 1
    return ClickEvent(event_type, position, timestamp, state, 1.0)


def test_skip_back_from_playing_state() -> None:
    prev = ClickEvent(EventType.PLAY, 20.0, 100.0, 1, 1.0)
    raw = RawRecord(position=10.0, timestamp=110.0, state=1, rate=1.0)
    assert pre_click_position(prev, 110.0) == 30.0
    assert classify_event(prev, raw) == EventType.SKIP_BACK


def test_paused_state_freezes_position() -> None:
    prev = ClickEvent(EventType.PAUSE, 20.0, 100.0, 0, 1.0)
    raw = RawRecord(position=20.0, timestamp=130.0, state=1, rate=1.0)
    assert classify_event(prev, raw) == EventType.PLAY


def test_rate_change_wins_over_position() -> None:
    prev = ClickEvent(EventType.PLAY, 20.0, 100.0, 1, 1.0)
    raw = RawRecord(position=30.0, timestamp=110.0, state=1, rate=1.5)
    assert classify_event(prev, raw) == EventType.RATE_CHANGE


def test_skip_forward_and_pause() -> None:
    prev = ClickEvent(EventType.PLAY, 20.0, 100.0, 1, 1.0)
    assert classify_event(prev, RawRecord(80.0, 110.0, 1, 1.0)) == EventType.SKIP_FORWARD
    assert classify_event(prev, RawRecord(30.0, 110.0, 0, 1.0)) == EventType.PAUSE


def test_position_jitter_within_tolerance_is_not_a_skip() -> None:
    prev = ClickEvent(EventType.PLAY, 20.0, 100.0, 1, 1.0)
    assert classify_event(prev, RawRecord(30.9, 110.0, 1, 1.0)) == EventType.PLAY
    assert classify_event(prev, RawRecord(30.9, 110.0, 1, 1.0), skip_tolerance=0.5) == EventType.SKIP_FORWARD


@pytest.mark.parametrize("state", [0, 1])
def test_zero_elapsed_time_never_skips(state: int) -> None:
    prev = ClickEvent(EventType.PLAY if state else EventType.PAUSE, 42.0, 100.0, state, 1.25)
    result = classify_event(prev, RawRecord(42.0, 100.0, state, 1.25))
    assert result not in (EventType.SKIP_BACK, EventType.SKIP_FORWARD)


@pytest.mark.parametrize("raw", [RawRecord(-1.0, 110.0, 1, 1.0), RawRecord(5.0, 110.0, 1, 0.0)])
def test_malformed_raw_record(raw: RawRecord) -> None:
    prev = ClickEvent(EventType.PLAY, 20.0, 100.0, 1, 1.0)
    with pytest.raises(MalformedRecordError):
        classify_event(prev, raw)


def test_click_event_rejects_contradicting_state() -> None:
    with pytest.raises(MalformedRecordError):
        ClickEvent(EventType.PAUSE, 0.0, 0.0, 1, 1.0)


def test_coalesce_keeps_last_of_run() -> None:
    events = [_event(EventType.PAUSE, 0.0), _event(EventType.PAUSE, 2.0), _event(EventType.PAUSE, 4.0)]
    assert coalesce_events(events) == [events[-1]]


def test_coalesce_leaves_distant_and_alternating_clicks() -> None:
    distant = [_event(EventType.PAUSE, 0.0), _event(EventType.PAUSE, 6.0)]
    alternating = [_event(EventType.PLAY, 0.0), _event(EventType.PAUSE, 1.0), _event(EventType.PLAY, 2.0)]
    assert coalesce_events(distant) == distant
    assert coalesce_events(alternating) == alternating
    assert coalesce_events([]) == []


def test_coalesce_chains_runs_longer_than_window() -> None:
    events = [_event(EventType.PLAY, t) for t in (0.0, 4.0, 8.0, 12.0)]
    assert coalesce_events(events) == [events[-1]]


def test_coalesce_is_idempotent() -> None:
    rng = np.random.default_rng(5)
    timestamp = 0.0
    events = []
    for _ in range(200):
        timestamp += float(rng.uniform(0.0, 9.0))
        events.append(_event(EventType(int(rng.integers(0, 2))), timestamp))
    once = coalesce_events(events)
    assert coalesce_events(once) == once
    assert len(once) <= len(events)


def test_time_varying_cut_at_answer(session_factory) -> None:
    session = session_factory([PL, PA, PL, SB, PL, SF, PA], answer_after=5)
    encoding = build_time_varying(session)
    assert encoding.length == 5
    assert encoding.rows.shape == (5, 5)


def test_first_row_normalisation() -> None:
    rows = encode_events([ClickEvent(EventType.PLAY, 0.0, 1000.0, 1, 1.0)], video_length=600.0)
    np.testing.assert_array_equal(rows[0], [0.0, 0.0, 0.0, 1.0, 0.25])


def test_rows_stay_in_unit_range() -> None:
    events = [
        ClickEvent(EventType.PLAY, 0.0, 0.0, 1, 1.0),
        ClickEvent(EventType.SKIP_FORWARD, 900.0, 1000.0, 1, 1.0),
        ClickEvent(EventType.RATE_CHANGE, 950.0, 1010.0, 1, 8.0),
    ]
    rows = encode_events(events, video_length=600.0)
    assert np.isfinite(rows).all()
    assert rows[1, 1] == 1.0
    assert rows[1, 2] == 1.0
    assert rows[2, 4] == 1.0
    assert rows[2, 0] == 1.0


def test_no_click_before_answer(session_factory) -> None:
    session = session_factory([PL, PA], answer_after=0)
    with pytest.raises(EmptyEncodingError):
        build_time_varying(session)


def test_time_varying_total_matches_recount(small_corpus) -> None:
    total = 0
    recount = 0
    for session in small_corpus.sessions:
        total += build_time_varying(session).length
        recount += sum(1 for e in session.events if e.timestamp < session.answer_timestamp)
    assert total == recount


def test_static_counts(session_factory) -> None:
    static = build_static(session_factory([PL, PL, PA, SB, PL]))
    assert static.total_clicks == 5
    assert static.per_type_counts == (3, 1, 1, 0, 0)
    np.testing.assert_array_equal(static.features("C1"), [5.0])
    np.testing.assert_array_equal(static.features("C2"), [3.0, 1.0, 1.0, 0.0, 0.0])
    assert build_static(session_factory([PL])).per_type_counts == (1, 0, 0, 0, 0)


def test_static_counts_match_histogram(small_corpus) -> None:
    for session in small_corpus.sessions:
        static = build_static(session)
        histogram = np.bincount(session.event_types(), minlength=5)
        assert static.per_type_counts == tuple(int(c) for c in histogram)
        assert sum(static.per_type_counts) == static.total_clicks


@pytest.mark.parametrize(
    "points, expected, one_hot",
    [(10.0, 1, (1, 0)), (7.0, 0, (0, 1)), (0.0, 0, (0, 1))],
)
def test_compute_cfa(session_factory, points: float, expected: int, one_hot: tuple) -> None:
    label = compute_cfa(session_factory([PL, PA], points=points))
    assert label.cfa == expected
    assert label.one_hot == one_hot
    assert sum(label.one_hot) == 1


def test_points_above_maximum() -> None:
    session = types.SimpleNamespace(points_awarded=11.0, points_max=10.0, session_id="u/v")
    with pytest.raises(InvalidScoreError):
        compute_cfa(session)


def test_session_rejects_points_above_maximum(session_factory) -> None:
    with pytest.raises(InvalidScoreError):
        session_factory([PL], points=11.0)


def test_event_type_abbreviations() -> None:
    assert [t.abbreviation for t in EventType] == ["Pl", "Pa", "Sb", "Sf", "Sp"]
