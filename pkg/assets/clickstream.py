#!/usr/bin/env python3
"""
ClickCFA - Clickstream Core

Event data model, event-type classification, coalescing of repeated clicks and
the encodings consumed by the models:

- time-varying encoding: one normalised 5-dim row per click before the first quiz answer
- static encoding: total clicks and per-type click counts over the whole session
- CFA label: correct on first attempt, with its one-hot form
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from assets.errors import EmptyEncodingError, InvalidScoreError, MalformedRecordError

logger = logging.getLogger('clickcfa-clickstream')

COALESCE_WINDOW = 5.0    # seconds
SKIP_TOLERANCE = 1.0     # seconds of position discrepancy
MAX_RATE = 4.0
DT_CAP = 300.0           # seconds
SCORE_SLACK = 1e-9
ROW_DIM = 5


class EventType(IntEnum):
    """The five click types with their stable integer codes."""

    PLAY = 0
    PAUSE = 1
    SKIP_BACK = 2
    SKIP_FORWARD = 3
    RATE_CHANGE = 4

    @property
    def abbreviation(self) -> str:
        return EVENT_ABBREVIATIONS[self]


EVENT_ABBREVIATIONS = {
    EventType.PLAY: "Pl",
    EventType.PAUSE: "Pa",
    EventType.SKIP_BACK: "Sb",
    EventType.SKIP_FORWARD: "Sf",
    EventType.RATE_CHANGE: "Sp",
}


@dataclass(frozen=True)
class RawRecord:
    """Player state reported with a click, before its type is known."""

    position: float
    timestamp: float
    state: int
    rate: float


@dataclass(frozen=True)
class ClickEvent:
    """One typed, timestamped player interaction."""

    event_type: EventType
    position: float
    timestamp: float
    playback_state: int
    rate: float

    def __post_init__(self):
        if not self.position >= 0:
            raise MalformedRecordError(f"negative position {self.position}")
        if not self.rate > 0:
            raise MalformedRecordError(f"non-positive rate {self.rate}")
        if self.playback_state not in (0, 1):
            raise MalformedRecordError(f"playback state must be 0 or 1, got {self.playback_state}")
        if self.event_type == EventType.PLAY and self.playback_state != 1:
            raise MalformedRecordError("play event with paused state")
        if self.event_type == EventType.PAUSE and self.playback_state != 0:
            raise MalformedRecordError("pause event with playing state")
        object.__setattr__(self, "event_type", EventType(self.event_type))


@dataclass(frozen=True)
class ClickSession:
    """All clicks of one student on one video, with the first quiz outcome."""

    user_id: str
    video_id: str
    video_length: float
    events: Tuple[ClickEvent, ...]
    answer_timestamp: Optional[float]
    points_awarded: float
    points_max: float
    # ground-truth archetype of synthetic sessions, not part of the log format
    archetype: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not self.video_length > 0:
            raise MalformedRecordError(f"video length must be positive, got {self.video_length}")
        if not self.points_max > 0:
            raise InvalidScoreError(f"points_max must be positive, got {self.points_max}")
        if self.points_awarded < 0:
            raise InvalidScoreError(f"negative points {self.points_awarded}")
        if self.points_awarded > self.points_max + SCORE_SLACK:
            raise InvalidScoreError(
                f"points {self.points_awarded} exceed maximum {self.points_max} "
                f"for {self.user_id}/{self.video_id}"
            )
        stamps = [event.timestamp for event in self.events]
        if any(b < a for a, b in zip(stamps, stamps[1:])):
            raise MalformedRecordError(f"events of {self.user_id}/{self.video_id} are not time ordered")

    @property
    def session_id(self) -> str:
        return f"{self.user_id}/{self.video_id}"

    @property
    def length(self) -> int:
        return len(self.events)

    def event_types(self) -> List[int]:
        return [int(event.event_type) for event in self.events]

    def answered_events(self) -> Tuple[ClickEvent, ...]:
        """Events strictly before the first quiz answer."""
        if self.answer_timestamp is None:
            return ()
        return tuple(e for e in self.events if e.timestamp < self.answer_timestamp)


@dataclass(frozen=True)
class TimeVaryingEncoding:
    """Normalised feature rows of the clicks before the first answer."""

    rows: np.ndarray

    @property
    def length(self) -> int:
        return int(self.rows.shape[0])


@dataclass(frozen=True)
class StaticEncoding:
    """Order-free session summary used as clustering criterion."""

    total_clicks: int
    per_type_counts: Tuple[int, ...]

    def features(self, criterion: str) -> np.ndarray:
        """C1 -> [total clicks], C2 -> per-type counts."""
        criterion = criterion.upper()
        if criterion == "C1":
            return np.array([self.total_clicks], dtype=np.float64)
        if criterion == "C2":
            return np.array(self.per_type_counts, dtype=np.float64)
        raise ValueError(f"Invalid criterion: {criterion}. Must be 'C1' or 'C2'")


@dataclass(frozen=True)
class CfaLabel:
    """Correct-on-first-attempt label; CFA maps to (1, 0), non-CFA to (0, 1)."""

    cfa: int

    @property
    def one_hot(self) -> Tuple[int, int]:
        return (1, 0) if self.cfa == 1 else (0, 1)


def pre_click_position(prev: ClickEvent, timestamp: float) -> float:
    """Player position immediately before a click fired at `timestamp`."""
    if prev.playback_state == 1:
        return prev.position + prev.rate * (timestamp - prev.timestamp)
    return prev.position


def classify_event(prev: ClickEvent, raw: RawRecord, skip_tolerance: float = SKIP_TOLERANCE) -> EventType:
    """
    Derive the type of a click from the previous event and the new player state.

    Args:
        prev: Previous event of the same session
        raw: Player state reported with the new click
        skip_tolerance: Position discrepancy (seconds) below which no skip is reported

    Returns:
        EventType: The classified type
    """
    if not raw.position >= 0:
        raise MalformedRecordError(f"negative position {raw.position}")
    if not raw.rate > 0:
        raise MalformedRecordError(f"non-positive rate {raw.rate}")
    if raw.state not in (0, 1):
        raise MalformedRecordError(f"playback state must be 0 or 1, got {raw.state}")
    if raw.timestamp < prev.timestamp:
        raise MalformedRecordError("record precedes the previous event")

    if abs(raw.rate - prev.rate) > 0:
        return EventType.RATE_CHANGE
    expected = pre_click_position(prev, raw.timestamp)
    if expected - raw.position > skip_tolerance:
        return EventType.SKIP_BACK
    if raw.position - expected > skip_tolerance:
        return EventType.SKIP_FORWARD
    return EventType.PLAY if raw.state == 1 else EventType.PAUSE


def coalesce_events(events: Sequence[ClickEvent], window: float = COALESCE_WINDOW) -> List[ClickEvent]:
    """Replace every run of same-type clicks no more than `window` seconds apart by its last click."""
    result: List[ClickEvent] = []
    for event in events:
        if result:
            last = result[-1]
            if last.event_type == event.event_type and event.timestamp - last.timestamp <= window:
                # the kept event is always the latest of its run, so comparing to it chains the run
                result[-1] = event
                continue
        result.append(event)
    return result


def encode_events(
    events: Sequence[ClickEvent],
    video_length: float,
    max_rate: float = MAX_RATE,
    dt_cap: float = DT_CAP
) -> np.ndarray:
    """
    Map clicks to normalised rows (type/4, position, inter-click time, state, rate).

    Args:
        events: Ordered clicks
        video_length: Video length in seconds
        max_rate: Rate that maps to 1.0
        dt_cap: Inter-click time (seconds) that maps to 1.0

    Returns:
        np.ndarray: (len(events), 5) float64 rows
    """
    rows = np.zeros((len(events), ROW_DIM), dtype=np.float64)
    prev_time = None
    for i, event in enumerate(events):
        dt = 0.0 if prev_time is None else min(event.timestamp - prev_time, dt_cap) / dt_cap
        rows[i] = (
            int(event.event_type) / 4.0,
            min(max(event.position / video_length, 0.0), 1.0),
            dt,
            float(event.playback_state),
            min(event.rate / max_rate, 1.0),
        )
        prev_time = event.timestamp
    return rows


def session_rows(session: ClickSession) -> np.ndarray:
    """Rows of the full session, used by pre-training."""
    return encode_events(session.events, session.video_length)


def build_time_varying(session: ClickSession) -> TimeVaryingEncoding:
    """Encode the clicks made before the first quiz answer."""
    if session.answer_timestamp is None:
        raise EmptyEncodingError(f"{session.session_id} has no quiz answer")
    cut = len(session.answered_events())
    if cut == 0:
        raise EmptyEncodingError(f"{session.session_id} has no click before its answer")
    # inter-click times are taken over the whole session, then truncated
    rows = encode_events(session.events, session.video_length)[:cut]
    return TimeVaryingEncoding(rows=rows)


def build_static(session: ClickSession) -> StaticEncoding:
    counts = [0] * len(EventType)
    for event in session.events:
        counts[int(event.event_type)] += 1
    return StaticEncoding(total_clicks=len(session.events), per_type_counts=tuple(counts))


def compute_cfa(session: ClickSession) -> CfaLabel:
    """CFA = 1 iff the first attempt earned the maximum points."""
    if not session.points_max > 0:
        raise InvalidScoreError(f"points_max must be positive for {session.session_id}")
    if session.points_awarded > session.points_max + SCORE_SLACK:
        raise InvalidScoreError(f"points exceed maximum for {session.session_id}")
    cfa = 1 if session.points_max - session.points_awarded <= SCORE_SLACK else 0
    return CfaLabel(cfa=cfa)
