#!/usr/bin/env python3
"""
ClickCFA - Data I/O

Parses raw click logs into sessions, writes them back, assigns cross-validation
folds, carves the meta-dataset out of training folds and generates synthetic
corpora from Markov archetypes.

Corpus file format (UTF-8, tab separated, one record per line):

    user_id  video_id  event_code  position_sec  unix_ts  state  rate   (event)
    user_id  video_id  points  points_max  answer_unix_ts                (quiz)
    video    video_id  length_sec                                        (video)

Blank lines and lines starting with '#' are ignored.
"""

import os
import math
import logging
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from assets.clickstream import (
    ClickEvent,
    ClickSession,
    EventType,
    RawRecord,
    classify_event,
    coalesce_events,
    compute_cfa,
    pre_click_position,
    SKIP_TOLERANCE,
)
from assets.config_manager import read_flat_config
from assets.errors import (
    CorpusRejectedError,
    DataError,
    InvalidArchetypeError,
    InvalidSplitError,
    MalformedRecordError,
)

logger = logging.getLogger('clickcfa-data')

DATASET_HEADER = "# dataset:"
MAX_MALFORMED_FRACTION = 0.5
DEFAULT_META_FRACTION = 0.1
STOCHASTIC_TOLERANCE = 1e-9
MIN_SYNTHETIC_LENGTH = 3
SYNTHETIC_VIDEO_LENGTH = 1800.0
SYNTHETIC_POINTS_MAX = 10.0
SYNTHETIC_RATES = (0.5, 0.75, 1.0, 1.25, 1.5, 2.0)


@dataclass(frozen=True)
class Corpus:
    """A named list of sessions with an optional fold index per session."""

    sessions: Tuple[ClickSession, ...]
    dataset_name: str = "corpus"
    fold_assignments: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "sessions", tuple(self.sessions))
        if self.fold_assignments is not None:
            object.__setattr__(self, "fold_assignments", tuple(self.fold_assignments))
            if len(self.fold_assignments) != len(self.sessions):
                raise InvalidSplitError("every session needs exactly one fold index")

    def __len__(self) -> int:
        return len(self.sessions)

    def session_ids(self) -> List[str]:
        return [s.session_id for s in self.sessions]

    def fold(self, index: int) -> List[ClickSession]:
        if self.fold_assignments is None:
            raise InvalidSplitError("corpus has no fold assignment")
        return [s for s, f in zip(self.sessions, self.fold_assignments) if f == index]

    def outside_fold(self, index: int) -> List[ClickSession]:
        if self.fold_assignments is None:
            raise InvalidSplitError("corpus has no fold assignment")
        return [s for s, f in zip(self.sessions, self.fold_assignments) if f != index]


@dataclass
class ParseSummary:
    """Skip counters reported alongside a parsed corpus."""

    total_lines: int = 0
    event_records: int = 0
    quiz_records: int = 0
    video_records: int = 0
    malformed: int = 0
    reclassified: int = 0
    coalesced: int = 0
    unlabeled: int = 0
    invalid_score: int = 0
    sessions: int = 0

    def as_rows(self) -> List[Tuple[str, int]]:
        return list(vars(self).items())


@dataclass(frozen=True)
class SynthArchetype:
    """Markov generator of one behavioural archetype."""

    name: str
    event_type_transition_matrix: Tuple[Tuple[float, ...], ...]
    mean_session_length: int
    cfa_base_prob: float
    skip_forward_cfa_penalty: float

    def __post_init__(self):
        matrix = np.asarray(self.event_type_transition_matrix, dtype=np.float64)
        if matrix.shape != (len(EventType), len(EventType)):
            raise InvalidArchetypeError(f"{self.name}: transition matrix must be 5x5, got {matrix.shape}")
        if np.any(matrix < 0) or np.any(matrix > 1):
            raise InvalidArchetypeError(f"{self.name}: transition probabilities must lie in [0, 1]")
        if np.any(np.abs(matrix.sum(axis=1) - 1.0) > STOCHASTIC_TOLERANCE):
            raise InvalidArchetypeError(f"{self.name}: transition rows must sum to 1")
        if self.mean_session_length < 1:
            raise InvalidArchetypeError(f"{self.name}: mean session length must be positive")
        if not 0.0 <= self.cfa_base_prob <= 1.0:
            raise InvalidArchetypeError(f"{self.name}: cfa_base_prob must lie in [0, 1]")
        object.__setattr__(
            self, "event_type_transition_matrix", tuple(tuple(float(p) for p in row) for row in matrix)
        )

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.event_type_transition_matrix, dtype=np.float64)


# ---------------------------------------------------------------- parsing


def _parse_event_line(fields: List[str]) -> Tuple[str, str, int, RawRecord]:
    user, video, code, position, timestamp, state, rate = fields
    code_value = int(code)
    if code_value not in range(len(EventType)):
        raise MalformedRecordError(f"event code {code} out of range")
    record = RawRecord(
        position=float(position),
        timestamp=float(timestamp),
        state=int(state),
        rate=float(rate),
    )
    if not (math.isfinite(record.position) and math.isfinite(record.timestamp) and math.isfinite(record.rate)):
        raise MalformedRecordError("non-finite value")
    if record.position < 0 or record.timestamp < 0:
        raise MalformedRecordError("negative position or timestamp")
    if record.rate <= 0:
        raise MalformedRecordError("non-positive rate")
    if record.state not in (0, 1):
        raise MalformedRecordError(f"state {state} is not 0 or 1")
    return user, video, code_value, record


def _parse_quiz_line(fields: List[str]) -> Tuple[str, str, float, float, float]:
    user, video, points, points_max, answer = fields
    values = float(points), float(points_max), float(answer)
    if not all(math.isfinite(v) for v in values):
        raise MalformedRecordError("non-finite quiz value")
    if values[0] < 0 or values[1] <= 0 or values[2] < 0:
        raise MalformedRecordError("invalid quiz values")
    return user, video, values[0], values[1], values[2]


def _build_events(
    records: List[Tuple[int, RawRecord]],
    summary: ParseSummary,
    skip_tolerance: float
) -> List[ClickEvent]:
    records = sorted(records, key=lambda item: item[1].timestamp)
    events: List[ClickEvent] = []
    first_code, first = records[0]
    # the first click has no previous player state; its logged code stands unless it contradicts the state
    if first_code == EventType.PLAY and first.state == 0 or first_code == EventType.PAUSE and first.state == 1:
        first_code = EventType.PLAY if first.state == 1 else EventType.PAUSE
        summary.reclassified += 1
    events.append(ClickEvent(EventType(first_code), first.position, first.timestamp, first.state, first.rate))
    for code, record in records[1:]:
        event_type = classify_event(events[-1], record, skip_tolerance)
        if event_type != code:
            summary.reclassified += 1
        events.append(ClickEvent(event_type, record.position, record.timestamp, record.state, record.rate))
    coalesced = coalesce_events(events)
    summary.coalesced += len(events) - len(coalesced)
    return coalesced


def parse_log(path: str, skip_tolerance: float = SKIP_TOLERANCE, dataset_name: Optional[str] = None) -> Tuple[Corpus, ParseSummary]:
    """
    Parse a corpus file into sessions.

    Args:
        path: Corpus file path
        skip_tolerance: Skip classification tolerance in seconds
        dataset_name: Name stored on the corpus (defaults to the file name)

    Returns:
        Tuple[Corpus, ParseSummary]: Parsed corpus and skip counters
    """
    summary = ParseSummary()
    events: Dict[Tuple[str, str], List[Tuple[int, RawRecord]]] = defaultdict(list)
    quizzes: Dict[Tuple[str, str], Tuple[float, float, float]] = {}
    video_lengths: Dict[str, float] = {}
    header_name: Optional[str] = None

    if not os.path.isfile(path):
        raise DataError(f"Corpus file {path} does not exist")
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            stripped = line.strip()
            if stripped.startswith(DATASET_HEADER):
                header_name = stripped[len(DATASET_HEADER):].strip() or None
                continue
            if not stripped or stripped.startswith("#"):
                continue
            summary.total_lines += 1
            fields = line.rstrip("\n").rstrip("\r").split("\t")
            try:
                if len(fields) == 7:
                    user, video, code, record = _parse_event_line(fields)
                    events[(user, video)].append((code, record))
                    summary.event_records += 1
                elif len(fields) == 5:
                    user, video, points, points_max, answer = _parse_quiz_line(fields)
                    previous = quizzes.get((user, video))
                    if previous is None or answer < previous[2]:
                        quizzes[(user, video)] = (points, points_max, answer)
                    summary.quiz_records += 1
                elif len(fields) == 3 and fields[0] == "video":
                    length = float(fields[2])
                    if not (math.isfinite(length) and length > 0):
                        raise MalformedRecordError("video length must be positive")
                    video_lengths[fields[1]] = length
                    summary.video_records += 1
                else:
                    raise MalformedRecordError(f"unexpected field count {len(fields)}")
            except (ValueError, MalformedRecordError) as e:
                summary.malformed += 1
                logger.debug(f"Skipping malformed line {line_number} of {path}: {str(e)}")

    if summary.total_lines == 0:
        logger.warning(f"Corpus file {path} is empty")
    elif summary.malformed / summary.total_lines > MAX_MALFORMED_FRACTION:
        raise CorpusRejectedError(
            f"{summary.malformed} of {summary.total_lines} lines of {path} are malformed"
        )

    observed_length: Dict[str, float] = defaultdict(float)
    for (user, video), records in events.items():
        for _, record in records:
            observed_length[video] = max(observed_length[video], record.position)

    sessions: List[ClickSession] = []
    for (user, video) in sorted(events):
        quiz = quizzes.get((user, video))
        if quiz is None:
            summary.unlabeled += 1
            continue
        points, points_max, answer = quiz
        if points > points_max:
            summary.invalid_score += 1
            logger.debug(f"Dropping {user}/{video}: points {points} exceed maximum {points_max}")
            continue
        session_events = _build_events(events[(user, video)], summary, skip_tolerance)
        length = video_lengths.get(video, max(observed_length[video], 1.0))
        sessions.append(ClickSession(
            user_id=user,
            video_id=video,
            video_length=length,
            events=tuple(session_events),
            answer_timestamp=answer,
            points_awarded=points,
            points_max=points_max,
        ))
    summary.sessions = len(sessions)

    logger.info(
        f"Parsed {path}: {summary.total_lines} lines, {summary.malformed} malformed, "
        f"{summary.sessions} sessions ({summary.unlabeled} unlabeled, {summary.invalid_score} invalid score)"
    )
    name = dataset_name or header_name or path.replace("\\", "/").rsplit("/", 1)[-1]
    return Corpus(sessions=tuple(sessions), dataset_name=name), summary


def serialize_corpus(corpus: Corpus, path: str) -> str:
    """Write a corpus in the format read by parse_log."""
    lines: List[str] = [f"{DATASET_HEADER} {corpus.dataset_name}"]
    lengths: Dict[str, float] = {}
    for session in corpus.sessions:
        lengths.setdefault(session.video_id, session.video_length)
    for video in sorted(lengths):
        lines.append(f"video\t{video}\t{lengths[video]!r}")
    for session in corpus.sessions:
        for event in session.events:
            lines.append(
                f"{session.user_id}\t{session.video_id}\t{int(event.event_type)}\t"
                f"{event.position!r}\t{event.timestamp!r}\t{event.playback_state}\t{event.rate!r}"
            )
        if session.answer_timestamp is not None:
            lines.append(
                f"{session.user_id}\t{session.video_id}\t{session.points_awarded!r}\t"
                f"{session.points_max!r}\t{session.answer_timestamp!r}"
            )
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    return path


def corpus_summary(corpus: Corpus) -> Dict[str, float]:
    """Dataset statistics: users, videos, clicks, sessions, average CFA and per-type counts."""
    counts = np.zeros(len(EventType), dtype=np.int64)
    for session in corpus.sessions:
        for event in session.events:
            counts[int(event.event_type)] += 1
    cfa = [compute_cfa(s).cfa for s in corpus.sessions]
    summary: Dict[str, float] = {
        "users": len({s.user_id for s in corpus.sessions}),
        "videos": len({s.video_id for s in corpus.sessions}),
        "sessions": len(corpus.sessions),
        "events": int(counts.sum()),
        "avg_cfa": float(np.mean(cfa)) if cfa else 0.0,
    }
    for event_type in EventType:
        summary[event_type.name.lower()] = int(counts[int(event_type)])
    return summary


# ---------------------------------------------------------------- splits


def split_folds(corpus: Corpus, n_folds: int = 5, seed: int = 0, stratify: bool = False) -> Corpus:
    """
    Assign every session to one of `n_folds` equally sized folds.

    The assignment depends only on session ids, the seed and (when stratified)
    the CFA labels, never on the order of the sessions in the corpus.
    """
    if n_folds < 2:
        raise InvalidSplitError(f"need at least 2 folds, got {n_folds}")
    if len(corpus.sessions) == 0:
        raise InvalidSplitError("cannot split an empty corpus")
    if n_folds > len(corpus.sessions):
        raise InvalidSplitError(f"{n_folds} folds for {len(corpus.sessions)} sessions")

    rng = np.random.default_rng(seed)
    by_id = sorted(range(len(corpus.sessions)), key=lambda i: corpus.sessions[i].session_id)
    if stratify:
        groups: Dict[int, List[int]] = defaultdict(list)
        for index in by_id:
            groups[compute_cfa(corpus.sessions[index]).cfa].append(index)
        order: List[int] = []
        for label in sorted(groups):
            members = groups[label]
            order.extend(members[i] for i in rng.permutation(len(members)))
    else:
        order = [by_id[i] for i in rng.permutation(len(by_id))]

    assignments = [0] * len(corpus.sessions)
    for rank, index in enumerate(order):
        assignments[index] = rank % n_folds
    return replace(corpus, fold_assignments=tuple(assignments))


def meta_size(total: int, meta_fraction: float) -> int:
    """Half-up rounding of fraction * total."""
    return int(math.floor(meta_fraction * total + 0.5))


def carve_meta(
    train_sessions: Sequence[ClickSession],
    meta_fraction: float = DEFAULT_META_FRACTION,
    seed: int = 0
) -> Tuple[List[ClickSession], List[ClickSession]]:
    """
    Split training sessions into D_train and a small disjoint D_meta.

    Returns:
        Tuple[List[ClickSession], List[ClickSession]]: (D_train, D_meta), each in input order
    """
    if not 0 < meta_fraction < 0.5:
        raise InvalidSplitError(f"meta fraction must lie in (0, 0.5), got {meta_fraction}")
    size = meta_size(len(train_sessions), meta_fraction)
    if size == 0:
        raise InvalidSplitError(f"meta fraction {meta_fraction} of {len(train_sessions)} sessions is empty")
    rng = np.random.default_rng(seed)
    by_id = sorted(range(len(train_sessions)), key=lambda i: train_sessions[i].session_id)
    chosen = {by_id[i] for i in rng.permutation(len(by_id))[:size]}
    train = [s for i, s in enumerate(train_sessions) if i not in chosen]
    meta = [s for i, s in enumerate(train_sessions) if i in chosen]
    return train, meta


def subsample(sessions: Sequence[ClickSession], fraction: float, seed: int) -> List[ClickSession]:
    """Keep round(fraction * len) sessions chosen at random, in input order."""
    size = meta_size(len(sessions), fraction)
    rng = np.random.default_rng(seed)
    chosen = set(rng.permutation(len(sessions))[:size].tolist())
    return [s for i, s in enumerate(sessions) if i in chosen]


# ---------------------------------------------------------------- synthetic corpora


def default_archetypes() -> List[SynthArchetype]:
    """A play/pause dominated watcher and a skip dominated skimmer."""
    watcher = SynthArchetype(
        name="watcher",
        event_type_transition_matrix=(
            (0.15, 0.70, 0.10, 0.02, 0.03),
            (0.80, 0.05, 0.10, 0.02, 0.03),
            (0.60, 0.25, 0.10, 0.02, 0.03),
            (0.60, 0.30, 0.05, 0.02, 0.03),
            (0.60, 0.30, 0.05, 0.02, 0.03),
        ),
        mean_session_length=40,
        cfa_base_prob=0.95,
        skip_forward_cfa_penalty=0.0,
    )
    skimmer = SynthArchetype(
        name="skimmer",
        event_type_transition_matrix=(
            (0.05, 0.10, 0.15, 0.65, 0.05),
            (0.15, 0.05, 0.10, 0.65, 0.05),
            (0.10, 0.05, 0.15, 0.65, 0.05),
            (0.10, 0.05, 0.20, 0.60, 0.05),
            (0.10, 0.10, 0.15, 0.60, 0.05),
        ),
        mean_session_length=40,
        cfa_base_prob=0.95,
        skip_forward_cfa_penalty=-1.5,
    )
    return [watcher, skimmer]


def load_archetypes(path: str) -> List[SynthArchetype]:
    """
    Read archetypes from a flat key=value file.

    A new archetype starts at every `name` key. Keys: name, mean_session_length,
    cfa_base_prob, skip_forward_cfa_penalty and transition.0 .. transition.4
    (five whitespace separated probabilities each).
    """
    blocks: List[Dict[str, str]] = []
    for key, value in read_flat_config(path, multi=True):
        if key == "name":
            blocks.append({})
        if not blocks:
            raise InvalidArchetypeError(f"{path}: archetype must start with a name key")
        blocks[-1][key] = value

    archetypes = []
    for block in blocks:
        try:
            matrix = tuple(
                tuple(float(p) for p in block[f"transition.{row}"].split())
                for row in range(len(EventType))
            )
            archetypes.append(SynthArchetype(
                name=block["name"],
                event_type_transition_matrix=matrix,
                mean_session_length=int(block["mean_session_length"]),
                cfa_base_prob=float(block["cfa_base_prob"]),
                skip_forward_cfa_penalty=float(block.get("skip_forward_cfa_penalty", "0")),
            ))
        except KeyError as e:
            raise InvalidArchetypeError(f"{path}: missing key {e}")
        except ValueError as e:
            raise InvalidArchetypeError(f"{path}: {str(e)}")
    if not archetypes:
        raise InvalidArchetypeError(f"{path} defines no archetype")
    return archetypes


def write_archetypes(archetypes: Sequence[SynthArchetype], path: str) -> str:
    lines = []
    for archetype in archetypes:
        lines.append(f"name = {archetype.name}")
        lines.append(f"mean_session_length = {archetype.mean_session_length}")
        lines.append(f"cfa_base_prob = {archetype.cfa_base_prob!r}")
        lines.append(f"skip_forward_cfa_penalty = {archetype.skip_forward_cfa_penalty!r}")
        for row, probabilities in enumerate(archetype.event_type_transition_matrix):
            lines.append(f"transition.{row} = " + " ".join(repr(p) for p in probabilities))
        lines.append("")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines))
    return path


class _PlayerSimulator:
    """Synthesises player states that classify back to the requested types."""

    def __init__(self, rng: np.random.Generator, video_length: float, start_time: float):
        self.rng = rng
        self.video_length = video_length
        self.start_time = start_time

    def first(self) -> ClickEvent:
        return ClickEvent(EventType.PLAY, 0.0, self.start_time, 1, 1.0)

    def next(self, prev: ClickEvent, wanted: EventType) -> ClickEvent:
        # gaps above the coalescing window keep generated sessions already coalesced
        timestamp = prev.timestamp + 6.0 + float(self.rng.exponential(10.0))
        expected = pre_click_position(prev, timestamp)
        jump = float(self.rng.uniform(10.0, 60.0))

        if wanted == EventType.SKIP_FORWARD and expected + SKIP_TOLERANCE + 10.0 > self.video_length:
            wanted = EventType.SKIP_BACK
        if wanted == EventType.SKIP_BACK and expected <= SKIP_TOLERANCE + 10.0:
            wanted = EventType.SKIP_FORWARD

        if wanted == EventType.PLAY:
            return ClickEvent(wanted, expected, timestamp, 1, prev.rate)
        if wanted == EventType.PAUSE:
            return ClickEvent(wanted, expected, timestamp, 0, prev.rate)
        if wanted == EventType.SKIP_BACK:
            return ClickEvent(wanted, max(expected - jump, 0.0), timestamp, prev.playback_state, prev.rate)
        if wanted == EventType.SKIP_FORWARD:
            target = min(expected + jump, self.video_length)
            return ClickEvent(wanted, target, timestamp, prev.playback_state, prev.rate)
        choices = [r for r in SYNTHETIC_RATES if r != prev.rate]
        rate = float(choices[int(self.rng.integers(len(choices)))])
        return ClickEvent(EventType.RATE_CHANGE, expected, timestamp, prev.playback_state, rate)


def generate_synthetic(
    archetypes: Sequence[SynthArchetype],
    n_sessions: int,
    seed: int = 0,
    dataset_name: str = "synthetic",
    n_videos: int = 20
) -> Corpus:
    """
    Generate a labelled corpus from Markov archetypes.

    Each session picks an archetype uniformly, walks its transition matrix for
    max(3, Poisson(mean length)) clicks and is CFA with probability
    clamp(base + penalty * skip-forward fraction, 0, 1).
    """
    if not archetypes:
        raise InvalidArchetypeError("at least one archetype is required")
    if n_sessions < 1:
        raise InvalidArchetypeError(f"n_sessions must be positive, got {n_sessions}")

    rng = np.random.default_rng(seed)
    sessions = []
    for index in range(n_sessions):
        archetype_id = int(rng.integers(len(archetypes)))
        archetype = archetypes[archetype_id]
        matrix = archetype.matrix
        length = max(MIN_SYNTHETIC_LENGTH, int(rng.poisson(archetype.mean_session_length)))

        start_time = 1.6e9 + float(index) * 86400.0
        player = _PlayerSimulator(rng, SYNTHETIC_VIDEO_LENGTH, start_time)
        events = [player.first()]
        state = int(EventType.PLAY)
        while len(events) < length:
            state = int(rng.choice(len(EventType), p=matrix[state]))
            events.append(player.next(events[-1], EventType(state)))
            state = int(events[-1].event_type)

        skip_forward = sum(1 for e in events if e.event_type == EventType.SKIP_FORWARD) / len(events)
        probability = min(max(archetype.cfa_base_prob + archetype.skip_forward_cfa_penalty * skip_forward, 0.0), 1.0)
        cfa = rng.random() < probability
        points = SYNTHETIC_POINTS_MAX if cfa else float(rng.integers(0, int(SYNTHETIC_POINTS_MAX)))

        # the answer falls between two clicks, leaving up to two clicks after it
        after = int(rng.integers(0, min(3, length - 1)))
        answer = events[length - 1 - after].timestamp + 3.0

        sessions.append(ClickSession(
            user_id=f"u{index:05d}",
            video_id=f"v{index % n_videos:03d}",
            video_length=SYNTHETIC_VIDEO_LENGTH,
            events=tuple(events),
            answer_timestamp=answer,
            points_awarded=points,
            points_max=SYNTHETIC_POINTS_MAX,
            archetype=archetype_id,
        ))

    logger.info(f"Generated {n_sessions} synthetic sessions from {len(archetypes)} archetypes (seed {seed})")
    return Corpus(sessions=tuple(sessions), dataset_name=dataset_name)
