from __future__ import annotations

import os
import sys
from typing import Sequence

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from assets.clickstream import ClickEvent, ClickSession, EventType  # noqa: E402
from assets.config_manager import TrainRecipe  # noqa: E402
from assets.data_io import default_archetypes, generate_synthetic  # noqa: E402

STATE_OF = {
    EventType.PLAY: 1,
    EventType.PAUSE: 0,
    EventType.SKIP_BACK: 1,
    EventType.SKIP_FORWARD: 1,
    EventType.RATE_CHANGE: 1,
}


def make_session(
    types: Sequence[int],
    *,
    user: str = "u1",
    video: str = "v1",
    answer_after: int | None = None,
    points: float = 10.0,
    points_max: float = 10.0,
    gap: float = 10.0,
    video_length: float = 600.0,
) -> ClickSession:
    """Session whose i-th click of the given type fires at 100 + i * gap, answered after `answer_after` clicks."""
    events = []
    for i, code in enumerate(types):
        event_type = EventType(code)
        events.append(ClickEvent(event_type, float(5 * i), 100.0 + i * gap, STATE_OF[event_type], 1.0))
    after = len(types) if answer_after is None else answer_after
    answer = 100.0 + (after - 1) * gap + gap / 2 if after > 0 else 50.0
    return ClickSession(
        user_id=user,
        video_id=video,
        video_length=video_length,
        events=tuple(events),
        answer_timestamp=answer,
        points_awarded=points,
        points_max=points_max,
    )


@pytest.fixture
def session_factory():
    return make_session


@pytest.fixture
def tiny_recipe() -> TrainRecipe:
    return TrainRecipe(
        hidden_dim=4,
        batch_size=4,
        meta_batch_size=4,
        epochs=2,
        pretrain_epochs=2,
        lr=0.1,
        meta_lr=0.1,
        pretrain_lr=0.05,
        weighting_hidden=5,
        seed=3,
    ).validate()


@pytest.fixture
def small_corpus():
    return generate_synthetic(default_archetypes(), 60, seed=11, n_videos=5)


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    root = tmp_path / "runs"
    monkeypatch.setenv("CLICKCFA_OUTPUT_ROOT", str(root))
    monkeypatch.setenv("CLICKCFA_CONFIG_DIR", str(tmp_path / "config"))
    return root
