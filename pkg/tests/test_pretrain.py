from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
import torch

from assets.clickstream import session_rows
from assets.data_io import default_archetypes, generate_synthetic
from assets.pretrain import (
    GAP_MARKER,
    LeaveOneOutSample,
    build_pretrain_network,
    expand_corpus,
    pretrain,
)

PL, PA, SB, SF, SP = range(5)


def test_sample_count_is_total_clicks(session_factory) -> None:
    sessions = [session_factory([PL, PA, PL, SB], user="a"), session_factory([PL, SF, PA], user="b")]
    samples, skipped = expand_corpus(sessions)
    assert len(samples) == 7
    assert skipped == 0
    assert all(s.context.shape == (s.session_length - 1, 5) for s in samples)


def test_single_click_session_is_skipped(session_factory) -> None:
    samples, skipped = expand_corpus([session_factory([PL])])
    assert samples == []
    assert skipped == 1


def test_origins_cover_every_click_once(small_corpus) -> None:
    sessions = list(small_corpus.sessions[:12])
    samples, _ = expand_corpus(sessions)
    expected = {(s.session_id, i) for s in sessions for i in range(s.length)}
    origins = [sample.origin for sample in samples]
    assert len(origins) == len(set(origins))
    assert set(origins) == expected


def test_context_keeps_temporal_order(session_factory) -> None:
    session = session_factory([PL, PA, PL, SB])
    rows = session_rows(session)
    samples, _ = expand_corpus([session])
    held_out = samples[2]
    np.testing.assert_array_equal(held_out.target, rows[2])
    np.testing.assert_array_equal(held_out.context, rows[[0, 1, 3]])


def test_gap_marker_variant(session_factory) -> None:
    samples, _ = expand_corpus([session_factory([PL, PA, PL])], gap_marker=True)
    context = samples[1].context
    assert context.shape == (3, 5)
    assert (context[1] == GAP_MARKER).all()


def _constant_samples(value: np.ndarray, count: int = 8, length: int = 4) -> list:
    return [
        LeaveOneOutSample(
            context=np.tile(value, (length - 1, 1)),
            target=value.copy(),
            origin=(f"s{i}", 0),
            session_length=length,
        )
        for i in range(count)
    ]


def test_constant_corpus_is_reconstructed(tiny_recipe) -> None:
    value = np.array([0.25, 0.5, 0.1, 1.0, 0.25])
    recipe = replace(tiny_recipe, pretrain_epochs=200, pretrain_lr=0.5)
    _, _, init = build_pretrain_network(recipe)
    with torch.no_grad():
        init["pre_head.W"].zero_()
        init["pre_head.b"].fill_(0.1)
    result = pretrain(_constant_samples(value), recipe, init=init)
    assert result.history[-1][1] < 1e-3
    assert result.history[-1][1] < result.history[0][1]


def test_zero_epochs_return_initial_weights(tiny_recipe, small_corpus) -> None:
    samples, _ = expand_corpus(small_corpus.sessions[:3])
    recipe = replace(tiny_recipe, pretrain_epochs=0)
    result = pretrain(samples, recipe)
    _, _, store = build_pretrain_network(recipe)
    assert result.gru_params.fingerprint() == store.subset("gru.").fingerprint()
    assert result.history == []


def test_only_gru_weights_are_returned(tiny_recipe, small_corpus) -> None:
    samples, _ = expand_corpus(small_corpus.sessions[:2])
    result = pretrain(samples, replace(tiny_recipe, pretrain_epochs=1))
    assert result.gru_params.names()
    assert all(name.startswith("gru.") for name in result.gru_params.names())


def test_pretraining_is_deterministic(tiny_recipe, small_corpus) -> None:
    samples, _ = expand_corpus(small_corpus.sessions[:4])
    first = pretrain(samples, tiny_recipe)
    second = pretrain(samples, tiny_recipe)
    assert first.gru_params.fingerprint() == second.gru_params.fingerprint()
    assert first.history == second.history


def test_pretraining_ignores_labels(tiny_recipe, session_factory) -> None:
    right = session_factory([PL, PA, SB, PL], points=10.0)
    wrong = session_factory([PL, PA, SB, PL], points=2.0)
    a = pretrain(expand_corpus([right])[0], tiny_recipe)
    b = pretrain(expand_corpus([wrong])[0], tiny_recipe)
    assert a.gru_params.fingerprint() == b.gru_params.fingerprint()


@pytest.mark.slow
def test_structured_corpus_beats_shuffled_control(tiny_recipe) -> None:
    corpus = generate_synthetic(default_archetypes(), 40, seed=5)
    samples, _ = expand_corpus(corpus.sessions)
    rng = np.random.default_rng(0)
    targets = [samples[i].target for i in rng.permutation(len(samples))]
    control = [replace(s, target=t) for s, t in zip(samples, targets)]
    recipe = replace(tiny_recipe, hidden_dim=8, batch_size=32, pretrain_epochs=15, pretrain_lr=0.05, early_stop_patience=0)
    real = pretrain(samples, recipe)
    shuffled = pretrain(control, recipe)
    assert real.history[-1][1] < shuffled.history[-1][1]
