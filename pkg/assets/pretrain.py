#!/usr/bin/env python3
"""
ClickCFA - Self-supervised Pre-training

Every click of every session becomes one training sample: the GRU reads the
remaining clicks of the session in temporal order and a ReLU head predicts the
held-out click's feature row. Only the GRU weights are kept afterwards.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from assets.clickstream import ClickSession, ROW_DIM, session_rows
from assets.config_manager import TrainRecipe
from assets.neural import (
    GruCell,
    LinearHead,
    ParamStore,
    backward,
    check_finite,
    make_generator,
    mse_loss,
    pad_batch,
    sgd_step,
    weighted_mean,
)

logger = logging.getLogger('clickcfa-pretrain')

GAP_MARKER = -1.0
SMOOTHING_WINDOW = 5
GRU_PREFIX = "gru"
HEAD_PREFIX = "pre_head"


@dataclass(frozen=True)
class LeaveOneOutSample:
    """Context rows around one held-out click and the click's own row."""

    context: np.ndarray
    target: np.ndarray
    origin: Tuple[str, int]
    session_length: int


@dataclass
class PretrainResult:
    gru_params: ParamStore
    history: List[Tuple[int, float]] = field(default_factory=list)
    stop_reason: str = "max_epochs"


def expand_corpus(sessions: Sequence[ClickSession], gap_marker: bool = False) -> Tuple[List[LeaveOneOutSample], int]:
    """
    One leave-one-out sample per click of every session.

    Args:
        sessions: Sessions with their full click sequences
        gap_marker: Insert a row of -1 where the held-out click was

    Returns:
        Tuple[List[LeaveOneOutSample], int]: Samples and the number of skipped single-click sessions
    """
    samples: List[LeaveOneOutSample] = []
    skipped = 0
    for session in sessions:
        rows = session_rows(session)
        length = rows.shape[0]
        if length < 2:
            skipped += 1
            continue
        for i in range(length):
            context = np.delete(rows, i, axis=0)
            if gap_marker:
                context = np.insert(context, i, np.full(ROW_DIM, GAP_MARKER), axis=0)
            samples.append(LeaveOneOutSample(
                context=context,
                target=rows[i].copy(),
                origin=(session.session_id, i),
                session_length=length,
            ))
    if skipped:
        logger.info(f"Skipped {skipped} single-click sessions during pre-training expansion")
    return samples, skipped


def build_pretrain_network(recipe: TrainRecipe) -> Tuple[GruCell, LinearHead, ParamStore]:
    """GRU plus ReLU prediction head, initialised from the recipe seed."""
    gru = GruCell(ROW_DIM, recipe.hidden_dim, prefix=GRU_PREFIX)
    head = LinearHead(recipe.hidden_dim, ROW_DIM, activation="relu", prefix=HEAD_PREFIX)
    generator = make_generator(recipe.seed)
    store = ParamStore()
    gru.init_params(store, generator)
    head.init_params(store, generator)
    return gru, head, store


def _smoothed_increase(losses: List[float]) -> bool:
    if len(losses) <= SMOOTHING_WINDOW:
        return False
    current = np.mean(losses[-SMOOTHING_WINDOW:])
    previous = np.mean(losses[-SMOOTHING_WINDOW - 1:-1])
    return bool(current > previous)


def pretrain(
    samples: Sequence[LeaveOneOutSample],
    recipe: TrainRecipe,
    init: Optional[ParamStore] = None
) -> PretrainResult:
    """
    Minimise the leave-one-out reconstruction loss with mini-batch SGD.

    The objective is sum over sessions of (1/L) * sum over held-out clicks of
    the row MSE. Mini-batches use per-sample weights mean(L)/L so their mean
    loss is proportional to that objective.

    Args:
        samples: Output of expand_corpus
        recipe: Hidden size, batch size, pre-training lr/epochs and early-stop settings
        init: Optional starting parameters (GRU and head) instead of a fresh init

    Returns:
        PretrainResult: GRU weights, (epoch, loss) history and why training stopped
    """
    gru, head, store = build_pretrain_network(recipe)
    if init is not None:
        store.copy_from(init)
    result = PretrainResult(gru_params=store.subset(f"{GRU_PREFIX}."))
    if not samples or recipe.pretrain_epochs == 0:
        return result

    lengths = np.array([s.session_length for s in samples], dtype=np.float64)
    mean_length = float(np.mean(lengths))
    rng = np.random.default_rng(recipe.seed)
    losses: List[float] = []
    best = float("inf")
    since_best = 0

    for epoch in range(1, recipe.pretrain_epochs + 1):
        order = rng.permutation(len(samples))
        epoch_objective = 0.0
        for start in range(0, len(order), recipe.batch_size):
            batch = [samples[i] for i in order[start:start + recipe.batch_size]]
            x, mask = pad_batch([s.context for s in batch], ROW_DIM)
            target = torch.from_numpy(np.stack([s.target for s in batch]))
            inv_length = torch.tensor([1.0 / s.session_length for s in batch], dtype=torch.float64)

            _, h = gru.forward(store, x, mask)
            per_sample = mse_loss(head.forward(store, h), target, reduction="none")
            loss = weighted_mean(per_sample, mean_length * inv_length)
            check_finite([loss], stage="pretrain", epoch=epoch)
            sgd_step(store, backward(loss, store), recipe.pretrain_lr, stage="pretrain", epoch=epoch)
            epoch_objective += float((inv_length * per_sample.detach()).sum())

        losses.append(epoch_objective)
        result.history.append((epoch, epoch_objective))
        logger.info(f"Pre-training epoch {epoch}: L_pre = {epoch_objective:.6f}")

        if epoch_objective < best - recipe.early_stop_delta:
            best = epoch_objective
            since_best = 0
        else:
            since_best += 1
        if recipe.early_stop_patience and since_best >= recipe.early_stop_patience:
            logger.info(f"Early stop after epoch {epoch}: no improvement above {recipe.early_stop_delta}")
            result.stop_reason = "early_stop"
            break
        if _smoothed_increase(losses):
            logger.warning(f"Pre-training loss rising over a {SMOOTHING_WINDOW}-epoch window, halting at epoch {epoch}")
            result.stop_reason = "halted"
            break

    result.gru_params = store.subset(f"{GRU_PREFIX}.")
    return result
