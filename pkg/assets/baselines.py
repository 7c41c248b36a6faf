#!/usr/bin/env python3
"""
ClickCFA - Baseline Models

- n-gram model: sliding windows of n event types, each one-hot encoded into a
  5n-dim row and fed to the same GRU trunk and softmax head as the CFA model
- CNN model: 1-D convolution over the time axis of the click rows (kernel 3,
  64 channels, same padding, ReLU), global max-pool, softmax head
"""

import math
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from assets.clickstream import ClickSession, EventType, ROW_DIM
from assets.cfa_model import CfaPredictor, LabeledSequences, SequenceClassifier, TrainResult, train_plain
from assets.config_manager import TrainRecipe
from assets.errors import EmptyEncodingError
from assets.neural import LinearHead, ParamStore, make_generator, uniform_tensor

logger = logging.getLogger('clickcfa-baselines')

N_TYPES = len(EventType)
CNN_CHANNELS = 64
CNN_KERNEL = 3
CNN_PREFIX = "cnn"


@dataclass(frozen=True)
class NgramEncoding:
    """Contiguous n-type windows of one event-type sequence."""

    n: int
    grams: Tuple[Tuple[int, ...], ...]

    @property
    def rows(self) -> np.ndarray:
        """(len(grams), 5n) concatenated one-hot rows."""
        rows = np.zeros((len(self.grams), N_TYPES * self.n), dtype=np.float64)
        for i, gram in enumerate(self.grams):
            for j, code in enumerate(gram):
                rows[i, j * N_TYPES + code] = 1.0
        return rows


def ngram_encode(types: Sequence[int], n: int) -> NgramEncoding:
    if n not in (3, 4):
        raise ValueError(f"Invalid n: {n}. Must be 3 or 4")
    types = [int(t) for t in types]
    if any(t not in range(N_TYPES) for t in types):
        raise ValueError(f"event type codes must lie in 0..{N_TYPES - 1}")
    grams = tuple(tuple(types[i:i + n]) for i in range(len(types) - n + 1))
    return NgramEncoding(n=n, grams=grams)


def gram_label(gram: Sequence[int]) -> str:
    """Readable form such as Pl-Pa-Sf-Sb."""
    return "-".join(EventType(code).abbreviation for code in gram)


class NgramPredictor(CfaPredictor):
    """GRU classifier over n-gram rows of the clicks before the answer."""

    def __init__(self, n: int, hidden_dim: int = 128, seed: int = 0):
        super().__init__(hidden_dim=hidden_dim, seed=seed, input_dim=N_TYPES * n)
        self.n = n

    def encode(self, session: ClickSession) -> np.ndarray:
        types = [int(e.event_type) for e in session.answered_events()]
        encoding = ngram_encode(types, self.n)
        if not encoding.grams:
            raise EmptyEncodingError(f"{session.session_id} has fewer than {self.n} clicks before its answer")
        return encoding.rows


class CnnPredictor(SequenceClassifier):
    """Text-CNN style classifier over the time-varying encoding."""

    def __init__(self, seed: int = 0, channels: int = CNN_CHANNELS, kernel: int = CNN_KERNEL):
        super().__init__(seed)
        self.channels = channels
        self.kernel = kernel
        self.head = LinearHead(channels, 2, activation="softmax", prefix=f"{CNN_PREFIX}_head")
        generator = make_generator(seed)
        bound = 1.0 / math.sqrt(ROW_DIM * kernel)
        self.params.add(f"{CNN_PREFIX}.K", uniform_tensor((channels, ROW_DIM, kernel), bound, generator))
        self.params.add(f"{CNN_PREFIX}.c", torch.zeros(channels, dtype=torch.float64))
        self.head.init_params(self.params, generator)

    def features(self, x: torch.Tensor, mask: torch.Tensor, params: Optional[ParamStore] = None) -> torch.Tensor:
        """Max-pooled ReLU feature maps, (batch, channels)."""
        params = self.params if params is None else params
        # padded rows are zero, so positions next to a sequence end see the same zeros as same-padding
        maps = F.conv1d(x.transpose(1, 2), params[f"{CNN_PREFIX}.K"], params[f"{CNN_PREFIX}.c"], padding=self.kernel // 2)
        maps = torch.relu(maps)
        # ReLU maps are >= 0, so zeroing padded positions leaves the max unchanged
        maps = maps * mask.unsqueeze(1).to(maps.dtype)
        return maps.max(dim=2).values

    def forward(self, x: torch.Tensor, mask: torch.Tensor, params: Optional[ParamStore] = None) -> torch.Tensor:
        params = self.params if params is None else params
        return self.head.forward(params, self.features(x, mask, params))


def train_ngram_baseline(
    train_sessions: Sequence[ClickSession],
    n: int,
    recipe: TrainRecipe,
    validation_sessions: Optional[Sequence[ClickSession]] = None
) -> Tuple[NgramPredictor, TrainResult, LabeledSequences]:
    """
    Train the n-gram baseline.

    Returns:
        Tuple[NgramPredictor, TrainResult, LabeledSequences]: Model, history and the
        encoded training set (its `dropped` counts sessions too short for one gram)
    """
    model = NgramPredictor(n, hidden_dim=recipe.hidden_dim, seed=recipe.seed)
    train = model.prepare(train_sessions)
    logger.info(f"{n}-gram baseline: {len(train)} training sequences, {train.dropped} dropped as too short")
    validation = model.prepare(validation_sessions) if validation_sessions is not None else None
    return model, train_plain(model, train, recipe, validation), train


def train_cnn_baseline(
    train_sessions: Sequence[ClickSession],
    recipe: TrainRecipe,
    validation_sessions: Optional[Sequence[ClickSession]] = None
) -> Tuple[CnnPredictor, TrainResult, LabeledSequences]:
    model = CnnPredictor(seed=recipe.seed)
    train = model.prepare(train_sessions)
    validation = model.prepare(validation_sessions) if validation_sessions is not None else None
    return model, train_plain(model, train, recipe, validation), train
