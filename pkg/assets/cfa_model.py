#!/usr/bin/env python3
"""
ClickCFA - CFA Prediction Model

GRU over the time-varying encoding followed by a softmax head giving the
probability pair (CFA, non-CFA), plus the plain (unweighted) training loop
shared by every sequence classifier.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from assets.clickstream import ClickSession, ROW_DIM, build_time_varying, compute_cfa
from assets.config_manager import TrainRecipe
from assets.errors import EmptyEncodingError, ShapeError
from assets.neural import (
    GruCell,
    LinearHead,
    ParamStore,
    backward,
    bce_loss,
    check_finite,
    make_generator,
    pad_batch,
    sgd_step,
    weighted_mean,
)

logger = logging.getLogger('clickcfa-model')

GRU_PREFIX = "gru"
HEAD_PREFIX = "cfa_head"


@dataclass
class LabeledSequences:
    """Model input rows with CFA labels, aligned with the sessions they came from."""

    rows: List[np.ndarray]
    labels: np.ndarray
    sessions: List[ClickSession]
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.rows)

    def subset(self, indices: Sequence[int]) -> "LabeledSequences":
        indices = list(indices)
        return LabeledSequences(
            rows=[self.rows[i] for i in indices],
            labels=self.labels[indices],
            sessions=[self.sessions[i] for i in indices],
        )


@dataclass
class TrainResult:
    """Per-epoch (epoch, mean train loss, validation accuracy or None)."""

    history: List[Tuple[int, float, Optional[float]]] = field(default_factory=list)


def one_hot_targets(labels: np.ndarray) -> torch.Tensor:
    labels = np.asarray(labels, dtype=np.float64)
    return torch.from_numpy(np.stack([labels, 1.0 - labels], axis=1))


def batch_streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """Independent training-batch and meta-batch RNG streams derived from one seed."""
    train_seq, meta_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(train_seq), np.random.default_rng(meta_seq)


class SequenceClassifier:
    """Base class: a network mapping a padded batch of rows to (CFA, non-CFA) probabilities."""

    input_dim = ROW_DIM

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.params = ParamStore()
        self.init_source = "scratch"

    def forward(self, x: torch.Tensor, mask: torch.Tensor, params: Optional[ParamStore] = None) -> torch.Tensor:
        raise NotImplementedError

    def encode(self, session: ClickSession) -> np.ndarray:
        """Input rows of one session; raises EmptyEncodingError when nothing precedes the answer."""
        return build_time_varying(session).rows

    def prepare(self, sessions: Sequence[ClickSession]) -> LabeledSequences:
        """Encode sessions, dropping (and counting) those this model cannot consume."""
        rows, labels, kept = [], [], []
        dropped = 0
        for session in sessions:
            try:
                encoded = self.encode(session)
            except EmptyEncodingError:
                dropped += 1
                continue
            rows.append(encoded)
            labels.append(compute_cfa(session).cfa)
            kept.append(session)
        if dropped:
            logger.info(f"{type(self).__name__}: dropped {dropped} sessions without usable input")
        return LabeledSequences(rows=rows, labels=np.asarray(labels, dtype=np.int64), sessions=kept, dropped=dropped)

    def per_sample_loss(self, data: LabeledSequences, indices: Sequence[int], params: Optional[ParamStore] = None) -> torch.Tensor:
        x, mask = pad_batch([data.rows[i] for i in indices], self.input_dim)
        probs = self.forward(x, mask, params)
        return bce_loss(probs, one_hot_targets(data.labels[list(indices)]), reduction="none")


class CfaPredictor(SequenceClassifier):
    """GRU encoder with a softmax head over (CFA, non-CFA)."""

    def __init__(self, hidden_dim: int = 128, seed: int = 0, input_dim: int = ROW_DIM):
        super().__init__(seed)
        self.input_dim = input_dim
        self.gru = GruCell(input_dim, hidden_dim, prefix=GRU_PREFIX)
        self.head = LinearHead(hidden_dim, 2, activation="softmax", prefix=HEAD_PREFIX)
        generator = make_generator(seed)
        self.gru.init_params(self.params, generator)
        self.head.init_params(self.params, generator)

    def forward(self, x: torch.Tensor, mask: torch.Tensor, params: Optional[ParamStore] = None) -> torch.Tensor:
        params = self.params if params is None else params
        _, h = self.gru.forward(params, x, mask)
        return self.head.forward(params, h)

    def load_pretrained(self, gru_params: ParamStore) -> None:
        """Replace the GRU weights; the head keeps its fresh initialisation."""
        if gru_params is None or not gru_params.names():
            raise ShapeError("pre-trained store holds no GRU weights")
        self.params.copy_from(gru_params, self.gru.param_names())
        self.init_source = f"pretrained({gru_params.fingerprint()[:12]})"


def predict(model: SequenceClassifier, rows: np.ndarray) -> Tuple[Tuple[float, float], int]:
    """
    Probability pair and hard label of one encoded sequence.

    The hard label is CFA (1) only when P(CFA) > P(non-CFA); ties go to non-CFA.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise EmptyEncodingError("cannot predict from an empty encoding")
    probs, labels = predict_batch(model, [rows])
    return (float(probs[0, 0]), float(probs[0, 1])), int(labels[0])


def predict_batch(model: SequenceClassifier, rows: Sequence[np.ndarray], batch_size: int = 256) -> Tuple[np.ndarray, np.ndarray]:
    """Probabilities (n, 2) and hard labels (n,) for many sequences."""
    chunks = []
    with torch.no_grad():
        for start in range(0, len(rows), batch_size):
            x, mask = pad_batch(list(rows[start:start + batch_size]), model.input_dim)
            chunks.append(model.forward(x, mask).numpy())
    probs = np.concatenate(chunks) if chunks else np.zeros((0, 2))
    labels = (probs[:, 0] > probs[:, 1]).astype(np.int64)
    return probs, labels


def accuracy(model: SequenceClassifier, data: LabeledSequences) -> float:
    if len(data) == 0:
        return float("nan")
    _, labels = predict_batch(model, data.rows)
    return float(np.mean(labels == data.labels))


def train_plain(
    model: SequenceClassifier,
    train: LabeledSequences,
    recipe: TrainRecipe,
    validation: Optional[LabeledSequences] = None,
    sample_weights: Optional[np.ndarray] = None
) -> TrainResult:
    """
    Mini-batch SGD on the mean BCE of the training set.

    Args:
        model: Classifier whose parameters are updated in place
        train: Training sequences
        recipe: batch_size, lr, epochs and seed
        validation: Optional held-out set scored after every epoch
        sample_weights: Optional fixed per-sample loss weights

    Returns:
        TrainResult: Per-epoch history
    """
    result = TrainResult()
    if len(train) == 0:
        raise EmptyEncodingError("no training sequences")
    train_rng, _ = batch_streams(recipe.seed)
    weights = None if sample_weights is None else torch.as_tensor(sample_weights, dtype=torch.float64)

    for epoch in range(1, recipe.epochs + 1):
        order = train_rng.permutation(len(train))
        total = 0.0
        for iteration, start in enumerate(range(0, len(order), recipe.batch_size)):
            indices = order[start:start + recipe.batch_size]
            per_sample = model.per_sample_loss(train, indices)
            loss = weighted_mean(per_sample, None if weights is None else weights[torch.as_tensor(indices)])
            check_finite([loss], stage="train", epoch=epoch, iteration=iteration)
            sgd_step(model.params, backward(loss, model.params), recipe.lr, epoch=epoch, iteration=iteration)
            total += float(per_sample.detach().sum())
        mean_loss = total / len(train)
        val_acc = accuracy(model, validation) if validation is not None else None
        result.history.append((epoch, mean_loss, val_acc))
        if val_acc is None:
            logger.info(f"Epoch {epoch}: train loss {mean_loss:.6f}")
        else:
            logger.info(f"Epoch {epoch}: train loss {mean_loss:.6f}, validation ACC {val_acc:.4f}")
    return result
