#!/usr/bin/env python3
"""
ClickCFA - Clustering-guided Meta-learning

A small weighting network maps each training sample's loss to a weight in
(0, 1). Every training batch runs three steps:

    1. lookahead:  w^(Theta) = w - alpha * grad_w mean(W(L_n(w); Theta) * L_n(w))
    2. meta step:  Theta <- Theta - beta * grad_Theta L_meta(w^(Theta)) on a batch of the current cluster
    3. commit:     w <- w - alpha * grad_w mean(W(L_n(w); Theta_new) * L_n(w))

Training epochs are split across the meta clusters in entropy order.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch

from assets.cfa_model import LabeledSequences, SequenceClassifier, batch_streams
from assets.clustering import MetaClusterSet
from assets.config_manager import TrainRecipe
from assets.errors import InvalidSplitError, TrainingDivergedError
from assets.neural import (
    DTYPE,
    ParamStore,
    backward,
    check_finite,
    make_generator,
    sgd_step,
    uniform_tensor,
    weighted_mean,
)
from assets.utilities import write_csv

logger = logging.getLogger('clickcfa-meta')

WNET_PREFIX = "wnet"
STANDARDIZE_EPS = 1e-8
HISTORY_HEADER = ("iteration", "cluster", "train_loss", "meta_loss", "mean_weight", "std_weight")


class WeightingNet:
    """1 -> hidden (sigmoid) -> 1 (sigmoid) perceptron from a sample loss to its weight."""

    def __init__(self, hidden_dim: int = 100, init: str = "uniform", seed: int = 0, standardize_inputs: bool = False):
        self.hidden_dim = hidden_dim
        self.standardize_inputs = standardize_inputs
        self.params = ParamStore()
        shapes = {"W1": (1, hidden_dim), "b1": (hidden_dim,), "W2": (hidden_dim, 1), "b2": (1,)}
        generator = make_generator(seed)
        for name, shape in shapes.items():
            fan_in = shape[0] if len(shape) == 2 else None
            if init == "uniform" and fan_in is not None:
                tensor = uniform_tensor(shape, 1.0 / math.sqrt(fan_in), generator)
            else:
                tensor = torch.zeros(shape, dtype=DTYPE)
            self.params.add(f"{WNET_PREFIX}.{name}", tensor)

    def inputs(self, losses: torch.Tensor) -> torch.Tensor:
        """Detached network inputs for a batch of per-sample losses."""
        losses = losses.detach()
        if self.standardize_inputs and losses.numel() > 1:
            losses = (losses - losses.mean()) / (losses.std() + STANDARDIZE_EPS)
        return losses

    def forward(self, inputs: torch.Tensor, params: Optional[ParamStore] = None) -> torch.Tensor:
        params = self.params if params is None else params
        x = inputs.reshape(-1, 1).to(DTYPE)
        hidden = torch.sigmoid(x @ params[f"{WNET_PREFIX}.W1"] + params[f"{WNET_PREFIX}.b1"])
        return torch.sigmoid(hidden @ params[f"{WNET_PREFIX}.W2"] + params[f"{WNET_PREFIX}.b2"]).reshape(-1)


def weigh(net: WeightingNet, loss_value: float) -> float:
    """Weight the network assigns to one loss value."""
    with torch.no_grad():
        return float(net.forward(torch.tensor([loss_value], dtype=DTYPE))[0])


def lookahead_update(
    model: SequenceClassifier,
    train: LabeledSequences,
    indices: Sequence[int],
    net: WeightingNet,
    alpha: float,
    iteration: Optional[int] = None
) -> Tuple[ParamStore, torch.Tensor]:
    """
    Virtual weighted SGD step whose result stays differentiable in Theta.

    Returns:
        Tuple[ParamStore, torch.Tensor]: w^(Theta) and the per-sample losses at the current w
    """
    per_sample = model.per_sample_loss(train, indices)
    weights = net.forward(net.inputs(per_sample))
    loss = weighted_mean(per_sample, weights)
    check_finite([loss], stage="lookahead", iteration=iteration)
    grads = backward(loss, model.params, create_graph=True)
    return sgd_step(model.params, grads, alpha, lookahead=True, stage="lookahead", iteration=iteration), per_sample


def meta_gradient(
    model: SequenceClassifier,
    w_hat: ParamStore,
    meta: LabeledSequences,
    meta_indices: Sequence[int],
    net: WeightingNet,
    iteration: Optional[int] = None
) -> Tuple[Dict[str, torch.Tensor], float]:
    """Gradient of the unweighted meta loss at w^(Theta) with respect to Theta."""
    meta_loss = weighted_mean(model.per_sample_loss(meta, meta_indices, params=w_hat))
    check_finite([meta_loss], stage="meta", iteration=iteration)
    return backward(meta_loss, net.params), float(meta_loss.detach())


def update_theta(
    model: SequenceClassifier,
    w_hat: ParamStore,
    meta: LabeledSequences,
    meta_indices: Sequence[int],
    net: WeightingNet,
    beta: float,
    iteration: Optional[int] = None
) -> float:
    """One SGD step on Theta against the meta batch; returns the meta loss."""
    grads, meta_loss = meta_gradient(model, w_hat, meta, meta_indices, net, iteration)
    sgd_step(net.params, grads, beta, stage="meta", iteration=iteration)
    return meta_loss


def update_w(
    model: SequenceClassifier,
    train: LabeledSequences,
    indices: Sequence[int],
    net: WeightingNet,
    alpha: float,
    iteration: Optional[int] = None
) -> Tuple[float, np.ndarray]:
    """
    Committed weighted SGD step with weights from the current (fresh) Theta.

    Returns:
        Tuple[float, np.ndarray]: Mean unweighted batch loss and the weights used
    """
    per_sample = model.per_sample_loss(train, indices)
    with torch.no_grad():
        weights = net.forward(net.inputs(per_sample))
    loss = weighted_mean(per_sample, weights)
    check_finite([loss], stage="train", iteration=iteration)
    sgd_step(model.params, backward(loss, model.params), alpha, stage="train", iteration=iteration)
    return float(per_sample.detach().mean()), weights.numpy().copy()


@dataclass
class MetaSchedule:
    """Split of T epochs over N_c clusters; the first T mod N_c clusters get one extra epoch."""

    total_epochs: int
    n_clusters: int

    def __post_init__(self):
        if self.n_clusters < 1:
            raise InvalidSplitError("a meta schedule needs at least one cluster")

    @property
    def epochs_per_cluster(self) -> List[int]:
        base, extra = divmod(self.total_epochs, self.n_clusters)
        return [base + (1 if p < extra else 0) for p in range(self.n_clusters)]

    def epochs(self) -> Iterator[Tuple[int, int]]:
        """(epoch, cluster) pairs, epochs numbered from 1."""
        epoch = 0
        for cluster, count in enumerate(self.epochs_per_cluster):
            for _ in range(count):
                epoch += 1
                yield epoch, cluster


@dataclass
class MetaResult:
    net: WeightingNet
    history: List[Tuple[int, int, float, float, float, float]] = field(default_factory=list)
    epoch_history: List[Tuple[int, int, float]] = field(default_factory=list)

    def write_history(self, path: str) -> str:
        return write_csv(path, HISTORY_HEADER, self.history)


def meta_train(
    model: SequenceClassifier,
    train: LabeledSequences,
    meta: LabeledSequences,
    clusters: MetaClusterSet,
    recipe: TrainRecipe,
    net: Optional[WeightingNet] = None,
    check_snapshots: bool = False
) -> MetaResult:
    """
    Clustering-guided meta-learning of `model` (updated in place).

    Args:
        model: Classifier to train
        train: D_train
        meta: D_meta, indexed by the clusters
        clusters: Entropy-ordered meta clusters
        recipe: epochs (T), lr (alpha), meta_lr (beta), batch sizes, cadence and weighting-net settings
        net: Weighting network to continue from; a new one from the recipe otherwise
        check_snapshots: Verify every lookahead leaves the committed weights untouched

    Returns:
        MetaResult: Trained weighting network and per-iteration history
    """
    if len(train) == 0 or len(meta) == 0:
        raise InvalidSplitError("meta-learning needs non-empty training and meta sets")
    if net is None:
        net = WeightingNet(
            hidden_dim=recipe.weighting_hidden,
            init=recipe.weighting_init,
            seed=recipe.seed,
            standardize_inputs=recipe.standardize_meta_losses,
        )
    result = MetaResult(net=net)
    train_rng, meta_rng = batch_streams(recipe.seed)
    schedule = MetaSchedule(recipe.epochs, clusters.n_clusters)
    logger.info(f"Meta schedule: {schedule.epochs_per_cluster} epochs over clusters in entropy order")

    iteration = 0
    for epoch, cluster in schedule.epochs():
        members = clusters.clusters[cluster]
        order = train_rng.permutation(len(train))
        epoch_losses = []
        for batch_number, start in enumerate(range(0, len(order), recipe.batch_size)):
            iteration += 1
            indices = order[start:start + recipe.batch_size]
            meta_loss = float("nan")
            try:
                if recipe.meta_cadence == "batch" or batch_number == 0:
                    before = model.params.fingerprint() if check_snapshots else None
                    w_hat, _ = lookahead_update(model, train, indices, net, recipe.lr, iteration)
                    if check_snapshots and model.params.fingerprint() != before:
                        raise RuntimeError(f"lookahead modified the committed weights at iteration {iteration}")
                    size = min(recipe.meta_batch_size, len(members))
                    meta_indices = meta_rng.choice(members, size=size, replace=False)
                    meta_loss = update_theta(model, w_hat, meta, meta_indices, net, recipe.meta_lr, iteration)
                train_loss, weights = update_w(model, train, indices, net, recipe.lr, iteration)
            except TrainingDivergedError as e:
                raise TrainingDivergedError("meta-learning diverged", stage=e.stage, epoch=epoch, iteration=iteration)
            epoch_losses.append(train_loss)
            result.history.append((
                iteration, cluster + 1, train_loss, meta_loss, float(weights.mean()), float(weights.std())
            ))
        mean_loss = float(np.mean(epoch_losses))
        result.epoch_history.append((epoch, cluster + 1, mean_loss))
        logger.info(f"Epoch {epoch} (cluster {cluster + 1}/{clusters.n_clusters}): train loss {mean_loss:.6f}")
    return result
