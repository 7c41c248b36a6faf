#!/usr/bin/env python3
"""
ClickCFA - Neural Core

Functional networks over named parameter stores. Parameters live in a
ParamStore instead of inside modules, so a network can be evaluated at a
lookahead store whose tensors are themselves functions of other parameters
(differentiating through one SGD step).

GRU gate equations (rows are batch elements, x @ W):

    z  = sigmoid(x W_z + h U_z + b_z)
    r  = sigmoid(x W_r + h U_r + b_r)
    h~ = tanh(x W_h + (r * h) U_h + b_h)
    h' = (1 - z) * h + z * h~
"""

import math
import json
import hashlib
import logging
from collections import OrderedDict
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from assets.errors import DataError, ShapeError, TrainingDivergedError

logger = logging.getLogger('clickcfa-neural')

DTYPE = torch.float64
PROB_CLAMP = 1e-12
CHECKPOINT_FORMAT = "clickcfa-params"
CHECKPOINT_VERSION = 1
FD_DENOMINATOR_FLOOR = 1e-3

ACTIVATIONS = ("relu", "softmax", "sigmoid", "none")


class ParamStore:
    """Named float64 tensors, each tagged trainable or frozen."""

    def __init__(self):
        self._tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict()
        self._trainable: Dict[str, bool] = {}

    def add(self, name: str, tensor: torch.Tensor, trainable: bool = True) -> torch.Tensor:
        if name in self._tensors:
            raise ValueError(f"Parameter {name} already exists")
        tensor = tensor.to(DTYPE)
        if trainable and tensor.is_leaf:
            tensor.requires_grad_(True)
        self._tensors[name] = tensor
        self._trainable[name] = trainable
        return tensor

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> List[str]:
        return list(self._tensors)

    def trainable_names(self) -> List[str]:
        return [name for name in self._tensors if self._trainable[name]]

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, name: str, trainable: bool) -> None:
        self._trainable[name] = trainable
        tensor = self._tensors[name]
        if tensor.is_leaf:
            tensor.requires_grad_(trainable)

    def items(self) -> Iterable[Tuple[str, torch.Tensor]]:
        return self._tensors.items()

    def replace(self, name: str, tensor: torch.Tensor) -> None:
        """Swap the tensor behind an existing name; the shape may not change."""
        if tuple(tensor.shape) != tuple(self._tensors[name].shape):
            raise ShapeError(f"{name}: shape {tuple(tensor.shape)} != {tuple(self._tensors[name].shape)}")
        self._tensors[name] = tensor

    def clone(self) -> "ParamStore":
        """Detached deep copy with the same trainable tags."""
        copy = ParamStore()
        for name, tensor in self._tensors.items():
            copy.add(name, tensor.detach().clone(), self._trainable[name])
        return copy

    def copy_from(self, other: "ParamStore", names: Optional[Sequence[str]] = None) -> None:
        """Overwrite values of `names` (default: shared names) with those of `other`."""
        names = [n for n in self._tensors if n in other] if names is None else list(names)
        with torch.no_grad():
            for name in names:
                source = other[name]
                if tuple(source.shape) != tuple(self._tensors[name].shape):
                    raise ShapeError(f"{name}: shape {tuple(source.shape)} != {tuple(self._tensors[name].shape)}")
                self._tensors[name].copy_(source)

    def subset(self, prefix: str) -> "ParamStore":
        """Detached copy of the parameters whose names start with `prefix`."""
        part = ParamStore()
        for name, tensor in self._tensors.items():
            if name.startswith(prefix):
                part.add(name, tensor.detach().clone(), self._trainable[name])
        return part

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for name, tensor in self._tensors.items():
            digest.update(name.encode("utf-8"))
            digest.update(str(tuple(tensor.shape)).encode("utf-8"))
            digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        return digest.hexdigest()

    def save(self, path: str) -> str:
        """Write a bit-exact textual checkpoint (float.hex values)."""
        payload = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "params": [
                {
                    "name": name,
                    "shape": list(tensor.shape),
                    "trainable": self._trainable[name],
                    "values": [float(v).hex() for v in tensor.detach().reshape(-1).tolist()],
                }
                for name, tensor in self._tensors.items()
            ],
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=1)
        return path

    @classmethod
    def load(cls, path: str) -> "ParamStore":
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"{path} is not a ClickCFA checkpoint")
        store = cls()
        for entry in payload["params"]:
            values = [float.fromhex(v) for v in entry["values"]]
            shape = tuple(entry["shape"])
            if len(values) != int(np.prod(shape, dtype=np.int64)):
                raise ShapeError(f"{path}: {entry['name']} holds {len(values)} values for shape {shape}")
            tensor = torch.tensor(values, dtype=DTYPE).reshape(shape)
            store.add(entry["name"], tensor, bool(entry["trainable"]))
        return store


def make_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(int(seed))
    return generator


def uniform_tensor(shape: Tuple[int, ...], bound: float, generator: torch.Generator) -> torch.Tensor:
    return (torch.rand(shape, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * bound


class GruCell:
    """GRU recurrence whose parameters live in a ParamStore under `prefix`."""

    GATES = ("z", "r", "h")

    def __init__(self, input_dim: int = 5, hidden_dim: int = 128, prefix: str = "gru"):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.prefix = prefix

    def name(self, kind: str, gate: str) -> str:
        return f"{self.prefix}.{kind}_{gate}"

    def param_names(self) -> List[str]:
        return [self.name(kind, gate) for gate in self.GATES for kind in ("W", "U", "b")]

    def init_params(self, store: ParamStore, generator: torch.Generator) -> ParamStore:
        """Uniform(-1/sqrt(k), 1/sqrt(k)) weights, zero biases."""
        bound = 1.0 / math.sqrt(self.hidden_dim)
        for gate in self.GATES:
            store.add(self.name("W", gate), uniform_tensor((self.input_dim, self.hidden_dim), bound, generator))
            store.add(self.name("U", gate), uniform_tensor((self.hidden_dim, self.hidden_dim), bound, generator))
            store.add(self.name("b", gate), torch.zeros(self.hidden_dim, dtype=DTYPE))
        return store

    def step(self, store: ParamStore, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        p = lambda kind, gate: store[self.name(kind, gate)]
        z = torch.sigmoid(x @ p("W", "z") + h @ p("U", "z") + p("b", "z"))
        r = torch.sigmoid(x @ p("W", "r") + h @ p("U", "r") + p("b", "r"))
        candidate = torch.tanh(x @ p("W", "h") + (r * h) @ p("U", "h") + p("b", "h"))
        return (1.0 - z) * h + z * candidate

    def forward(
        self,
        store: ParamStore,
        x: torch.Tensor,
        mask: Optional[torch.Tensor] = None,
        initial_h: Optional[torch.Tensor] = None
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Run the recurrence over a padded batch.

        Args:
            store: Parameters
            x: (batch, time, input_dim) inputs
            mask: (batch, time) bool, False on padding; padded steps leave h unchanged
            initial_h: (batch, hidden_dim) start state, zeros by default

        Returns:
            Tuple[torch.Tensor, torch.Tensor]: all states (batch, time, hidden) and final states (batch, hidden)
        """
        if x.dim() != 3 or x.shape[-1] != self.input_dim:
            raise ShapeError(f"expected (batch, time, {self.input_dim}) input, got {tuple(x.shape)}")
        batch, steps, _ = x.shape
        if steps == 0:
            raise ShapeError("cannot run a GRU over an empty sequence")
        if mask is not None and not bool(mask.any(dim=1).all()):
            raise ShapeError("every sequence needs at least one step")
        h = initial_h if initial_h is not None else torch.zeros(batch, self.hidden_dim, dtype=DTYPE)
        states = []
        for t in range(steps):
            h_new = self.step(store, x[:, t, :], h)
            if mask is not None:
                h_new = torch.where(mask[:, t].unsqueeze(1), h_new, h)
            h = h_new
            states.append(h)
        return torch.stack(states, dim=1), h


class LinearHead:
    """Affine map with an optional output activation."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "none", prefix: str = "head"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"Invalid activation: {activation}. Must be one of {', '.join(ACTIVATIONS)}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.prefix = prefix

    def param_names(self) -> List[str]:
        return [f"{self.prefix}.W", f"{self.prefix}.b"]

    def init_params(self, store: ParamStore, generator: torch.Generator) -> ParamStore:
        bound = 1.0 / math.sqrt(self.in_dim)
        store.add(f"{self.prefix}.W", uniform_tensor((self.in_dim, self.out_dim), bound, generator))
        store.add(f"{self.prefix}.b", torch.zeros(self.out_dim, dtype=DTYPE))
        return store

    def forward(self, store: ParamStore, h: torch.Tensor) -> torch.Tensor:
        out = h @ store[f"{self.prefix}.W"] + store[f"{self.prefix}.b"]
        if self.activation == "relu":
            return torch.relu(out)
        if self.activation == "softmax":
            return torch.softmax(out, dim=-1)
        if self.activation == "sigmoid":
            return torch.sigmoid(out)
        return out


def _check_shapes(pred: torch.Tensor, target: torch.Tensor) -> None:
    if tuple(pred.shape) != tuple(target.shape):
        raise ShapeError(f"prediction shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")


def mse_loss(pred: torch.Tensor, target: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """Mean squared error over the last dimension; 'none' keeps one value per row."""
    _check_shapes(pred, target)
    per_row = ((pred - target) ** 2).mean(dim=-1)
    return _reduce(per_row, reduction)


def bce_loss(pred: torch.Tensor, target: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """
    Binary cross entropy between probability vectors and one-hot targets.

    -[t . log p + (1 - t) . log(1 - p)] summed over the last dimension, with
    probabilities clamped at 1e-12 before each log.
    """
    _check_shapes(pred, target)
    log_p = torch.log(torch.clamp(pred, min=PROB_CLAMP))
    log_q = torch.log(torch.clamp(1.0 - pred, min=PROB_CLAMP))
    per_row = -(target * log_p + (1.0 - target) * log_q).sum(dim=-1)
    return _reduce(per_row, reduction)


def _reduce(values: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "mean":
        return values.mean()
    if reduction == "sum":
        return values.sum()
    if reduction == "none":
        return values
    raise ValueError(f"Invalid reduction: {reduction}")


def weighted_mean(per_sample: torch.Tensor, weights: Optional[torch.Tensor] = None) -> torch.Tensor:
    """(1/|B|) sum_n w_n L_n; without weights the same sum-then-divide order is used."""
    if weights is None:
        return per_sample.sum() / per_sample.shape[0]
    _check_shapes(per_sample, weights)
    return (weights * per_sample).sum() / per_sample.shape[0]


def backward(
    loss: torch.Tensor,
    store: ParamStore,
    names: Optional[Sequence[str]] = None,
    create_graph: bool = False
) -> Dict[str, torch.Tensor]:
    """
    Reverse-mode gradients of a scalar loss for the trainable parameters.

    Disconnected parameters get zero gradients. With create_graph=True the
    gradients stay differentiable (second-order use).
    """
    if loss.dim() != 0:
        raise ShapeError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    names = store.trainable_names() if names is None else list(names)
    tensors = [store[name] for name in names]
    if not loss.requires_grad:
        return {name: torch.zeros_like(t) for name, t in zip(names, tensors)}
    grads = torch.autograd.grad(loss, tensors, create_graph=create_graph, allow_unused=True)
    return {
        name: (torch.zeros_like(t) if g is None else g)
        for name, t, g in zip(names, tensors, grads)
    }


def check_finite(tensors: Iterable[torch.Tensor], stage: str, epoch: Optional[int] = None, iteration: Optional[int] = None) -> None:
    for tensor in tensors:
        if not bool(torch.isfinite(tensor).all()):
            raise TrainingDivergedError("non-finite value", stage=stage, epoch=epoch, iteration=iteration)


def sgd_step(
    store: ParamStore,
    grads: Dict[str, torch.Tensor],
    lr: float,
    lookahead: bool = False,
    stage: str = "train",
    epoch: Optional[int] = None,
    iteration: Optional[int] = None
) -> ParamStore:
    """
    p <- p - lr * grad for every parameter with a gradient.

    Args:
        store: Parameters to update
        grads: Gradients by parameter name
        lr: Step size
        lookahead: Return a NEW store whose tensors keep the autograd graph
                   (the source store is untouched); otherwise update in place

    Returns:
        ParamStore: The new store (lookahead) or `store` itself (commit)
    """
    if lr < 0:
        raise ValueError(f"learning rate must not be negative, got {lr}")
    check_finite(grads.values(), stage, epoch, iteration)

    if lookahead:
        updated = ParamStore()
        for name, tensor in store.items():
            if name in grads:
                updated.add(name, tensor - lr * grads[name], store.is_trainable(name))
            else:
                updated.add(name, tensor, store.is_trainable(name))
        return updated

    with torch.no_grad():
        for name, grad in grads.items():
            store[name].sub_(lr * grad)
    check_finite((store[name] for name in grads), stage, epoch, iteration)
    return store


def pad_batch(sequences: Sequence[np.ndarray], input_dim: Optional[int] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Zero-pad variable-length row sequences to the batch maximum.

    Returns:
        Tuple[torch.Tensor, torch.Tensor]: (batch, time, dim) inputs and (batch, time) bool mask
    """
    if not sequences:
        raise ShapeError("cannot pad an empty batch")
    dim = input_dim if input_dim is not None else int(np.asarray(sequences[0]).shape[1])
    longest = max(len(seq) for seq in sequences)
    if longest == 0:
        raise ShapeError("every sequence in the batch is empty")
    x = np.zeros((len(sequences), longest, dim), dtype=np.float64)
    mask = np.zeros((len(sequences), longest), dtype=bool)
    for i, seq in enumerate(sequences):
        seq = np.asarray(seq, dtype=np.float64)
        if len(seq) and seq.shape[1] != dim:
            raise ShapeError(f"row width {seq.shape[1]} != {dim}")
        x[i, :len(seq)] = seq
        mask[i, :len(seq)] = True
    return torch.from_numpy(x), torch.from_numpy(mask)


def finite_difference_check(
    loss_fn: Callable[[ParamStore], torch.Tensor],
    store: ParamStore,
    names: Optional[Sequence[str]] = None,
    n_coords: int = 100,
    h: float = 1e-5,
    seed: int = 0
) -> Tuple[float, int]:
    """
    Compare autograd gradients of `loss_fn` with central finite differences.

    Coordinates are drawn at random across the chosen parameters. The relative
    error of a coordinate is |a - n| / max(|a|, |n|, 1e-3).

    Returns:
        Tuple[float, int]: Largest relative error and number of coordinates checked
    """
    names = store.trainable_names() if names is None else list(names)
    analytic = backward(loss_fn(store), store, names)
    coords = [(name, index) for name in names for index in range(store[name].numel())]
    rng = np.random.default_rng(seed)
    if len(coords) > n_coords:
        picked = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in sorted(picked)]

    worst = 0.0
    for name, index in coords:
        flat = store[name].detach().view(-1)
        original = float(flat[index])
        with torch.no_grad():
            flat[index] = original + h
        plus = float(loss_fn(store).detach())
        with torch.no_grad():
            flat[index] = original - h
        minus = float(loss_fn(store).detach())
        with torch.no_grad():
            flat[index] = original
        numeric = (plus - minus) / (2.0 * h)
        exact = float(analytic[name].reshape(-1)[index])
        error = abs(exact - numeric) / max(abs(exact), abs(numeric), FD_DENOMINATOR_FLOOR)
        worst = max(worst, error)
    return worst, len(coords)
