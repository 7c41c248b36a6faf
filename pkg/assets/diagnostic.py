#!/usr/bin/env python3
"""
ClickCFA Diagnostic Tool

Checks the environment ClickCFA runs in and verifies the numeric core:
analytic gradients of every differentiable building block and the
second-order meta-gradient against central finite differences.
"""

import os
import sys
import logging
import platform
import importlib
from typing import Dict, List, Tuple

import numpy as np
import psutil
import torch

from assets.cfa_model import CfaPredictor, LabeledSequences
from assets.baselines import CnnPredictor
from assets.clickstream import ROW_DIM
from assets.meta_learn import WeightingNet, lookahead_update
from assets.neural import (
    DTYPE,
    GruCell,
    LinearHead,
    ParamStore,
    bce_loss,
    finite_difference_check,
    make_generator,
    mse_loss,
    pad_batch,
)
from assets.utilities import get_output_root, status_mark

logger = logging.getLogger('clickcfa-diagnostic')

FIRST_ORDER_TOLERANCE = 1e-6
SECOND_ORDER_TOLERANCE = 1e-4
MIN_MEMORY_GB = 2.0
REQUIRED_PACKAGES = ("numpy", "torch", "sklearn", "scipy", "tabulate", "colorama", "psutil")


def _random_sequences(rng: np.random.Generator, count: int, dim: int = ROW_DIM, max_len: int = 6) -> List[np.ndarray]:
    return [rng.uniform(-1.0, 1.0, size=(int(rng.integers(1, max_len + 1)), dim)) for _ in range(count)]


def _random_labels(rng: np.random.Generator, count: int) -> np.ndarray:
    labels = rng.integers(0, 2, size=count)
    labels[0], labels[-1] = 0, 1
    return labels


def gradient_checks(n_coords: int = 100, seed: int = 0, hidden_dim: int = 6) -> List[Tuple[str, float, int, float]]:
    """
    Finite-difference checks of every differentiable building block.

    Returns:
        List[Tuple[str, float, int, float]]: (check, worst relative error, coordinates, tolerance)
    """
    rng = np.random.default_rng(seed)
    results = []

    # GRU + softmax head + BCE
    sequences = _random_sequences(rng, 5)
    x, mask = pad_batch(sequences, ROW_DIM)
    targets = torch.from_numpy(np.eye(2)[rng.integers(0, 2, size=len(sequences))])
    predictor = CfaPredictor(hidden_dim=hidden_dim, seed=seed)
    error, count = finite_difference_check(
        lambda store: bce_loss(predictor.forward(x, mask, store), targets), predictor.params, n_coords=n_coords, seed=seed
    )
    results.append(("GRU + softmax head + BCE", error, count, FIRST_ORDER_TOLERANCE))

    # GRU + ReLU head + MSE (pre-training path)
    gru = GruCell(ROW_DIM, hidden_dim)
    head = LinearHead(hidden_dim, ROW_DIM, activation="relu", prefix="pre_head")
    store = ParamStore()
    generator = make_generator(seed)
    gru.init_params(store, generator)
    head.init_params(store, generator)
    with torch.no_grad():
        store["pre_head.b"].fill_(3.0)
    rows = torch.from_numpy(rng.uniform(0.0, 1.0, size=(len(sequences), ROW_DIM)))
    error, count = finite_difference_check(
        lambda s: mse_loss(head.forward(s, gru.forward(s, x, mask)[1]), rows), store, n_coords=n_coords, seed=seed
    )
    results.append(("GRU + ReLU head + MSE", error, count, FIRST_ORDER_TOLERANCE))

    # 1-D convolution baseline
    cnn = CnnPredictor(seed=seed, channels=4)
    error, count = finite_difference_check(
        lambda s: bce_loss(cnn.forward(x, mask, s), targets), cnn.params, n_coords=n_coords, seed=seed
    )
    results.append(("1-D convolution + max-pool", error, count, FIRST_ORDER_TOLERANCE))

    # weighting network output
    net = WeightingNet(hidden_dim=10, seed=seed)
    losses = torch.from_numpy(rng.uniform(0.0, 2.0, size=8))
    error, count = finite_difference_check(
        lambda s: net.forward(losses, s).sum(), net.params, n_coords=n_coords, seed=seed
    )
    results.append(("Weighting network", error, count, FIRST_ORDER_TOLERANCE))

    error, count = meta_gradient_check(n_coords=min(n_coords, 20), seed=seed)
    results.append(("Second-order meta-gradient", error, count, SECOND_ORDER_TOLERANCE))
    return results


def meta_gradient_check(n_coords: int = 20, seed: int = 0, hidden_dim: int = 3, alpha: float = 0.5) -> Tuple[float, int]:
    """Meta loss at the lookahead weights, differentiated in Theta, against finite differences."""
    rng = np.random.default_rng(seed)
    train_labels = _random_labels(rng, 6)
    meta_labels = _random_labels(rng, 4)
    train = LabeledSequences(rows=_random_sequences(rng, 6), labels=train_labels, sessions=[None] * 6)
    meta = LabeledSequences(rows=_random_sequences(rng, 4), labels=meta_labels, sessions=[None] * 4)
    model = CfaPredictor(hidden_dim=hidden_dim, seed=seed)
    net = WeightingNet(hidden_dim=5, seed=seed)
    train_idx = list(range(len(train)))
    meta_idx = list(range(len(meta)))

    def meta_loss(theta: ParamStore) -> torch.Tensor:
        original = net.params
        net.params = theta
        try:
            w_hat, _ = lookahead_update(model, train, train_idx, net, alpha)
            per_sample = model.per_sample_loss(meta, meta_idx, params=w_hat)
            return per_sample.sum() / len(meta_idx)
        finally:
            net.params = original

    return finite_difference_check(meta_loss, net.params, n_coords=n_coords, seed=seed)


class DiagnosticTool:
    def __init__(self, output_root: str = None, n_coords: int = 100):
        self.output_root = get_output_root(output_root)
        self.n_coords = n_coords
        self.results: Dict[str, List[dict]] = {
            'environment': [],
            'resources': [],
            'numerics': []
        }

    def run_all_checks(self) -> bool:
        """Run all diagnostic checks and return overall status."""
        self._check_python_version()
        self._check_packages()
        self._check_float64()
        self._check_resources()
        self._check_output_root()
        self._check_gradients()
        return all(check['status'] for category in self.results.values() for check in category)

    def _add_result(self, category: str, name: str, status: bool, message: str) -> None:
        """Add a check result."""
        self.results[category].append({
            'name': name,
            'status': status,
            'message': message
        })

    def _check_python_version(self) -> None:
        current_version = tuple(map(int, platform.python_version_tuple()[:2]))
        min_version = (3, 8)
        self._add_result(
            'environment', 'Python Version', current_version >= min_version,
            f"Python {platform.python_version()} detected. Minimum required: 3.8"
        )

    def _check_packages(self) -> None:
        for name in REQUIRED_PACKAGES:
            try:
                module = importlib.import_module(name)
                version = getattr(module, "__version__", "unknown")
                self._add_result('environment', f'Package: {name}', True, f"Found {name} {version}")
            except ImportError as e:
                self._add_result('environment', f'Package: {name}', False, f"Not importable: {str(e)}")

    def _check_float64(self) -> None:
        value = torch.tensor([1.0], dtype=DTYPE) + torch.tensor([1e-15], dtype=DTYPE)
        ok = bool(value[0] != 1.0)
        self._add_result('environment', 'Float64 Tensors', ok, "64-bit arithmetic resolves 1e-15" if ok else "64-bit arithmetic unavailable")

    def _check_resources(self) -> None:
        cores = psutil.cpu_count(logical=False) or psutil.cpu_count()
        self._add_result('resources', 'CPU', bool(cores), f"{cores} cores, load {psutil.cpu_percent(interval=0.1):.0f}%")
        memory = psutil.virtual_memory()
        available = memory.available / 1024 ** 3
        self._add_result(
            'resources', 'Memory', available >= MIN_MEMORY_GB,
            f"{available:.1f} GB available of {memory.total / 1024 ** 3:.1f} GB (minimum {MIN_MEMORY_GB} GB)"
        )

    def _check_output_root(self) -> None:
        path = os.path.abspath(self.output_root)
        parent = path if os.path.exists(path) else os.path.dirname(path)
        writable = os.path.isdir(parent) and os.access(parent, os.W_OK)
        if writable:
            free = psutil.disk_usage(parent).free / 1024 ** 3
            message = f"Writable: {path} ({free:.1f} GB free)"
        else:
            message = f"Not writable: {path}"
        self._add_result('resources', 'Output Root', writable, message)

    def _check_gradients(self) -> None:
        try:
            for name, error, count, tolerance in gradient_checks(self.n_coords):
                self._add_result(
                    'numerics', name, error < tolerance,
                    f"max relative error {error:.2e} over {count} coordinates (tolerance {tolerance:.0e})"
                )
        except Exception as e:
            logger.exception("Gradient checks failed to run")
            self._add_result('numerics', 'Gradient Checks', False, f"Failed to run: {str(e)}")

    def display_results(self) -> None:
        """Display diagnostic results in a formatted way."""
        print("\nClickCFA Diagnostic Results")
        print("=" * 50)

        for category, checks in self.results.items():
            print(f"\n{category.upper()}")
            print("-" * 50)

            for check in checks:
                print(f"{status_mark(check['status'])} {check['name']}: {check['message']}")


def main(output_root: str = None) -> int:
    """Main entry point for diagnostic tool."""
    print("Running ClickCFA diagnostics...\n")

    tool = DiagnosticTool(output_root)
    all_passed = tool.run_all_checks()
    tool.display_results()

    print("\nDiagnostic Summary")
    print("=" * 50)
    if all_passed:
        print(f"\n{status_mark(True)} All checks passed! ClickCFA should work correctly.")
        return 0
    print(f"\n{status_mark(False)} Some checks failed. Please review the issues above.")
    return 1


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    sys.exit(main())
