#!/usr/bin/env python3
"""
ClickCFA Utilities

This module contains utility functions and constants used across the ClickCFA system:
version banners, logging setup, run directories, fingerprints and CSV/table output.
"""

import os
import sys
import csv
import random
import hashlib
import logging
import platform
import datetime
from typing import Any, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import torch
from colorama import Fore, Style
from tabulate import tabulate

__version__ = "1.0.0"
__author__ = "ClickCFA developers"
__license__ = "MIT"

OUTPUT_ROOT_ENV = "CLICKCFA_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# ASCII art logo
LOGO = r"""
  ____ _ _      _       ____ _____ _
 / ___| (_) ___| | __  / ___|  ___/ \
| |   | | |/ __| |/ / | |   | |_ / _ \
| |___| | | (__|   <  | |___|  _/ ___ \
 \____|_|_|\___|_|\_\  \____|_|/_/   \_\
"""

# Small banner for less verbose output
SMALL_BANNER = """
╔═══════════════════════════════════════╗
║            ClickCFA v{:8}         ║
╚═══════════════════════════════════════╝
""".format(__version__)


def show_version():
    """Display version information."""
    return f"ClickCFA v{__version__}"


def show_full_version():
    """Display detailed version information."""
    return f"""
ClickCFA v{__version__}
Author: {__author__}
License: {__license__}
Python: {sys.version.split()[0]}
Torch: {torch.__version__}
NumPy: {np.__version__}
Platform: {platform.system()} {platform.release()}
"""


def show_logo(small=False):
    """
    Display the ClickCFA logo.

    Args:
        small: If True, shows the small banner instead of the full ASCII art
    """
    if small:
        return SMALL_BANNER
    return LOGO


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """
    Configure the root logger once for a CLI run.

    Args:
        level: Logging level name
        log_file: Optional file that receives a copy of every record
    """
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True
    )


def seed_everything(seed: int) -> None:
    """Seed every global RNG and pin torch to deterministic single-threaded kernels."""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


def fingerprint(mapping: Mapping[str, Any]) -> str:
    """SHA-256 over the sorted key=value lines of a flat mapping."""
    lines = [f"{key}={mapping[key]}" for key in sorted(mapping)]
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


def fold_hash(assignments: Sequence[int], session_ids: Sequence[str]) -> str:
    """Hash of a fold assignment, used to check that methods share splits."""
    payload = "\n".join(f"{sid}\t{fold}" for sid, fold in sorted(zip(session_ids, assignments)))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def get_output_root(explicit: Optional[str] = None) -> str:
    """Resolve the run-directory root: explicit flag, environment, then ./runs."""
    if explicit:
        return explicit
    return os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT)


def make_run_dir(root: str, run_fingerprint: str, now: Optional[datetime.datetime] = None) -> str:
    """
    Create a run directory named by timestamp and fingerprint.

    Args:
        root: Directory that holds all runs
        run_fingerprint: Hex fingerprint of the resolved configuration
        now: Timestamp override

    Returns:
        str: Path of the created directory
    """
    now = now or datetime.datetime.now()
    name = f"{now.strftime('%Y%m%d-%H%M%S')}-{run_fingerprint[:10]}"
    path = os.path.join(root, name)
    suffix = 1
    while os.path.exists(path):
        path = os.path.join(root, f"{name}-{suffix}")
        suffix += 1
    os.makedirs(path)
    return path


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """Write rows to a CSV file with a header line."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(value) for value in row])
    return path


def read_csv(path: str) -> List[dict]:
    """Read a CSV file written by write_csv into a list of dicts."""
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def _format_cell(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def format_table(rows: Sequence[Sequence[Any]], headers: Sequence[str]) -> str:
    """Aligned text table."""
    return tabulate(rows, headers=headers, tablefmt="github", floatfmt=".4f")


def status_mark(ok: bool) -> str:
    """Coloured check or cross for console output."""
    if ok:
        return f"{Fore.GREEN}✓{Style.RESET_ALL}"
    return f"{Fore.RED}✗{Style.RESET_ALL}"
