#!/usr/bin/env python3
"""
ClickCFA Gradient Check Tool

Compares the analytic gradients of the GRU classifier, the pre-training head,
the CNN baseline, the weighting network and the second-order meta-gradient
with central finite differences on random coordinates.
"""

import os
import sys
import argparse
import logging

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from assets.diagnostic import gradient_checks  # noqa: E402
from assets.utilities import format_table, status_mark  # noqa: E402

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[logging.StreamHandler()]
)
logger = logging.getLogger('clickcfa-gradcheck')


def main():
    parser = argparse.ArgumentParser(description="ClickCFA Gradient Check Tool")
    parser.add_argument('--coords', type=int, default=500, help='Coordinates sampled per check')
    parser.add_argument('--seed', type=int, default=0, help='Seed of the random inputs and coordinates')
    parser.add_argument('--hidden-dim', type=int, default=8, help='GRU hidden size of the checked models')
    args = parser.parse_args()

    logger.info(f"Checking gradients on up to {args.coords} coordinates per block")
    results = gradient_checks(n_coords=args.coords, seed=args.seed, hidden_dim=args.hidden_dim)
    rows = [
        [status_mark(error < tolerance), name, f"{error:.2e}", count, f"{tolerance:.0e}"]
        for name, error, count, tolerance in results
    ]
    print(format_table(rows, ["", "check", "max rel. error", "coordinates", "tolerance"]))
    return 0 if all(error < tolerance for _, error, _, tolerance in results) else 1


if __name__ == "__main__":
    sys.exit(main())
