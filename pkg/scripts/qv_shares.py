"""Average share of realized variance carried by each relevant factor."""
import argparse

import numpy as np

from splinebeta.simulator import SimulationSpec, simulate_panel


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=200)
    ap.add_argument("--method", choices=("covariance", "own"), default="covariance")
    args = ap.parse_args()
    spec = SimulationSpec(p=3)
    shares = np.array([truth.qv_shares(np.diff(panel.response), args.method)
                       for panel, truth in (simulate_panel(spec, r) for r in range(args.paths))])
    mean, se = 100 * shares.mean(axis=0), 100 * shares.std(axis=0, ddof=1) / np.sqrt(args.paths)
    for j, (m, s) in enumerate(zip(mean, se), 1):
        print(f"factor {j}: {m:5.2f}% (se {s:.2f})")


if __name__ == "__main__":
    main()
