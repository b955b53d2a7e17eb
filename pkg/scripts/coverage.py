"""Coverage of 95% intervals for the integrated betas on a jump-free,
constant-parameter design."""
import argparse

import numpy as np

from splinebeta.design import build_design
from splinebeta.preprocess import make_truncation
from splinebeta.simulator import degenerate_spec, simulate_panel
from splinebeta.spline_basis import make_uniform_basis
from splinebeta.spline_ols import fit_ols, sandwich_covariance


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=500)
    ap.add_argument("--kn", type=int, default=4)
    args = ap.parse_args()
    spec = degenerate_spec()
    hits = []
    for r in range(args.reps):
        panel, truth = simulate_panel(spec, r)
        system = build_design(panel, make_uniform_basis(3, args.kn, panel.horizon),
                              make_truncation(panel))
        fit = fit_ols(system)
        sandwich_covariance(system, fit)
        hits.append(np.abs(fit.integrated_beta - truth.integrated_beta[:3])
                    <= 1.959964 * fit.standard_errors())
    print("coverage:", np.round(np.mean(hits, axis=0), 3))


if __name__ == "__main__":
    main()
