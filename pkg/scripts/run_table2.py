"""Selection frequencies of the TLP estimator at several covariate counts."""
import argparse
import json
from pathlib import Path

from splinebeta.bench import run_selection_benchmark
from splinebeta.simulator import SimulationSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p", type=int, nargs="+", default=[10, 50, 100])
    ap.add_argument("--alpha-tau", type=float, nargs="+", default=[0.05, 0.01])
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--warmup", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out-dir", type=Path, default=Path("results"))
    args = ap.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for p in args.p:
        rep = run_selection_benchmark(SimulationSpec(p=p), tuple(args.alpha_tau), args.reps,
                                      seed=args.seed, threads=args.threads, warmup=args.warmup)
        (args.out_dir / f"table2_p{p}.csv").write_text(rep.selection_csv())
        (args.out_dir / f"table2_p{p}.json").write_text(json.dumps(rep.to_json(), indent=1))
        print(f"p={p}\n{rep.selection_csv()}")


if __name__ == "__main__":
    main()
