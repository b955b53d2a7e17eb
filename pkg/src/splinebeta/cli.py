"""Command-line interface: ``splinebeta <command> ...``.

Outputs are JSON documents validated against the schemas shipped in
``splinebeta/schemas``; every document embeds the configuration that
produced it. Failures print a JSON error object on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import bench
from .bench import EstimatorConfig, TruncationConfig
from .csvio import export_csv, ingest_csv
from .design import build_design
from .preprocess import make_truncation
from .simulator import SimulationSpec, simulate_panel
from .spline_basis import basis_matrix, make_uniform_basis
from .spline_ols import fit_ols, sandwich_covariance
from .tlp import dc_solve, kkt_check
from .tuning import GridCell, cross_validate, default_grid, penalty_config

__all__ = ["main", "ingest_csv", "export_csv"]

TABLE1_PANELS = {"a": 3, "b": 10, "c": 50, "d": 100, "e": 500}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    """Validated command parameters; serialized into every output."""

    command: str
    values: dict = field(default_factory=dict)

    def snapshot(self) -> dict:
        return {"command": self.command, **self.values}


def _schema(name: str) -> dict:
    text = resources.files("splinebeta").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_document(name: str, doc: dict, path) -> dict:
    doc = _clean({"schema": f"splinebeta/{name}/v1", **doc})
    jsonschema.validate(doc, _schema(name))
    text = json.dumps(doc, indent=2, sort_keys=False)
    if path in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        Path(path).write_text(text + "\n")
    return doc


def _positive(kind):
    def check(s):
        v = kind(s)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {s}")
        return v
    return check


def _exponent(s):
    v = float(s)
    if not 0 < v < 0.5:
        raise argparse.ArgumentTypeError(f"--pi must lie in (0, 0.5), got {s}")
    return v


def _basis_count(s):
    v = int(s)
    if v < 4:
        raise argparse.ArgumentTypeError(f"cubic splines need --kn >= 4, got {s}")
    return v


def _nonneg(s):
    v = float(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {s}")
    return v


def _list(kind):
    def parse(s):
        try:
            return [kind(x) for x in s.split(",") if x.strip()]
        except (ValueError, argparse.ArgumentTypeError) as err:
            raise argparse.ArgumentTypeError(str(err)) from None
    return parse


def _truncation_args(p, simulated=False):
    p.add_argument("--pi", type=_exponent, default=0.47, help="truncation exponent ϖ")
    # no safe default exists for real data, so panel commands must state it
    p.add_argument("--mult", type=_positive(float), default=3.0 if simulated else None,
                   required=not simulated, help="truncation multiplier a")
    p.add_argument("--mode", choices=("norm", "componentwise"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="splinebeta", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a panel and its ground truth")
    s.add_argument("--scenario", help="JSON scenario file (SimulationSpec fields)")
    s.add_argument("--p", type=_positive(int), help="override the covariate count")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--replication", type=int, default=0)
    s.add_argument("--out", required=True, help="panel CSV")
    s.add_argument("--truth", help="truth JSON (default: <out>.truth.json)")

    f = sub.add_parser("fit", help="unpenalized spline fit with sandwich covariance")
    f.add_argument("--panel", required=True)
    f.add_argument("--kn", type=_basis_count, default=8)
    _truncation_args(f)
    f.add_argument("--out", default="-")
    f.add_argument("--path-csv", help="write β̂ at every grid point")

    sl = sub.add_parser("select", help="TLP-penalized selection")
    sl.add_argument("--panel", required=True)
    sl.add_argument("--kn", type=_basis_count, default=4)
    sl.add_argument("--level", type=_nonneg, required=True, help="effective level λ/τ")
    sl.add_argument("--alpha-tau", type=_positive(float), default=0.01)
    _truncation_args(sl)
    sl.add_argument("--out", default="-")

    c = sub.add_parser("cv", help="cross-validate (K_n, λ/τ)")
    c.add_argument("--panel", required=True)
    c.add_argument("--unpenalized", action="store_true")
    c.add_argument("--kn", type=_list(_basis_count), default=[4, 6, 8, 12, 16])
    c.add_argument("--levels", type=_list(_nonneg), default=None)
    c.add_argument("--alpha-tau", type=_positive(float), default=0.01)
    c.add_argument("--folds", type=int, default=5)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--threads", type=_positive(int), default=os.cpu_count() or 1)
    _truncation_args(c)
    c.add_argument("--out", default="-")

    b = sub.add_parser("benchmark", help="Monte Carlo tables")
    b.add_argument("--table", choices=("1", "2", "grid"), required=True)
    group = b.add_mutually_exclusive_group()
    for key in TABLE1_PANELS:
        group.add_argument(f"--panel-{key}", dest="panel_key", action="store_const", const=key)
    group.add_argument("--p", type=_positive(int))
    b.add_argument("--scenario")
    b.add_argument("--reps", type=int, default=200)
    b.add_argument("--warmup", type=int, default=20)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--threads", type=_positive(int), default=os.cpu_count() or 1)
    b.add_argument("--alpha-tau", type=_list(_positive(float)), default=[0.05, 0.01])
    b.add_argument("--kn", type=_list(_basis_count), default=[4, 6, 8, 12, 16])
    b.add_argument("--levels", type=_list(_nonneg), default=None)
    b.add_argument("--windows", type=_list(_positive(int)), default=[78, 91, 117])
    _truncation_args(b, simulated=True)
    b.add_argument("--out-dir", default=".")

    r = sub.add_parser("riskdecomp", help="variance explained by the spline fit")
    r.add_argument("--panel", required=True)
    r.add_argument("--kn", type=_basis_count, default=8)
    r.add_argument("--window", default="")
    _truncation_args(r)
    r.add_argument("--out", default="-")
    return parser


def _truncation(args, panel):
    return make_truncation(panel, args.pi, args.mult, args.mode)


def _cmd_simulate(args, cfg):
    spec = SimulationSpec.load(args.scenario) if args.scenario else SimulationSpec()
    if args.p is not None:
        spec = SimulationSpec.from_json({**spec.to_json(), "p": args.p})
    if args.seed is not None:
        spec = SimulationSpec.from_json({**spec.to_json(), "seed": args.seed})
    panel, truth = simulate_panel(spec, args.replication)
    export_csv(panel, args.out)
    truth_path = args.truth or f"{args.out}.truth.json"
    cfg.values["scenario"] = spec.to_json()
    write_document("truth", {**truth.to_json(), "config": cfg.snapshot()}, truth_path)


def _cmd_fit(args, cfg):
    panel = ingest_csv(args.panel)
    spec = _truncation(args, panel)
    basis = make_uniform_basis(3, args.kn, panel.horizon)
    system = build_design(panel, basis, spec)
    fit = fit_ols(system)
    cov = sandwich_covariance(system, fit)
    if args.path_csv:
        grid = np.minimum(np.arange(panel.n + 1) * panel.delta, panel.horizon)
        beta = basis_matrix(basis, grid) @ fit.coefficient_blocks.T
        rows = np.column_stack([panel.times, beta])
        header = ",".join(["time", *panel.labels])
        np.savetxt(args.path_csv, rows, delimiter=",", header=header, comments="", fmt="%.17g")
    write_document("fit", {
        "labels": list(panel.labels),
        "basis_count": args.kn,
        "horizon": panel.horizon,
        "gamma_hat": fit.gamma_hat,
        "integrated_beta": fit.integrated_beta,
        "average_beta": fit.integrated_beta / panel.horizon,
        "covariance": cov,
        "standard_errors": fit.standard_errors(),
        "condition_number": fit.condition_diagnostic,
        "config": cfg.snapshot(),
    }, args.out)


def _cmd_select(args, cfg):
    panel = ingest_csv(args.panel)
    spec = _truncation(args, panel)
    system = build_design(panel, make_uniform_basis(3, args.kn, panel.horizon), spec)
    config = penalty_config(panel, args.alpha_tau, args.kn, args.level)
    res = dc_solve(system, config)
    kkt = kkt_check(system, res.gamma_star, config)
    write_document("selection", {
        "labels": list(panel.labels),
        "gamma_star": res.gamma_star,
        "active_set": res.active_set,
        "active_labels": [panel.labels[j] for j in res.active_set],
        "weighted_block_norms": res.weighted_block_norms,
        "objective_trace": res.objective_trace,
        "inner_iterations": res.inner_iterations,
        "converged": res.converged,
        "tau": config.tau,
        "effective_level": config.effective_level,
        "level_scale": config.level_scale,
        "kkt": {"active_ok": kkt.active_ok, "inactive_ok": kkt.inactive_ok,
                **kkt.worst_residuals},
        "config": cfg.snapshot(),
    }, args.out)


def _cmd_cv(args, cfg):
    panel = ingest_csv(args.panel)
    spec = _truncation(args, panel)
    penalized = not args.unpenalized
    if not penalized:
        grid = [GridCell(K) for K in args.kn]
    elif args.levels:
        grid = [GridCell(K, lv) for K in args.kn for lv in args.levels]
    else:
        grid = default_grid(panel, spec, args.kn)
    rep = cross_validate(panel, spec, args.alpha_tau, grid, args.folds, args.seed,
                         penalized, threads=args.threads)
    write_document("cv", {**rep.to_json(), "config": cfg.snapshot()}, args.out)


def _table1_estimators(args):
    ests = [EstimatorConfig("spline", "spline_ols", basis_count=None, rank_deficient="minnorm")]
    for a in args.alpha_tau:
        ests.append(EstimatorConfig(f"spline_tlp_{a:g}", "spline_tlp", basis_count=None,
                                    alpha_tau=a))
    ests += [EstimatorConfig(f"akx_{k}", "akx", window=k) for k in args.windows]
    return ests


def _sim_grid(args):
    if args.levels:
        return [GridCell(K, lv) for K in args.kn for lv in args.levels]
    return [GridCell(K, lv) for K in args.kn for lv in bench.DEFAULT_SIM_LEVELS]


def _cmd_benchmark(args, cfg):
    spec = SimulationSpec.load(args.scenario) if args.scenario else SimulationSpec()
    p = TABLE1_PANELS[args.panel_key] if args.panel_key else (args.p or spec.p)
    spec = SimulationSpec.from_json({**spec.to_json(), "p": p, "seed": args.seed})
    trunc = TruncationConfig(args.pi, args.mult, args.mode)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.values["scenario"] = spec.to_json()
    if args.table == "grid":
        levels = args.levels or list(bench.DEFAULT_GRID_LEVELS)
        rows = bench.tdr_fdr_grid(spec, args.kn, levels, args.reps, args.seed,
                                  args.alpha_tau[0], args.threads, trunc)
        (out / f"grid_p{p}.csv").write_text(bench.grid_csv(rows))
        write_document("benchmark", {"grid": rows, "replications": args.reps, "seed": args.seed,
                                     "config": cfg.snapshot()}, out / f"grid_p{p}.json")
        return
    if args.table == "1":
        ests = _table1_estimators(args)
    else:
        ests = [EstimatorConfig(f"spline_tlp_{a:g}", "spline_tlp", basis_count=None, alpha_tau=a)
                for a in args.alpha_tau]
    report = bench.run_estimation_benchmark(spec, ests, args.reps, args.seed, args.threads,
                                            trunc, _sim_grid(args), args.warmup)
    stem = f"table{args.table}_p{p}"
    (out / f"{stem}.csv").write_text(
        report.estimation_csv() if args.table == "1" else report.selection_csv())
    write_document("benchmark", {**report.to_json(), "config": {**cfg.snapshot(),
                                                                 **report.config}},
                   out / f"{stem}.json")


def _cmd_riskdecomp(args, cfg):
    panel = ingest_csv(args.panel)
    spec = _truncation(args, panel)
    system = build_design(panel, make_uniform_basis(3, args.kn, panel.horizon), spec)
    fit = fit_ols(system)
    rd = bench.risk_decompose(panel, fit, spec, args.window)
    write_document("risk", {**asdict(rd), "config": cfg.snapshot()}, args.out)


COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "select": _cmd_select,
    "cv": _cmd_cv,
    "benchmark": _cmd_benchmark,
    "riskdecomp": _cmd_riskdecomp,
}


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        return _fail("usage", str(err), 2)
    except SystemExit as err:     # --help
        return int(err.code or 0)
    values = {k: v for k, v in vars(args).items() if k != "command"}
    cfg = RunConfig(args.command, _clean(values))
    try:
        COMMANDS[args.command](args, cfg)
    except jsonschema.ValidationError as err:
        return _fail("schema", err.message, 3)
    except (OSError, ValueError, ArithmeticError, RuntimeError) as err:
        return _fail(type(err).__name__, str(err), 1)
    return 0


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
