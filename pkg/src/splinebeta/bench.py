"""Monte Carlo benchmarks: estimation error tables, selection frequencies,
TDR/FDR grids, and the regression risk decomposition."""
from __future__ import annotations

import csv
import dataclasses
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .design import DesignSystem, build_design
from .preprocess import PricePanel, TruncationSpec, increments, make_truncation
from .simulator import SimulationSpec, simulate_panel
from .spline_basis import basis_matrix, make_uniform_basis
from .spline_ols import FitResult, SingularDesignError, fit_local_ols_akx, fit_ols
from .tlp import ConvergenceError, WhitenedProblem, dc_solve
from .tuning import GridCell, cross_validate, penalty_config

SCALE = 100.0
DEFAULT_SIM_BASIS_COUNTS = (4, 6, 8, 12, 16)
DEFAULT_SIM_LEVELS = (0.01, 0.015, 0.02, 0.025, 0.035, 0.05, 0.07, 0.1, 0.14, 0.2)
# coarse 5x6 grid for TDR/FDR maps
DEFAULT_GRID_LEVELS = (0.01, 0.02, 0.035, 0.07, 0.14, 0.28)


@dataclass(frozen=True)
class EstimatorConfig:
    """One estimator column of the estimation table.

    ``kind`` is ``spline_ols``, ``spline_tlp`` or ``akx``. A basis count or
    level left as None is filled in by warm-up cross-validation.
    """

    name: str
    kind: str
    basis_count: int | None = 4
    alpha_tau: float = 0.01
    effective_level: float | None = None
    window: int = 78
    rank_deficient: str = "raise"

    def __post_init__(self):
        if self.kind not in ("spline_ols", "spline_tlp", "akx"):
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.kind == "akx" and self.window < 1:
            raise ValueError("AKX window must be positive")
        if self.basis_count is not None and self.basis_count < 4:
            raise ValueError("cubic splines need at least 4 basis functions")


@dataclass(frozen=True)
class TruncationConfig:
    exponent: float = 0.47
    multiplier: float = 3.0
    mode: str | None = None   # None picks norm for p <= 10, componentwise above

    def make(self, panel: PricePanel) -> TruncationSpec:
        return make_truncation(panel, self.exponent, self.multiplier, self.mode)


@dataclass
class ComponentStats:
    bias: list[float]
    stdev: list[float]
    rmse: list[float]
    failures: int
    replications: int
    failure_messages: list[str] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return self.failures > 0


@dataclass
class SelectionStats:
    relevant_rate: float
    irrelevant_rate: float
    correct_rate: float
    per_factor_rate: list[float]
    dc_monotone: bool
    kkt_failures: int = 0


@dataclass
class BenchmarkReport:
    estimation: dict[str, ComponentStats]
    selection: dict[str, SelectionStats]
    replications: int
    seed: int
    config: dict
    tuning: dict[str, dict]
    runtime_seconds: float = 0.0

    def numbers(self) -> dict:
        """Every reported statistic, without run metadata such as timing."""
        d = self.to_json()
        d.pop("runtime_seconds")
        return d

    def to_json(self) -> dict:
        return {
            "estimation": {k: dataclasses.asdict(v) for k, v in self.estimation.items()},
            "selection": {k: dataclasses.asdict(v) for k, v in self.selection.items()},
            "replications": self.replications,
            "seed": self.seed,
            "config": self.config,
            "tuning": self.tuning,
            "runtime_seconds": self.runtime_seconds,
        }

    def estimation_csv(self) -> str:
        """Bias/Stdev/RMSE per component (×100); failed estimators show dashes."""
        q = max((len(s.bias) for s in self.estimation.values()), default=0)
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["estimator"] + [f"{m}_{j + 1}" for j in range(q)
                                    for m in ("bias", "stdev", "rmse")])
        for name, s in self.estimation.items():
            if s.failed:
                w.writerow([name] + ["-"] * (3 * q))
            else:
                w.writerow([name] + [f"{v:.3f}" for j in range(q)
                                     for v in (s.bias[j], s.stdev[j], s.rmse[j])])
        return out.getvalue()

    def selection_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["estimator", "relevant", "irrelevant", "correct"])
        for name, s in self.selection.items():
            w.writerow([name, f"{s.relevant_rate:.3f}", f"{s.irrelevant_rate:.3f}",
                        f"{s.correct_rate:.3f}"])
        return out.getvalue()


def summarize_errors(errors: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bias, sample stdev (R−1 divisor) and RMSE of per-replication errors."""
    errors = np.asarray(errors, dtype=float)
    bias = errors.mean(axis=0)
    stdev = errors.std(axis=0, ddof=1)
    rmse = np.sqrt(np.mean(errors**2, axis=0))
    return bias, stdev, rmse


def _spline_average_beta(system: DesignSystem, gamma: np.ndarray) -> np.ndarray:
    """Integrated beta over the window divided by its length."""
    K = system.basis_count
    G = gamma.reshape(system.block_count, K)
    return (system.basis_rows.sum(axis=0) @ G.T) / system.n


@dataclass(frozen=True)
class _Job:
    spec: SimulationSpec
    replication: int
    estimators: tuple[EstimatorConfig, ...]
    truncation: TruncationConfig


def _run_replication(job: _Job) -> dict:
    panel, truth = simulate_panel(job.spec, job.replication)
    q = job.spec.q
    target = truth.average_beta[:q]
    spec = job.truncation.make(panel)
    out = {}
    systems: dict[int, tuple[DesignSystem, WhitenedProblem | None]] = {}

    def system_for(K):
        if K not in systems:
            systems[K] = (build_design(panel, make_uniform_basis(3, K, panel.horizon), spec), None)
        return systems[K][0]

    for est in job.estimators:
        rec = {"error": None, "failure": None, "selected": None, "trace_ok": None}
        try:
            if est.kind == "akx":
                fit = fit_local_ols_akx(panel, spec, est.window)
                avg = fit.integrated_beta / panel.horizon
            elif est.kind == "spline_ols":
                system = system_for(est.basis_count)
                fit = fit_ols(system, rank_deficient=est.rank_deficient)
                avg = _spline_average_beta(system, fit.gamma_hat)
            else:
                K = est.basis_count
                system = system_for(K)
                if systems[K][1] is None:
                    systems[K] = (system, WhitenedProblem(system))
                cfg = penalty_config(panel, est.alpha_tau, K, est.effective_level)
                res = dc_solve(system, cfg, systems[K][1])
                avg = _spline_average_beta(system, res.gamma_star)
                sel = np.zeros(job.spec.p, dtype=bool)
                sel[res.active_set] = True
                rec["selected"] = sel
                tr = res.objective_trace
                rec["trace_ok"] = all(b <= a + 1e-10 * max(1.0, abs(a))
                                      for a, b in zip(tr, tr[1:]))
            rec["error"] = SCALE * (avg[:q] - target)
        except (SingularDesignError, ConvergenceError, np.linalg.LinAlgError) as err:
            rec["failure"] = str(err)
        out[est.name] = rec
    return out


def _map(fn, jobs, threads: int):
    # fixed job order in, fixed result order out; BLAS pinned to one thread
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(threads, initializer=_pin_blas) as ex:
            return list(ex.map(fn, jobs, chunksize=1))
    with threadpool_limits(1):
        return [fn(j) for j in jobs]


def _pin_blas():
    threadpool_limits(1)


def calibrate(spec: SimulationSpec, alpha_tau: float, grid: list[GridCell],
              warmup: int, penalized: bool = True, truncation: TruncationConfig = TruncationConfig(),
              folds: int = 5, threads: int = 1,
              rank_deficient: str = "raise") -> tuple[GridCell, list[GridCell]]:
    """Cross-validate on the first ``warmup`` replications and freeze the
    lower median of the minimum-error selections (K_n and level separately)."""
    if warmup < 1:
        raise ValueError("need at least one warm-up replication")
    jobs = [(spec, r, alpha_tau, tuple(grid), penalized, truncation, folds, rank_deficient)
            for r in range(warmup)]
    picks = _map(_calibrate_one, jobs, threads)
    Ks = sorted(c.basis_count for c in picks)
    levels = sorted(c.effective_level for c in picks)
    mid = (len(picks) - 1) // 2
    return GridCell(Ks[mid], levels[mid]), picks


def _calibrate_one(job) -> GridCell:
    spec, r, alpha_tau, grid, penalized, truncation, folds, rank_deficient = job
    panel, _ = simulate_panel(spec, r)
    rep = cross_validate(panel, truncation.make(panel), alpha_tau, list(grid), folds,
                         seed=r, penalized=penalized, rank_deficient=rank_deficient)
    return rep.chosen_min


def run_estimation_benchmark(spec: SimulationSpec, estimators, replications: int,
                             seed: int | None = None, threads: int = 1,
                             truncation: TruncationConfig = TruncationConfig(),
                             tuning_grid: list[GridCell] | None = None,
                             warmup: int = 20) -> BenchmarkReport:
    """Simulate, estimate with every estimator, and aggregate errors of the
    average beta Îβ/T (×100) over replications.

    Estimators with unset tuning are calibrated on warm-up replications first.
    A failure in any replication turns that estimator into a dash entry.
    """
    if replications < 2:
        raise ValueError("need at least 2 replications")
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    start = time.perf_counter()
    estimators, tuning = _resolve(spec, list(estimators), truncation, tuning_grid, warmup,
                                  threads)
    jobs = [_Job(spec, r, tuple(estimators), truncation) for r in range(replications)]
    results = _map(_run_replication, jobs, threads)
    report = _aggregate(spec, estimators, results, replications, truncation, tuning)
    report.runtime_seconds = time.perf_counter() - start
    return report


def run_selection_benchmark(spec: SimulationSpec, alpha_taus=(0.05, 0.01), replications: int = 100,
                            seed: int | None = None, threads: int = 1,
                            truncation: TruncationConfig = TruncationConfig(),
                            tuning_grid: list[GridCell] | None = None, warmup: int = 20,
                            basis_count: int | None = None,
                            effective_level: float | None = None) -> BenchmarkReport:
    """Selection frequencies of the TLP estimator, one column per α_τ."""
    ests = [EstimatorConfig(f"spline_tlp_{a:g}", "spline_tlp", basis_count=basis_count,
                            alpha_tau=a, effective_level=effective_level) for a in alpha_taus]
    return run_estimation_benchmark(spec, ests, replications, seed, threads, truncation,
                                    tuning_grid, warmup)


def _resolve(spec, estimators, truncation, grid, warmup, threads):
    tuning = {}
    out = []
    for est in estimators:
        need_k = est.basis_count is None and est.kind != "akx"
        need_level = est.kind == "spline_tlp" and est.effective_level is None
        if need_k or need_level:
            penalized = est.kind == "spline_tlp"
            g = grid or _default_sim_grid(penalized)
            if est.basis_count is not None:
                g = [c for c in g if c.basis_count == est.basis_count]
            if not penalized:
                g = list(dict.fromkeys(GridCell(c.basis_count) for c in g))
            cell, picks = calibrate(spec, est.alpha_tau, g, warmup, penalized, truncation,
                                    threads=threads, rank_deficient=est.rank_deficient)
            est = dataclasses.replace(
                est, basis_count=cell.basis_count,
                effective_level=cell.effective_level if penalized else est.effective_level)
            tuning[est.name] = {"chosen": dataclasses.asdict(cell),
                                "warmup": [dataclasses.asdict(c) for c in picks]}
        out.append(est)
    return out, tuning


def _default_sim_grid(penalized: bool) -> list[GridCell]:
    Ks = DEFAULT_SIM_BASIS_COUNTS
    if not penalized:
        return [GridCell(K) for K in Ks]
    return [GridCell(K, lv) for K in Ks for lv in DEFAULT_SIM_LEVELS]


def _aggregate(spec, estimators, results, R, truncation, tuning) -> BenchmarkReport:
    q, p = spec.q, spec.p
    estimation, selection = {}, {}
    for est in estimators:
        recs = [res[est.name] for res in results]
        fails = [r["failure"] for r in recs if r["failure"] is not None]
        if fails:
            nan = [float("nan")] * q
            estimation[est.name] = ComponentStats(nan, nan, nan, len(fails), R,
                                                  sorted(set(fails))[:3])
        else:
            errs = np.array([r["error"] for r in recs])
            b, s, m = summarize_errors(errs)
            estimation[est.name] = ComponentStats(b.tolist(), s.tolist(), m.tolist(), 0, R)
        if est.kind == "spline_tlp":
            sel = np.array([r["selected"] for r in recs if r["selected"] is not None])
            if len(sel):
                selection[est.name] = selection_stats(sel, q, all(r["trace_ok"] for r in recs
                                                                  if r["trace_ok"] is not None))
    config = {"simulation": spec.to_json(),
              "estimators": [dataclasses.asdict(e) for e in estimators],
              "truncation": dataclasses.asdict(truncation)}
    return BenchmarkReport(estimation, selection, R, spec.seed, config, tuning)


def selection_stats(selected: np.ndarray, q: int, dc_monotone: bool = True) -> SelectionStats:
    """Rates from a (replications, p) boolean matrix; the first q factors are relevant."""
    selected = np.asarray(selected, dtype=bool)
    rel = selected[:, :q]
    irr = selected[:, q:]
    correct = rel.all(axis=1) & ~irr.any(axis=1)
    return SelectionStats(
        relevant_rate=float(rel.mean()) if q else 1.0,
        irrelevant_rate=float(irr.mean()) if irr.size else 0.0,
        correct_rate=float(correct.mean()),
        per_factor_rate=selected.mean(axis=0).tolist(),
        dc_monotone=bool(dc_monotone),
    )


@dataclass(frozen=True)
class _GridJob:
    spec: SimulationSpec
    replication: int
    basis_counts: tuple[int, ...]
    levels: tuple[float, ...]
    alpha_tau: float
    truncation: TruncationConfig


def _grid_replication(job: _GridJob) -> np.ndarray:
    panel, _ = simulate_panel(job.spec, job.replication)
    spec = job.truncation.make(panel)
    out = np.zeros((len(job.basis_counts), len(job.levels), job.spec.p), dtype=bool)
    for a, K in enumerate(job.basis_counts):
        system = build_design(panel, make_uniform_basis(3, K, panel.horizon), spec)
        prob = WhitenedProblem(system)
        for b, lv in enumerate(job.levels):
            res = dc_solve(system, penalty_config(panel, job.alpha_tau, K, lv), prob)
            out[a, b, res.active_set] = True
    return out


def tdr_fdr_grid(spec: SimulationSpec, basis_counts, levels, replications: int,
                 seed: int | None = None, alpha_tau: float = 0.01, threads: int = 1,
                 truncation: TruncationConfig = TruncationConfig()) -> list[dict]:
    """Long-format rows (basis_count, level, tdr, fdr) over a tuning grid."""
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    jobs = [_GridJob(spec, r, tuple(basis_counts), tuple(float(x) for x in levels), alpha_tau,
                     truncation) for r in range(replications)]
    sel = np.stack(_map(_grid_replication, jobs, threads))   # (R, nK, nL, p)
    q = spec.q
    rows = []
    for a, K in enumerate(basis_counts):
        for b, lv in enumerate(levels):
            s = sel[:, a, b]
            rows.append({"basis_count": int(K), "level": float(lv),
                         "tdr": float(s[:, :q].mean()),
                         "fdr": float(s[:, q:].mean()) if spec.p > q else 0.0})
    return rows


def grid_csv(rows: list[dict]) -> str:
    out = io.StringIO()
    w = csv.DictWriter(out, ["basis_count", "level", "tdr", "fdr"], lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return out.getvalue()


@dataclass
class RiskDecomposition:
    total_qv: float
    integrated_variance: float
    unexplained_iv: float
    r_squared: float
    negative_r_squared: bool
    window: str = ""


def risk_decompose(panel: PricePanel, fit: FitResult, spec: TruncationSpec,
                   window: str = "") -> RiskDecomposition:
    """Annualized realized variance, truncated variance and residual variance.

    Residuals use the truncated increments, exactly as they enter the fit.
    """
    dy, dx = increments(panel)
    system = build_design(panel, fit.basis, spec)
    T = panel.horizon
    total = float(dy @ dy) / T
    iv = float(system.response @ system.response) / T
    if iv <= 0:
        raise ValueError("truncated variance is zero; R² is undefined")
    B = basis_matrix(fit.basis, np.arange(panel.n) * panel.delta)
    beta = B @ fit.coefficient_blocks.T
    xk = dx * system.covariate_mask()
    resid = system.response - np.einsum("ij,ij->i", beta, xk)
    unexplained = float(resid @ resid) / T
    r2 = 1.0 - unexplained / iv
    return RiskDecomposition(total, iv, unexplained, float(np.clip(r2, 0.0, 1.0)), r2 < 0, window)
