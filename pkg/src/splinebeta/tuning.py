"""Tuning: τ from MedRV, the level unit, and K-fold cross-validation over
(number of basis functions, effective penalty level)."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .design import build_design_from_increments
from .preprocess import (DegenerateSeriesError, PricePanel, TruncationSpec, apply_truncation,
                         increments, medrv, truncation_from_increments)
from .spline_basis import basis_matrix, make_uniform_basis
from .spline_ols import SingularDesignError, fit_ols
from .tlp import ConvergenceError, PenaltyConfig, WhitenedProblem, dc_solve, max_block_gradient

DEFAULT_BASIS_COUNTS = (4, 6, 8, 12, 16)
DEFAULT_ALPHA_TAU = 0.01
CV_MAX_INNER_ITERS = 1000


def make_tau(panel_or_dy, alpha_tau: float) -> float:
    """τ = α_τ·sqrt(MedRV of the response increments over the window)."""
    if not alpha_tau > 0:
        raise ValueError(f"alpha_tau must be positive, got {alpha_tau}")
    dy = increments(panel_or_dy)[0] if isinstance(panel_or_dy, PricePanel) else panel_or_dy
    iv = medrv(dy)
    if iv <= 0:
        raise DegenerateSeriesError("MedRV of the response is zero")
    return float(alpha_tau * np.sqrt(iv))


def level_unit(panel_or_dy, basis_count: int) -> float:
    """Response-unit size of one unit of effective level: sqrt(K_n · MedRV(ΔY)).

    The sqrt(K_n) is the usual group-size weight; the MedRV factor makes the
    level invariant to rescaling the prices.
    """
    dy = increments(panel_or_dy)[0] if isinstance(panel_or_dy, PricePanel) else panel_or_dy
    return float(np.sqrt(basis_count * medrv(dy)))


def penalty_config(panel_or_dy, alpha_tau: float, basis_count: int, effective_level: float,
                   **kwargs) -> PenaltyConfig:
    return PenaltyConfig(make_tau(panel_or_dy, alpha_tau), effective_level,
                         level_scale=level_unit(panel_or_dy, basis_count), **kwargs)


def assign_folds(n: int, folds: int, seed: int = 0) -> np.ndarray:
    """Interleaved fold labels: interval i goes to fold (i + seed) mod K."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if n < folds:
        raise ValueError(f"cannot split {n} intervals into {folds} folds")
    return (np.arange(n) + seed) % folds


@dataclass(frozen=True)
class GridCell:
    basis_count: int
    effective_level: float = 0.0


@dataclass
class CvReport:
    grid: list[GridCell]
    fold_count: int
    per_cell_mse: np.ndarray
    per_cell_se: np.ndarray
    valid: np.ndarray
    chosen_min: GridCell
    chosen_one_se: GridCell
    fold_assignment: np.ndarray
    seed: int
    alpha_tau: float
    penalized: bool
    per_fold_mse: np.ndarray = field(repr=False, default=None)

    def to_json(self) -> dict:
        def num(x):
            return None if not np.isfinite(x) else float(x)
        return {
            "grid": [asdict(c) for c in self.grid],
            "fold_count": self.fold_count,
            "per_cell_mse": [num(x) for x in self.per_cell_mse],
            "per_cell_se": [num(x) for x in self.per_cell_se],
            "valid": self.valid.tolist(),
            "chosen_min": asdict(self.chosen_min),
            "chosen_one_se": asdict(self.chosen_one_se),
            "fold_assignment": self.fold_assignment.tolist(),
            "seed": self.seed,
            "alpha_tau": self.alpha_tau,
            "penalized": self.penalized,
        }


def default_grid(panel: PricePanel, spec: TruncationSpec,
                 basis_counts=DEFAULT_BASIS_COUNTS, levels: int = 12) -> list[GridCell]:
    """Log-spaced levels over [1e-3, 1] times the largest normalized block
    score at the origin across the candidate K_n."""
    dy, dx = increments(panel)
    top = 0.0
    for K in basis_counts:
        system = build_design_from_increments(
            dy, dx, make_uniform_basis(3, K, panel.horizon), panel.delta, spec)
        top = max(top, max_block_gradient(system) / level_unit(dy, K))
    return [GridCell(K, float(lv)) for K in basis_counts
            for lv in np.geomspace(1e-3, 1.0, levels) * top]


def _training_spec(dy, dx, delta, spec: TruncationSpec, train: np.ndarray) -> TruncationSpec:
    if not np.isfinite(spec.multiplier):
        return spec
    return truncation_from_increments(dy[train], dx[train], delta, spec.exponent,
                                      spec.multiplier, spec.mode)


def _heldout_error(dy, dx, B, gamma_blocks, spec: TruncationSpec, rows: np.ndarray) -> float:
    keep_y, keep_x = apply_truncation(dy[rows], dx[rows], spec)
    x = dx[rows] * (keep_x if keep_x.ndim == 2 else keep_x[:, None])
    kept = keep_y & keep_x if keep_x.ndim == 1 else keep_y
    if not kept.any():
        return np.nan
    beta = B[rows] @ gamma_blocks.T
    err = dy[rows] - np.einsum("ij,ij->i", beta, x)
    return float(np.mean(err[kept] ** 2))


def _fold_errors(dy, dx, delta, spec, folds, fold, basis_count, levels, tau, unit,
                 penalized, degree, rank_deficient="raise"):
    """Out-of-fold MSE for every level at one (K_n, fold); NaN marks failure."""
    n = dy.size
    held = folds == fold
    basis = make_uniform_basis(degree, basis_count, n * delta)
    tspec = _training_spec(dy, dx, delta, spec, ~held)
    system = build_design_from_increments(dy, dx, basis, delta, tspec, drop_rows=held)
    B = basis_matrix(basis, np.arange(n) * delta)
    out = np.full(len(levels), np.nan)
    p = dx.shape[1]
    if not penalized:
        try:
            fit = fit_ols(system, rank_deficient=rank_deficient)
        except SingularDesignError:
            return out
        out[:] = _heldout_error(dy, dx, B, fit.coefficient_blocks, tspec, held)
        return out
    prob = WhitenedProblem(system)
    # largest level first; weaker penalties than one that failed to converge
    # are harder still and are marked invalid without trying
    for k in sorted(range(len(levels)), key=lambda k: -levels[k]):
        try:
            res = dc_solve(system, PenaltyConfig(tau, levels[k], level_scale=unit,
                                                 max_inner_iters=CV_MAX_INNER_ITERS), prob)
        except ConvergenceError:
            break
        out[k] = _heldout_error(dy, dx, B, res.gamma_star.reshape(p, basis_count), tspec, held)
    return out


def one_se_choice(grid: list[GridCell], mse: np.ndarray, se: np.ndarray,
                  valid: np.ndarray) -> tuple[GridCell, GridCell]:
    """(minimum-MSE cell, most parsimonious cell within one SE of the minimum).

    Parsimony means the largest effective level, then the smallest K_n.
    """
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        raise ValueError("every grid cell failed during cross-validation")
    best = idx[np.argmin(mse[idx])]
    bound = mse[best] + se[best]
    near = [i for i in idx if mse[i] <= bound]
    pick = min(near, key=lambda i: (-grid[i].effective_level, grid[i].basis_count, i))
    return grid[best], grid[pick]


def cross_validate(panel: PricePanel, spec: TruncationSpec, alpha_tau: float = DEFAULT_ALPHA_TAU,
                   grid: list[GridCell] | None = None, folds: int = 5, seed: int = 0,
                   penalized: bool = True, threads: int = 1, degree: int = 3,
                   rank_deficient: str = "raise") -> CvReport:
    """K-fold cross-validation of the truncated out-of-sample prediction error.

    Held-out rows are zeroed in the training design. Truncation thresholds are
    re-estimated on the training rows and applied to the held-out rows; τ and
    the level unit come from the full window, as in the final fit.
    ``rank_deficient`` is passed to the unpenalized fits.
    """
    if grid is None:
        grid = default_grid(panel, spec) if penalized else \
            [GridCell(K) for K in DEFAULT_BASIS_COUNTS]
    grid = list(grid)
    if not grid:
        raise ValueError("empty tuning grid")
    if not penalized:
        grid = list(dict.fromkeys(GridCell(c.basis_count) for c in grid))
    dy, dx = increments(panel)
    fold_of = assign_folds(dy.size, folds, seed)
    tau = make_tau(dy, alpha_tau)

    by_k: dict[int, list[int]] = {}
    for i, c in enumerate(grid):
        by_k.setdefault(c.basis_count, []).append(i)
    tasks = [(K, f) for K in by_k for f in range(folds)]

    def run(task):
        K, f = task
        levels = [grid[i].effective_level for i in by_k[K]]
        return _fold_errors(dy, dx, panel.delta, spec, fold_of, f, K, levels, tau,
                            level_unit(dy, K), penalized, degree, rank_deficient)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    per_fold = np.full((len(grid), folds), np.nan)
    for (K, f), errs in zip(tasks, results):
        per_fold[by_k[K], f] = errs
    valid = np.all(np.isfinite(per_fold), axis=1)
    mse = np.where(valid, np.mean(per_fold, axis=1), np.inf)
    se = np.where(valid, np.std(per_fold, axis=1, ddof=1) / np.sqrt(folds), np.inf)
    best, pick = one_se_choice(grid, mse, se, valid)
    return CvReport(grid, folds, mse, se, valid, best, pick, fold_of, seed, alpha_tau,
                    penalized, per_fold)
