"""Unpenalized spline least squares, integrated betas, and the jackknife
sandwich covariance. Also the local-window OLS comparator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .design import DesignSystem
from .preprocess import PricePanel, TruncationSpec, apply_truncation, increments
from .spline_basis import SplineBasis, basis_matrix

RCOND_GATE = 1e-12


class SingularDesignError(np.linalg.LinAlgError):
    def __init__(self, message: str, rcond: float):
        super().__init__(message)
        self.rcond = rcond


class LeverageError(ValueError):
    def __init__(self, row: int, leverage: float):
        super().__init__(f"row {row} has leverage {leverage:.12f}; its leave-one-out fit is undefined")
        self.row = row
        self.leverage = leverage


@dataclass
class FitResult:
    gamma_hat: np.ndarray
    basis: SplineBasis
    block_count: int
    delta: float
    n: int
    residuals: np.ndarray
    integrated_beta: np.ndarray = field(init=False)
    covariance: np.ndarray | None = None
    condition_diagnostic: float = np.nan

    def __post_init__(self):
        self.integrated_beta = integrated_beta(self, self.n, self.delta)

    @property
    def horizon(self) -> float:
        return self.n * self.delta

    @property
    def coefficient_blocks(self) -> np.ndarray:
        return self.gamma_hat.reshape(self.block_count, self.basis.basis_count)

    def standard_errors(self) -> np.ndarray:
        """Standard errors of the integrated betas: sqrt(Δ * diag Σ̂)."""
        if self.covariance is None:
            raise ValueError("fit has no covariance; call sandwich_covariance first")
        return np.sqrt(self.delta * np.clip(np.diag(self.covariance), 0.0, None))


def _cholesky_with_rcond(gram: np.ndarray):
    if gram.shape[0] == 0:
        raise SingularDesignError("empty design", 0.0)
    anorm = np.max(np.sum(np.abs(gram), axis=0))
    if anorm == 0:
        raise SingularDesignError("design is identically zero", 0.0)
    try:
        factor = linalg.cho_factor(gram, lower=False, check_finite=False)
    except linalg.LinAlgError:
        raise SingularDesignError("Gram matrix is not positive definite", 0.0) from None
    rcond, info = linalg.lapack.dpocon(factor[0], anorm)
    if info != 0 or not rcond >= RCOND_GATE:
        raise SingularDesignError(
            f"Gram matrix is near-singular (reciprocal condition {rcond:.3e})", float(rcond))
    return factor, float(rcond)


def fit_ols(system: DesignSystem, rank_deficient: str = "raise") -> FitResult:
    """Solve the normal equations RᵀRγ = RᵀY.

    ``rank_deficient="minnorm"`` opts into the minimum-norm least-squares
    solution when RᵀR is singular; it exists to reproduce the unpenalized
    breakdown when pK exceeds the number of kept rows. The default raises.
    """
    R, Y = system.design, system.response
    try:
        if R.shape[1] > np.count_nonzero(np.any(R != 0, axis=1)):
            raise SingularDesignError(
                f"{R.shape[1]} coefficients exceed the number of usable rows", 0.0)
        factor, rcond = _cholesky_with_rcond(R.T @ R)
        gamma = linalg.cho_solve(factor, R.T @ Y, check_finite=False)
        cond = 1.0 / rcond
    except SingularDesignError:
        if rank_deficient != "minnorm":
            raise
        gamma = _min_norm_solution(system)
        cond = np.inf
    return FitResult(gamma, system.basis, system.block_count, system.delta, system.n,
                     Y - R @ gamma, condition_diagnostic=cond)


def _min_norm_solution(system: DesignSystem) -> np.ndarray:
    R, Y = system.design, system.response
    n, m = R.shape
    if m <= n:
        return linalg.lstsq(R, Y, lapack_driver="gelsd", check_finite=False)[0]
    # wide design: γ = Rᵀ(RRᵀ)⁺Y, and RRᵀ = (X̃X̃ᵀ) ∘ (BBᵀ) for Kronecker rows
    xk = system.dx * system.covariate_mask()
    rows = np.flatnonzero(np.any(xk != 0, axis=1))
    xk, B = xk[rows], system.basis_rows[rows]
    gram = (xk @ xk.T) * (B @ B.T)
    try:
        a = linalg.cho_solve(linalg.cho_factor(gram, check_finite=False), Y[rows],
                             check_finite=False)
    except linalg.LinAlgError:
        a = linalg.pinvh(gram, check_finite=False) @ Y[rows]
    return R[rows].T @ a


def beta_path(fit: FitResult, t) -> np.ndarray:
    """β̂ at time(s) t; shape (p,) for scalar t, else (m, p)."""
    scalar = np.ndim(t) == 0
    B = basis_matrix(fit.basis, t)
    out = B @ fit.coefficient_blocks.T
    return out[0] if scalar else out


def integrated_beta(fit: FitResult, n: int, delta: float) -> np.ndarray:
    """Left-endpoint Riemann sum of β̂ over n intervals of length delta."""
    B = basis_matrix(fit.basis, np.arange(n) * delta)
    return delta * (B.sum(axis=0) @ fit.coefficient_blocks.T)


def leverages(system: DesignSystem, factor=None) -> np.ndarray:
    R = system.design
    if factor is None:
        factor, _ = _cholesky_with_rcond(R.T @ R)
    # h_i = R_i (RᵀR)^{-1} R_iᵀ = ||U^{-T} R_i||² with RᵀR = UᵀU
    Z = linalg.solve_triangular(factor[0], R.T, trans="T", lower=False, check_finite=False)
    return np.einsum("ij,ij->j", Z, Z)


def loo_residuals(system: DesignSystem, fit: FitResult) -> np.ndarray:
    """Delete-one residuals e_i / (1 - h_ii) for fully kept rows, zero elsewhere."""
    factor, _ = _cholesky_with_rcond(system.design.T @ system.design)
    h = leverages(system, factor)
    rows = system.row_mask()
    bad = np.flatnonzero(rows & (h >= 1 - 1e-10))
    if bad.size:
        raise LeverageError(int(bad[0]), float(h[bad[0]]))
    out = np.zeros(system.n)
    out[rows] = fit.residuals[rows] / (1.0 - h[rows])
    return out


def riemann_basis_block(system: DesignSystem) -> np.ndarray:
    """Σ_i B_{(i-1)Δ} Δ as a p x pK block-diagonal matrix."""
    row = system.delta * system.basis_rows.sum(axis=0)
    return np.kron(np.eye(system.block_count), row[None, :])


def sandwich_covariance(system: DesignSystem, fit: FitResult,
                        weights: np.ndarray | None = None) -> np.ndarray:
    """Jackknife heteroskedasticity-consistent covariance of the integrated betas.

    The returned matrix is the covariance of (Îβ - Iβ)/sqrt(Δ). ``weights``
    overrides the diagonal of D (mainly for structural checks).
    """
    R = system.design
    factor, _ = _cholesky_with_rcond(R.T @ R)
    if weights is None:
        e = loo_residuals(system, fit)
        weights = e**2 / system.delta
    A = riemann_basis_block(system)
    # A (RᵀR)^{-1} Rᵀ D R (RᵀR)^{-1} Aᵀ
    M = linalg.cho_solve(factor, A.T, check_finite=False)      # (pK, p)
    RM = R @ M                                                  # (n, p)
    cov = RM.T @ (weights[:, None] * RM)
    cov = 0.5 * (cov + cov.T)
    fit.covariance = cov
    return cov


@dataclass
class LocalFit:
    """Piecewise-constant beta from non-overlapping local OLS windows."""

    block_betas: np.ndarray      # (blocks, p)
    block_lengths: np.ndarray    # intervals per block
    delta: float
    integrated_beta: np.ndarray

    def beta_path(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        edges = np.cumsum(self.block_lengths) * self.delta
        idx = np.minimum(np.searchsorted(edges, t, side="right"), len(edges) - 1)
        return self.block_betas[idx]


def fit_local_ols_akx(panel_or_increments, spec: TruncationSpec, window: int,
                      delta: float | None = None) -> LocalFit:
    """OLS of ΔY on ΔX within consecutive windows of ``window`` intervals.

    The trailing partial window is fitted on its own and weighted by its length.
    """
    if isinstance(panel_or_increments, PricePanel):
        dy, dx = increments(panel_or_increments)
        delta = panel_or_increments.delta
    else:
        dy, dx = panel_or_increments
        dx = np.asarray(dx, dtype=float)
        if dx.ndim == 1:
            dx = dx[:, None]
        if delta is None:
            raise ValueError("delta is required with raw increments")
    n, p = dx.shape
    if window < 1:
        raise ValueError(f"window must be positive, got {window}")
    keep_y, keep_x = apply_truncation(dy, dx, spec)
    if keep_x.ndim == 1:
        y = dy * keep_x
        x = dx * keep_x[:, None]
    else:
        y = dy * keep_y
        x = dx * keep_x
    starts = np.arange(0, n, window)
    betas = np.empty((starts.size, p))
    lengths = np.empty(starts.size, dtype=int)
    for b, s in enumerate(starts):
        xb, yb = x[s:s + window], y[s:s + window]
        try:
            factor, _ = _cholesky_with_rcond(xb.T @ xb)
        except SingularDesignError as err:
            raise SingularDesignError(f"local window {b} (rows {s}..{s + len(yb) - 1}): {err}",
                                      err.rcond) from None
        betas[b] = linalg.cho_solve(factor, xb.T @ yb, check_finite=False)
        lengths[b] = len(yb)
    ib = (betas * (lengths * delta)[:, None]).sum(axis=0)
    return LocalFit(betas, lengths, float(delta), ib)
