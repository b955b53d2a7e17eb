"""Clamped B-spline bases on uniform knots over [0, T].

Evaluation uses the triangular Cox-de Boor scheme on the knot span containing
``t``, so only the ``degree + 1`` nonzero functions are ever computed.
Basis functions are right-continuous on [0, T) and closed at T.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SplineBasis:
    degree: int
    interior_knot_count: int
    horizon: float
    extended_knots: np.ndarray

    @property
    def basis_count(self) -> int:
        return self.interior_knot_count + self.degree + 1

    @property
    def interior_knots(self) -> np.ndarray:
        d = self.degree
        return self.extended_knots[d + 1 : d + 1 + self.interior_knot_count]


def make_uniform_basis(degree: int, basis_count: int, horizon: float) -> SplineBasis:
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    if basis_count < degree + 1:
        raise ValueError(
            f"basis_count={basis_count} < degree+1={degree + 1}: no valid knot sequence"
        )
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    n_interior = basis_count - degree - 1
    interior = horizon * np.arange(1, n_interior + 1) / (n_interior + 1)
    knots = np.concatenate(
        [np.zeros(degree + 1), interior, np.full(degree + 1, float(horizon))]
    )
    knots.setflags(write=False)
    return SplineBasis(degree, n_interior, float(horizon), knots)


def _spans(knots: np.ndarray, degree: int, t: np.ndarray) -> np.ndarray:
    """Index mu with knots[mu] <= t < knots[mu+1]; the right end maps to the
    last nonempty span."""
    top = knots[-1]
    last = np.searchsorted(knots, top, side="left") - 1
    mu = np.searchsorted(knots, t, side="right") - 1
    return np.clip(mu, degree, last)


def _nonzero_values(knots: np.ndarray, degree: int, t: np.ndarray):
    """Values of the degree+1 functions supported on each point's span.

    Returns (mu, N) with N[:, r] the value of function mu - degree + r.
    """
    mu = _spans(knots, degree, t)
    m = t.shape[0]
    N = np.zeros((m, degree + 1))
    N[:, 0] = 1.0
    left = np.zeros((m, degree + 1))
    right = np.zeros((m, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = t - knots[mu + 1 - j]
        right[:, j] = knots[mu + j] - t
        saved = np.zeros(m)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = N[:, r] / denom
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    return mu, N


def _check_times(basis: SplineBasis, t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t.ndim != 1:
        raise ValueError("t must be a scalar or 1-D array")
    if np.any(t < 0) or np.any(t > basis.horizon) or np.any(~np.isfinite(t)):
        raise ValueError(f"t must lie in [0, {basis.horizon}]")
    return t


def _scatter(mu: np.ndarray, N: np.ndarray, degree: int, count: int) -> np.ndarray:
    out = np.zeros((N.shape[0], count))
    rows = np.arange(N.shape[0])[:, None]
    cols = mu[:, None] - degree + np.arange(degree + 1)[None, :]
    valid = (cols >= 0) & (cols < count)
    out[np.broadcast_to(rows, cols.shape)[valid], cols[valid]] = N[valid]
    return out


def basis_matrix(basis: SplineBasis, t) -> np.ndarray:
    """Rows are (B_t^(1), ..., B_t^(K)) for each requested time."""
    t = _check_times(basis, t)
    mu, N = _nonzero_values(basis.extended_knots, basis.degree, t)
    return _scatter(mu, N, basis.degree, basis.basis_count)


def evaluate_basis(basis: SplineBasis, t: float) -> np.ndarray:
    return basis_matrix(basis, t)[0]


def basis_derivative_matrix(basis: SplineBasis, t) -> np.ndarray:
    """First derivatives via the degree-lowering identity.

    At interior knots the derivative is the one-sided limit from the right;
    at T it is the limit from the left.
    """
    d = basis.degree
    if d == 0:
        raise ValueError("degree-0 basis has no pointwise derivative")
    t = _check_times(basis, t)
    knots = basis.extended_knots
    K = basis.basis_count
    # Degree d-1 functions on the same knot vector: K + 1 of them.
    mu, N = _nonzero_values(knots, d - 1, t)
    lower = _scatter(mu, N, d - 1, K + 1)
    span = knots[d : d + K + 1] - knots[0 : K + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(span > 0, d / span, 0.0)
    scaled = lower * coef[None, :]
    return scaled[:, :K] - scaled[:, 1 : K + 1]


def evaluate_basis_derivative(basis: SplineBasis, t: float) -> np.ndarray:
    return basis_derivative_matrix(basis, t)[0]


def block_basis_matrix(basis: SplineBasis, t: float, p: int) -> np.ndarray:
    """The p x pK block-diagonal matrix carrying the basis row in each block."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return np.kron(np.eye(p), evaluate_basis(basis, t)[None, :])


def gram_integral(basis: SplineBasis, points: int = 10_001) -> np.ndarray:
    """Trapezoid approximation of the L2 Gram matrix of the basis on [0, T]."""
    t = np.linspace(0.0, basis.horizon, points)
    B = basis_matrix(basis, t)
    w = np.full(points, basis.horizon / (points - 1))
    w[[0, -1]] *= 0.5
    return (B * w[:, None]).T @ B
