"""Truncated spline design: response vector, design matrix and block Grams.

Truncated rows stay in place as zeros so that row ``i`` always refers to the
interval ((i-1)Δ, iΔ].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocess import PricePanel, TruncationSpec, apply_truncation, increments
from .spline_basis import SplineBasis, basis_matrix


@dataclass(frozen=True)
class DesignSystem:
    response: np.ndarray          # (n,) truncated ΔY
    design: np.ndarray            # (n, p*K)
    block_grams: np.ndarray       # (p, K, K)
    keep_response: np.ndarray     # (n,)
    keep_covariate: np.ndarray    # (n,) in norm mode, (n, p) componentwise
    basis: SplineBasis
    delta: float
    basis_rows: np.ndarray        # (n, K) basis at left endpoints
    first_active: np.ndarray      # (n,) first nonzero basis column per row
    dy: np.ndarray                # raw increments, kept for LOO and risk work
    dx: np.ndarray

    @property
    def n(self) -> int:
        return self.response.size

    @property
    def block_count(self) -> int:
        return self.dx.shape[1]

    @property
    def basis_count(self) -> int:
        return self.basis.basis_count

    @property
    def horizon(self) -> float:
        return self.n * self.delta

    def block(self, j: int) -> np.ndarray:
        K = self.basis_count
        return self.design[:, j * K:(j + 1) * K]

    def covariate_mask(self) -> np.ndarray:
        """Per-entry covariate flags as an (n, p) array."""
        if self.keep_covariate.ndim == 1:
            return np.repeat(self.keep_covariate[:, None], self.block_count, axis=1)
        return self.keep_covariate

    def row_mask(self) -> np.ndarray:
        """Rows with nothing truncated."""
        return self.keep_response & self.covariate_mask().all(axis=1)

    def active_columns(self, i: int) -> np.ndarray:
        """Column indices that can be nonzero in row i (local support)."""
        K, d = self.basis_count, self.basis.degree
        local = self.first_active[i] + np.arange(d + 1)
        local = local[local < K]
        return (np.arange(self.block_count)[:, None] * K + local[None, :]).ravel()


def build_design_from_increments(dy, dx, basis: SplineBasis, delta: float,
                                 spec: TruncationSpec,
                                 drop_rows: np.ndarray | None = None) -> DesignSystem:
    """Assemble the system; ``drop_rows`` (boolean, length n) zeroes whole rows."""
    dy = np.asarray(dy, dtype=float)
    dx = np.asarray(dx, dtype=float)
    if dx.ndim == 1:
        dx = dx[:, None]
    n, p = dx.shape
    if dy.shape != (n,):
        raise ValueError(f"response has shape {dy.shape}, expected ({n},)")
    if abs(n * delta - basis.horizon) > 1e-9 * basis.horizon:
        raise ValueError(
            f"basis horizon {basis.horizon} != n*delta = {n * delta}")
    keep_y, keep_x = apply_truncation(dy, dx, spec)
    if drop_rows is not None:
        keep_y = keep_y & ~drop_rows
        keep_x = keep_x & (~drop_rows if keep_x.ndim == 1 else ~drop_rows[:, None])
    if not keep_y.any():
        raise ValueError("truncation removed every response increment")

    K = basis.basis_count
    B = basis_matrix(basis, np.arange(n) * delta)
    if keep_x.ndim == 1:
        xk = dx * keep_x[:, None]
        yk = dy * (keep_y & keep_x)
        keep_y = keep_y & keep_x
    else:
        xk = dx * keep_x
        yk = dy * keep_y
    design = (xk[:, :, None] * B[:, None, :]).reshape(n, p * K)
    blocks = design.reshape(n, p, K)
    grams = np.einsum("nja,njb->jab", blocks, blocks)
    first = np.argmax(B > 0, axis=1)
    for arr in (yk, design, grams, B):
        arr.setflags(write=False)
    return DesignSystem(yk, design, grams, keep_y, keep_x, basis, float(delta), B,
                        first, dy, dx)


def build_design(panel: PricePanel, basis: SplineBasis, spec: TruncationSpec) -> DesignSystem:
    dy, dx = increments(panel)
    if abs(basis.horizon - panel.horizon) > 1e-9 * panel.horizon:
        raise ValueError(
            f"basis horizon {basis.horizon} does not match panel horizon {panel.horizon}")
    return build_design_from_increments(dy, dx, basis, panel.delta, spec)


def block_gram(system: DesignSystem, j: int) -> np.ndarray:
    if not 0 <= j < system.block_count:
        raise IndexError(f"block {j} out of range for p={system.block_count}")
    return system.block_grams[j]
