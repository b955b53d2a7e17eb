"""Price panels, MedRV, and jump truncation of high-frequency increments."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

MEDRV_SCALE = np.pi / (6.0 - 4.0 * np.sqrt(3.0) + np.pi)

TruncationMode = Literal["norm", "componentwise"]


class DegenerateSeriesError(ValueError):
    """A return series has zero MedRV, so no truncation threshold exists."""


@dataclass(frozen=True)
class PricePanel:
    """Log prices of one response and p covariates on a uniform time grid.

    ``times`` are in years; ``covariates`` has shape (n+1, p).
    """

    times: np.ndarray
    response: np.ndarray
    covariates: np.ndarray
    labels: tuple[str, ...] = ()
    response_label: str = "Y"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        response = np.asarray(self.response, dtype=float)
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "response", response)
        object.__setattr__(self, "covariates", cov)
        labels = tuple(self.labels) or tuple(f"X{j + 1}" for j in range(cov.shape[1]))
        object.__setattr__(self, "labels", labels)

        if times.ndim != 1 or times.size < 3:
            raise ValueError("need at least 3 observations (2 increments)")
        if response.shape != times.shape or cov.shape[0] != times.size:
            raise ValueError("times, response and covariates disagree in length")
        if len(labels) != cov.shape[1]:
            raise ValueError("one label per covariate column required")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(response))
                and np.all(np.isfinite(cov))):
            raise ValueError("panel contains missing or non-finite values")
        steps = np.diff(times)
        if np.any(steps <= 0):
            raise ValueError("times must be strictly increasing")
        delta = (times[-1] - times[0]) / steps.size
        if np.max(np.abs(steps - delta)) > 1e-9 * delta:
            raise ValueError("times are not uniformly spaced")

    @property
    def n(self) -> int:
        return self.times.size - 1

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def delta(self) -> float:
        return (self.times[-1] - self.times[0]) / self.n

    @property
    def horizon(self) -> float:
        return self.n * self.delta


@dataclass(frozen=True)
class TruncationSpec:
    exponent: float
    multiplier: float
    mode: TruncationMode
    response_threshold: float
    covariate_thresholds: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not 0 < self.exponent < 0.5:
            raise ValueError(f"exponent must lie in (0, 1/2), got {self.exponent}")
        if self.mode not in ("norm", "componentwise"):
            raise ValueError(f"unknown truncation mode {self.mode!r}")
        u = np.asarray(self.covariate_thresholds, dtype=float)
        object.__setattr__(self, "covariate_thresholds", u)
        if not self.response_threshold > 0 or np.any(~(u > 0)):
            raise ValueError("thresholds must be strictly positive")

    def scaled(self, factor: float) -> "TruncationSpec":
        return TruncationSpec(self.exponent, self.multiplier * factor, self.mode,
                              self.response_threshold * factor,
                              self.covariate_thresholds * factor)


def no_truncation(p: int, mode: TruncationMode = "norm") -> TruncationSpec:
    return TruncationSpec(0.47, np.inf, mode, np.inf, np.full(p, np.inf))


def increments(panel: PricePanel) -> tuple[np.ndarray, np.ndarray]:
    return np.diff(panel.response), np.diff(panel.covariates, axis=0)


def medrv(returns) -> float:
    """Median realized variance of a return series (jump-robust IV over the span)."""
    r = np.abs(np.asarray(returns, dtype=float))
    n = r.size
    if n < 3:
        raise ValueError(f"MedRV needs at least 3 returns, got {n}")
    med = np.median(np.stack([r[:-2], r[1:-1], r[2:]]), axis=0)
    return float(MEDRV_SCALE * n / (n - 2) * np.sum(med**2))


def spot_threshold(returns, delta: float, exponent: float, multiplier: float) -> float:
    """a * delta**exponent * sigma_hat, sigma_hat**2 = MedRV / (len(returns) * delta)."""
    iv = medrv(returns)
    if iv <= 0:
        raise DegenerateSeriesError("MedRV is zero; series has no variation")
    return float(multiplier * delta**exponent * np.sqrt(iv / (len(returns) * delta)))


def default_mode(p: int) -> TruncationMode:
    return "componentwise" if p > 10 else "norm"


def truncation_from_increments(dy, dx, delta: float, exponent: float = 0.47,
                               multiplier: float = 3.0,
                               mode: TruncationMode | None = None) -> TruncationSpec:
    dx = np.asarray(dx, dtype=float)
    if dx.ndim == 1:
        dx = dx[:, None]
    mode = mode or default_mode(dx.shape[1])
    u_y = spot_threshold(dy, delta, exponent, multiplier)
    if mode == "norm":
        u_x = np.full(dx.shape[1], u_y)
    else:
        u_x = np.array([spot_threshold(dx[:, j], delta, exponent, multiplier)
                        for j in range(dx.shape[1])])
    return TruncationSpec(exponent, multiplier, mode, u_y, u_x)


def make_truncation(panel: PricePanel, exponent: float = 0.47, multiplier: float = 3.0,
                    mode: TruncationMode | None = None) -> TruncationSpec:
    dy, dx = increments(panel)
    return truncation_from_increments(dy, dx, panel.delta, exponent, multiplier, mode)


def apply_truncation(dy, dx, spec: TruncationSpec):
    """Keep flags for the response and covariates.

    Norm mode returns one row flag for both. Componentwise mode returns the
    response flag (n,) and per-entry covariate flags (n, p).
    """
    dy = np.asarray(dy, dtype=float)
    dx = np.asarray(dx, dtype=float)
    if dx.ndim == 1:
        dx = dx[:, None]
    if dx.shape[0] != dy.shape[0]:
        raise ValueError("response and covariate increments disagree in length")
    keep_y = np.abs(dy) <= spec.response_threshold
    if spec.mode == "norm":
        row = keep_y & (np.linalg.norm(dx, axis=1) <= spec.covariate_thresholds[0])
        return row, row.copy()
    return keep_y, np.abs(dx) <= spec.covariate_thresholds[None, :]


def full_row_mask(keep_response: np.ndarray, keep_covariate: np.ndarray) -> np.ndarray:
    """Rows where neither the response nor any covariate was truncated."""
    if keep_covariate.ndim == 1:
        return keep_response & keep_covariate
    return keep_response & keep_covariate.all(axis=1)
