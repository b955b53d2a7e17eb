"""Truncated-ℓ1 group penalty: objective, DC outer loop, group-LASSO inner solver.

The group norms are sqrt(γ_jᵀ W_j γ_j). With W_j = L_j L_jᵀ the substitution
θ_j = L_jᵀ γ_j turns them into plain Euclidean norms and makes every design
block orthonormal, so the inner accelerated proximal-gradient solver works in θ and its
prox is the ordinary group soft-threshold.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .design import DesignSystem

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, kkt_residual: float):
        super().__init__(message)
        self.kkt_residual = kkt_residual


@dataclass(frozen=True)
class PenaltyConfig:
    tau: float
    effective_level: float
    max_dc_iters: int = 20
    max_inner_iters: int = 20_000
    kkt_tol: float = 1e-6
    dc_stabilization: int = 2
    # converts effective_level into response units; see tuning.level_unit
    level_scale: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.effective_level < 0:
            raise ValueError("effective_level must be >= 0")
        if not self.level_scale > 0:
            raise ValueError("level_scale must be positive")

    @property
    def lam(self) -> float:
        return self.effective_level * self.tau

    @property
    def block_weight(self) -> float:
        """Group-LASSO weight on a penalized block, in response units."""
        return self.effective_level * self.level_scale


@dataclass
class SelectionResult:
    gamma_star: np.ndarray
    active_set: np.ndarray
    weighted_block_norms: np.ndarray
    objective_trace: list[float]
    inner_iterations: list[int]
    converged: bool
    config: PenaltyConfig
    weights_trace: list[np.ndarray] = field(default_factory=list)

    @property
    def dc_iterations(self) -> int:
        return len(self.inner_iterations)


def tlp(x, tau: float):
    if not tau > 0:
        raise ValueError("tau must be positive")
    return np.minimum(np.abs(x) / tau, 1.0)


def weighted_block_norms(system: DesignSystem, gamma: np.ndarray) -> np.ndarray:
    K = system.basis_count
    G = gamma.reshape(system.block_count, K)
    q = np.einsum("ja,jab,jb->j", G, system.block_grams, G)
    return np.sqrt(np.clip(q, 0.0, None))


def penalized_objective(system: DesignSystem, gamma: np.ndarray, config: PenaltyConfig) -> float:
    r = system.response - system.design @ gamma
    pen = tlp(weighted_block_norms(system, gamma), config.tau).sum()
    return float(0.5 * r @ r + config.lam * config.level_scale * pen)


def weighted_group_prox(v: np.ndarray, W: np.ndarray, threshold: float) -> np.ndarray:
    """argmin_x ½‖x − v‖² + threshold·sqrt(xᵀWx) for PSD W.

    With W = Q diag(w) Qᵀ the minimizer is x = Q diag(1/(1 + a w)) Qᵀ v, where
    a = threshold / sqrt(xᵀWx) solves a monotone scalar equation.
    """
    v = np.asarray(v, dtype=float)
    if threshold <= 0 or not np.any(v):
        return v.copy()
    w, Q = np.linalg.eigh(0.5 * (W + W.T))
    pos = w > 1e-14 * max(w.max(), 1e-300)
    if not pos.any():
        return v.copy()
    c = Q.T @ v
    cp, wp = c[pos], w[pos]
    z = c.copy()
    # the penalty is flat along null(W); the range part vanishes when its
    # whitened norm is within the threshold
    if np.sum(cp**2 / wp) <= threshold**2:
        z[pos] = 0.0
        return Q @ z

    def excess(a):
        zp = cp / (1.0 + a * wp)
        return a * np.sqrt(np.sum(wp * zp**2)) - threshold

    hi = 1.0
    while excess(hi) < 0:
        hi *= 2.0
    a = optimize.brentq(excess, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                        maxiter=500)
    z[pos] = cp / (1.0 + a * wp)
    return Q @ z


def group_soft_threshold(v: np.ndarray, threshold: float) -> np.ndarray:
    nrm = np.linalg.norm(v)
    if nrm <= threshold:
        return np.zeros_like(v)
    return (1.0 - threshold / nrm) * v


def block_factors(system: DesignSystem) -> np.ndarray:
    """Lower Cholesky factors L_j of each W_j, with an eigenvalue floor."""
    p, K = system.block_count, system.basis_count
    out = np.empty((p, K, K))
    for j in range(p):
        W = system.block_grams[j]
        try:
            out[j] = linalg.cholesky(W, lower=True, check_finite=False)
            if np.min(np.abs(np.diag(out[j]))) > 1e-150:
                continue
        except linalg.LinAlgError:
            pass
        floor = 1e-12 * max(np.trace(W), 1e-300) / K
        w, Q = np.linalg.eigh(0.5 * (W + W.T))
        Wf = (Q * np.maximum(w, floor)) @ Q.T
        out[j] = linalg.cholesky(0.5 * (Wf + Wf.T), lower=True, check_finite=False)
    return out


class WhitenedProblem:
    """The least-squares part in θ-coordinates.

    When there are fewer rows than twice the column count the Gram matrix is
    formed once; otherwise products go through the design, which is cheaper
    for wide (rank-deficient) systems.
    """

    def __init__(self, system: DesignSystem, power_iters: int = 50):
        self.system = system
        p, K = system.block_count, system.basis_count
        self.L = block_factors(system)
        # R̃_j = R_j L_j^{-T}
        Rt = np.empty_like(system.design)
        for j in range(p):
            Rj = system.design[:, j * K:(j + 1) * K]
            Rt[:, j * K:(j + 1) * K] = linalg.solve_triangular(
                self.L[j], Rj.T, lower=True, check_finite=False).T
        Y = system.response
        self._setup(Rt, Rt.T @ Y, float(Y @ Y), p, K, power_iters)

    def _setup(self, design, rhs, yy, p, K, power_iters, gram=None):
        self.p, self.K = p, K
        self.design, self.rhs, self.yy = design, rhs, yy
        n, dim = design.shape
        if gram is None and 2 * n > dim:
            gram = design.T @ design
        self.gram = gram
        self._power_iters = power_iters
        self._lipschitz = None

    @property
    def lipschitz(self) -> float:
        if self._lipschitz is None:
            self._lipschitz = _power_max_eig(self, self._power_iters)
        return self._lipschitz

    def restrict(self, blocks: np.ndarray) -> "WhitenedProblem":
        """The same least-squares problem with every block outside ``blocks`` fixed at zero."""
        cols = (blocks[:, None] * self.K + np.arange(self.K)).ravel()
        sub = object.__new__(WhitenedProblem)
        gram = self.gram[np.ix_(cols, cols)] if self.gram is not None else None
        sub._setup(self.design[:, cols], self.rhs[cols], self.yy, blocks.size, self.K,
                   self._power_iters, gram)
        return sub

    def times(self, z: np.ndarray) -> np.ndarray:
        """Gram-vector product; iterates are block-sparse, so skip zero columns."""
        nz = np.flatnonzero(z)
        dense = nz.size > z.size // 2
        if self.gram is not None:
            return self.gram @ z if dense else self.gram[nz].T @ z[nz]
        Rz = self.design @ z if dense else self.design[:, nz] @ z[nz]
        return self.design.T @ Rz

    def to_theta(self, gamma: np.ndarray) -> np.ndarray:
        G = gamma.reshape(self.p, self.K)
        return np.einsum("jba,jb->ja", self.L, G).ravel()   # L_jᵀ γ_j

    def to_gamma(self, theta: np.ndarray) -> np.ndarray:
        T = theta.reshape(self.p, self.K)
        out = np.empty_like(T)
        for j in range(self.p):
            if np.any(T[j]):
                out[j] = linalg.solve_triangular(self.L[j], T[j], trans="T", lower=True,
                                                 check_finite=False)
            else:
                out[j] = 0.0
        return out.ravel()

    def smooth(self, theta, g_theta=None) -> float:
        Gt = self.times(theta) if g_theta is None else g_theta
        return 0.5 * self.yy - self.rhs @ theta + 0.5 * theta @ Gt

    def gradient(self, theta) -> np.ndarray:
        return self.times(theta) - self.rhs


def _power_max_eig(prob: "WhitenedProblem", iters: int) -> float:
    R = prob.design
    if not np.any(R):
        return 1.0
    x = np.ones(R.shape[1]) / np.sqrt(R.shape[1])
    lam = 0.0
    for _ in range(iters):
        y = prob.times(x)
        nrm = np.linalg.norm(y)
        if nrm == 0:
            break
        lam = float(x @ y)
        x = y / nrm
    # Power iteration underestimates; the trace caps it from above.
    trace = float(np.einsum("ij,ij->", R, R))
    return min(max(lam, float(x @ prob.times(x))) / 0.99, trace) if lam > 0 else trace


def _group_objective(prob: WhitenedProblem, theta, weights) -> float:
    T = theta.reshape(prob.p, prob.K)
    return prob.smooth(theta) + float(weights @ np.linalg.norm(T, axis=1))


def _kkt_residual(prob: WhitenedProblem, theta, weights, grad=None) -> float:
    g = (prob.gradient(theta) if grad is None else grad).reshape(prob.p, prob.K)
    T = theta.reshape(prob.p, prob.K)
    nrm = np.linalg.norm(T, axis=1)
    nz = nrm > 0
    active = np.linalg.norm(g[nz] + (weights[nz] / nrm[nz])[:, None] * T[nz], axis=1)
    inactive = np.linalg.norm(g[~nz], axis=1) - weights[~nz]
    return float(max(active.max(initial=0.0), inactive.max(initial=0.0)))


def _group_prox(v: np.ndarray, thresholds: np.ndarray, K: int) -> np.ndarray:
    Z = v.reshape(-1, K)
    nrm = np.linalg.norm(Z, axis=1)
    scale = np.where(nrm > thresholds, 1.0 - thresholds / np.where(nrm > 0, nrm, 1.0), 0.0)
    return (Z * scale[:, None]).ravel()


def _fista(prob: WhitenedProblem, weights: np.ndarray, theta0: np.ndarray,
           kkt_target: float, max_iters: int):
    """Monotone accelerated proximal gradient (FISTA) with restarts.

    The step starts at 1/L and halves whenever the quadratic upper bound
    fails. Momentum restarts whenever a trial point would raise the objective.
    Stops once the KKT residual is below ``kkt_target``.
    """
    K = prob.K
    step = 1.0 / prob.lipschitz
    slack = 1e-13 * prob.yy       # Gram-form round-off
    x = theta0.copy()
    Gx = prob.times(x)
    fx = prob.smooth(x, Gx) + float(weights @ np.linalg.norm(x.reshape(-1, K), axis=1))
    y, Gy, t = x, Gx, 1.0
    for it in range(1, max_iters + 1):
        grad_y = Gy - prob.rhs
        fy = prob.smooth(y, Gy)
        while True:
            z = _group_prox(y - step * grad_y, step * weights, K)
            Gz = prob.times(z)
            d = z - y
            if (prob.smooth(z, Gz) <= fy + grad_y @ d + (d @ d) / (2 * step) + slack
                    or step < 1e-12 / prob.lipschitz):
                break
            step *= 0.5
        fz = prob.smooth(z, Gz) + float(weights @ np.linalg.norm(z.reshape(-1, K), axis=1))
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        # after a restart y = x, and a plain proximal step from x is a descent
        # step; accept it even if round-off makes fz look marginally larger
        if fz <= fx or t == 1.0:
            mom = (t - 1.0) / t_next
            y, Gy = z + mom * (z - x), Gz + mom * (Gz - Gx)
            x, Gx, fx, t = z, Gz, fz, t_next
        else:
            y, Gy, t = x, Gx, 1.0
        kkt = _kkt_residual(prob, x, weights, Gx - prob.rhs)
        if kkt <= kkt_target:
            return x, it, kkt
    kkt = _kkt_residual(prob, x, weights, Gx - prob.rhs)
    raise ConvergenceError(
        f"group LASSO did not converge in {max_iters} iterations "
        f"(KKT residual {kkt:.3e})", kkt)


def _solve_theta(prob: WhitenedProblem, weights: np.ndarray, theta0: np.ndarray,
                 config: PenaltyConfig):
    """Working-set driver around the accelerated solver.

    Solves on the blocks that are nonzero or violate their KKT condition,
    then checks the full problem and grows the set until no block outside it
    violates. Returns (θ, total iterations, full KKT residual).
    """
    p, K = prob.p, prob.K
    target = config.kkt_tol * np.sqrt(prob.yy)
    x = theta0.copy()
    work = np.linalg.norm(x.reshape(p, K), axis=1) > 0
    used, solved = 0, False
    while True:
        grad = prob.gradient(x)
        kkt = _kkt_residual(prob, x, weights, grad)
        if kkt <= target:
            return x, used, kkt
        gnorm = np.linalg.norm(grad.reshape(p, K), axis=1)
        grow = ~work & (gnorm - weights > target)
        budget = config.max_inner_iters - used
        if budget <= 0:
            raise ConvergenceError(
                f"group LASSO did not converge in {config.max_inner_iters} iterations "
                f"(KKT residual {kkt:.3e})", kkt)
        if solved and not grow.any():
            # the restricted solve met its tolerance but the full residual
            # disagrees by round-off; finish on the full problem
            x, its, kkt = _fista(prob, weights, x, target, budget)
            return x, used + its, kkt
        work |= grow
        blocks = np.flatnonzero(work)
        cols = (blocks[:, None] * K + np.arange(K)).ravel()
        try:
            xs, its, _ = _fista(prob.restrict(blocks), weights[blocks], x[cols], target, budget)
        except ConvergenceError as err:
            raise ConvergenceError(
                f"group LASSO did not converge in {config.max_inner_iters} iterations "
                f"(KKT residual {err.kkt_residual:.3e})", err.kkt_residual) from None
        used += its
        solved = True
        x = np.zeros_like(x)
        x[cols] = xs


def group_lasso_solve(system: DesignSystem, per_block_weights, warm_start=None,
                      config: PenaltyConfig | None = None,
                      problem: WhitenedProblem | None = None) -> np.ndarray:
    """Minimize ½Q_n(γ) + Σ_j w_j sqrt(γ_jᵀW_jγ_j); returns γ."""
    config = config or PenaltyConfig(tau=1.0, effective_level=0.0)
    weights = np.asarray(per_block_weights, dtype=float)
    if np.any(weights < 0):
        raise ValueError("block weights must be nonnegative")
    prob = problem or WhitenedProblem(system)
    theta0 = np.zeros(system.design.shape[1]) if warm_start is None else prob.to_theta(warm_start)
    theta, _, _ = _solve_theta(prob, weights, theta0, config)
    return prob.to_gamma(theta)


def dc_solve(system: DesignSystem, config: PenaltyConfig,
             problem: WhitenedProblem | None = None) -> SelectionResult:
    """Difference-of-convex iterations for the TLP-penalized objective, from γ = 0."""
    prob = problem or WhitenedProblem(system)
    p, K = prob.p, prob.K
    theta = np.zeros(p * K)
    trace = [penalized_objective(system, np.zeros(p * K), config)]
    inner, weights_trace = [], []
    run = 0
    converged = False
    for _ in range(config.max_dc_iters + 1):
        norms = np.linalg.norm(theta.reshape(p, K), axis=1)
        weights = config.block_weight * (norms <= config.tau)
        run = run + 1 if weights_trace and np.array_equal(weights, weights_trace[-1]) else 1
        # an unchanged weight vector reposes the problem just solved
        if run >= config.dc_stabilization and weights_trace:
            converged = True
            break
        if len(inner) == config.max_dc_iters:
            break
        theta, its, _ = _solve_theta(prob, weights, theta, config)
        inner.append(its)
        weights_trace.append(weights)
        trace.append(penalized_objective(system, prob.to_gamma(theta), config))
    gamma = prob.to_gamma(theta)
    block_norms = np.linalg.norm(theta.reshape(p, K), axis=1)
    if any(b > a + 1e-10 * max(1.0, abs(a)) for a, b in zip(trace, trace[1:])):
        log.warning("DC objective increased: %s", trace)
    return SelectionResult(gamma, np.flatnonzero(block_norms > 0), block_norms, trace,
                           inner, converged, config, weights_trace)


@dataclass
class KKTReport:
    active_ok: bool
    inactive_ok: bool
    worst_residuals: dict


def kkt_check(system: DesignSystem, gamma: np.ndarray, config: PenaltyConfig,
              tol: float = 1e-5) -> KKTReport:
    """Local-optimality diagnostics for the TLP objective at γ.

    Blocks with weighted norm above τ need a vanishing score; zero blocks need
    the whitened score ‖L_j⁻¹ c_j‖ ≤ λ/τ (times level_scale). Blocks strictly between need
    c_j = −(λ/τ) W_j γ_j / ‖γ_j‖_W. Scores are compared in whitened units.
    The W-weighted form sqrt(c_jᵀW_jc_j) is reported alongside.
    """
    p, K = system.block_count, system.basis_count
    L = block_factors(system)
    c = -(system.design.T @ (system.response - system.design @ gamma)).reshape(p, K)
    G = gamma.reshape(p, K)
    norms = weighted_block_norms(system, gamma)
    whitened = np.array([linalg.solve_triangular(L[j], c[j], lower=True) for j in range(p)])
    theta = np.einsum("jba,jb->ja", L, G)
    level = config.block_weight
    active_worst = inactive_worst = middle_worst = 0.0
    for j in range(p):
        if norms[j] > config.tau:
            active_worst = max(active_worst, np.linalg.norm(whitened[j]))
        elif norms[j] == 0:
            inactive_worst = max(inactive_worst, np.linalg.norm(whitened[j]) - level)
        else:
            nt = np.linalg.norm(theta[j])
            middle_worst = max(middle_worst, np.linalg.norm(whitened[j] + level * theta[j] / nt))
    weighted_dual = np.sqrt(np.clip(np.einsum("ja,jab,jb->j", c, system.block_grams, c), 0, None))
    zero = norms == 0
    return KKTReport(
        active_ok=bool(active_worst <= tol and middle_worst <= tol),
        inactive_ok=bool(inactive_worst <= tol),
        worst_residuals={
            "active_score": float(active_worst),
            "penalized_nonzero": float(middle_worst),
            "inactive_excess": float(inactive_worst),
            "inactive_weighted_dual_max": float(weighted_dual[zero].max()) if zero.any() else 0.0,
            "raw_score_max": float(np.linalg.norm(c, axis=1).max()),
        },
    )


def max_block_gradient(system: DesignSystem, problem: WhitenedProblem | None = None) -> float:
    """Largest whitened block score at γ = 0, the smallest level giving γ* = 0."""
    prob = problem or WhitenedProblem(system)
    return float(np.linalg.norm(prob.rhs.reshape(prob.p, prob.K), axis=1).max())
