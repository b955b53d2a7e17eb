"""Monte Carlo panels from a continuous-time factor model.

Factors follow correlated diffusions with CIR variances and common
compound-Poisson jumps in prices and variances. The first q factors load on
the response through Ornstein-Uhlenbeck betas; the idiosyncratic part is an
independent jump-diffusion. Time is in years.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .preprocess import PricePanel

log = logging.getLogger(__name__)

DELTA_5MIN = 1.0 / (252 * 78)
MONTH = 21.0 / 252.0


def toeplitz_correlation(p: int, r: float) -> np.ndarray:
    if not abs(r) < 1:
        raise ValueError(f"|r| must be < 1, got {r}")
    idx = np.arange(p)
    return float(r) ** np.abs(idx[:, None] - idx[None, :])


def block_latent_correlation(p: int, q: int, latent_dim: int, seed: int,
                             relevant_r: float = 0.15, force_kappa: float | None = None,
                             margin: float = 1e-8) -> tuple[np.ndarray, float]:
    """Relevant block Toeplitz, redundant block LLᵀ + diag(1 − ‖L_i‖²), and the
    largest cross-block scale κ in (0, 1] keeping the Schur complement PD.

    Returns (correlation, kappa).
    """
    if not 1 <= q <= p:
        raise ValueError("need 1 <= q <= p")
    rng = np.random.default_rng(seed)
    m = p - q
    rho11 = toeplitz_correlation(q, relevant_r)
    L = rng.standard_normal((m, latent_dim))
    L *= (rng.uniform(0.0, 0.95, m) / np.linalg.norm(L, axis=1))[:, None]
    rho22 = L @ L.T + np.diag(1.0 - np.sum(L**2, axis=1))
    cross = rng.uniform(-1.0, 1.0, (q, m))
    quad = cross.T @ np.linalg.solve(rho11, cross)

    def ok(kappa):
        return np.linalg.eigvalsh(rho22 - kappa**2 * quad).min() > margin

    if force_kappa is not None:
        kappa = float(force_kappa)
    elif ok(1.0):
        kappa = 1.0
    else:
        if not ok(0.0):
            raise RuntimeError("redundant block is not positive definite")
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if ok(mid) else (lo, mid)
        kappa = lo
    rho = np.empty((p, p))
    rho[:q, :q] = rho11
    rho[q:, q:] = rho22
    rho[:q, q:] = kappa * cross
    rho[q:, :q] = kappa * cross.T
    return rho, kappa


@dataclass
class SimulationSpec:
    """Parameters of the simulated factor model.

    Per-factor values for j > q are drawn per replication from the ``*_range``
    bounds unless given explicitly. Jump magnitudes are means of exponential
    distributions, in multiples of σ_{j,0}·sqrt(Δ) (factors) or σ̃·sqrt(Δ).
    """

    p: int = 3
    q: int = 3
    delta: float = DELTA_5MIN
    n: int = 21 * 78
    # relevant factors: drift, initial variance, CIR (kappa', alpha', v')
    drift: float = 0.05
    var0: float = 0.10
    cir_kappa: float = 5.0
    cir_alpha: float = 0.06
    cir_vol: float = 0.35
    # redundant factors, drawn uniformly per replication
    drift_range: tuple[float, float] = (0.03, 0.07)
    var0_range: tuple[float, float] = (0.06, 0.15)
    cir_kappa_range: tuple[float, float] = (3.0, 5.0)
    cir_alpha_range: tuple[float, float] = (0.04, 0.09)
    cir_vol_range: tuple[float, float] = (0.3, 0.4)
    correlation: str = "toeplitz"
    correlation_r: float = 0.15
    latent_dim: int = 5
    correlation_seed: int = 0
    # common jumps
    jump_intensity: float = 67.0
    jump_up_prob: float = 0.5
    jump_scale: float = 7.0
    var_jump_range: tuple[float, float] = (0.004, 0.005)
    # OU betas
    beta_kappa: float = 2.0
    beta_mean: tuple[float, ...] = (0.7, -0.5, 0.3)
    beta_vol: float = 0.1
    beta0: tuple[float, ...] | None = None
    # idiosyncratic jump-diffusion
    idio_drift: float = 0.0
    idio_vol: float = 0.35
    idio_up_prob: float = 0.5
    idio_jump_scale: float = 14.0
    idio_jump_intensity: float = 67.0
    seed: int = 0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.n < 3:
            raise ValueError("need at least 3 intervals")
        if not 0 <= self.q <= self.p:
            raise ValueError("need 0 <= q <= p")
        if len(self.beta_mean) != self.q:
            raise ValueError("beta_mean needs one entry per relevant factor")
        for name in ("drift_range", "var0_range", "cir_kappa_range", "cir_alpha_range",
                     "cir_vol_range", "var_jump_range"):
            setattr(self, name, tuple(getattr(self, name)))
        self.beta_mean = tuple(self.beta_mean)
        if self.beta0 is not None:
            self.beta0 = tuple(self.beta0)
        feller = 2 * self.cir_kappa * self.cir_alpha >= self.cir_vol**2
        if not feller:
            log.debug("relevant-factor CIR parameters violate the Feller condition")

    @property
    def horizon(self) -> float:
        return self.n * self.delta

    def correlation_matrix(self) -> np.ndarray:
        if self.correlation == "toeplitz":
            return toeplitz_correlation(self.p, self.correlation_r)
        if self.correlation == "block_latent":
            return block_latent_correlation(self.p, self.q, self.latent_dim,
                                            self.correlation_seed, self.correlation_r)[0]
        raise ValueError(f"unknown correlation {self.correlation!r}")

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["units"] = {"delta": "years", "horizon": "years"}
        return d

    @classmethod
    def from_json(cls, data: dict) -> "SimulationSpec":
        data = {k: v for k, v in data.items() if k != "units"}
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**data)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "SimulationSpec":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class SimulationTruth:
    beta_paths: np.ndarray            # (n+1, p) β on the grid; zeros beyond q
    integrated_beta: np.ndarray       # (p,) Σ β_{(i-1)Δ} Δ
    jump_counts: np.ndarray           # (n,) common jumps per interval
    idio_jump_counts: np.ndarray      # (n,) idiosyncratic jumps per interval
    active_set: np.ndarray
    factor_contributions: np.ndarray  # (n, p) β_{j,(i-1)Δ} ΔX_{j,i}
    delta: float
    variances: np.ndarray = field(repr=False)  # (n+1, p) CIR variance paths

    @property
    def horizon(self) -> float:
        return (len(self.beta_paths) - 1) * self.delta

    @property
    def average_beta(self) -> np.ndarray:
        return self.integrated_beta / self.horizon

    @property
    def jump_times(self) -> np.ndarray:
        """Right endpoints of the intervals that contain a common jump."""
        return (np.flatnonzero(self.jump_counts) + 1) * self.delta

    @property
    def idio_jump_times(self) -> np.ndarray:
        return (np.flatnonzero(self.idio_jump_counts) + 1) * self.delta

    def qv_shares(self, dy: np.ndarray, method: str = "covariance") -> np.ndarray:
        """Each factor's share of the realized variance Σ ΔY².

        ``covariance`` allocates Σ β_jΔX_j·ΔY to factor j, so the shares add up
        to the systematic fraction. ``own`` uses Σ (β_jΔX_j)² and ignores the
        cross-factor terms.
        """
        dy = np.asarray(dy, dtype=float)
        fc = self.factor_contributions
        if method == "covariance":
            num = fc.T @ dy
        elif method == "own":
            num = (fc**2).sum(axis=0)
        else:
            raise ValueError(f"unknown method {method!r}")
        return num / np.sum(dy**2)

    def to_json(self) -> dict:
        return {
            "integrated_beta": self.integrated_beta.tolist(),
            "average_beta": self.average_beta.tolist(),
            "jump_count": int(self.jump_counts.sum()),
            "jump_times": self.jump_times.tolist(),
            "idio_jump_times": self.idio_jump_times.tolist(),
            "active_set": self.active_set.tolist(),
        }


def replication_rng(seed: int, replication: int) -> np.random.Generator:
    """Child stream for one replication, independent of how many are run."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replication,)))


def _double_exponential(rng, size, up_prob, mean_up, mean_down):
    up = rng.random(size) < up_prob
    mags = rng.exponential(1.0, size)
    return np.where(up, mags * mean_up, -mags * mean_down)


def simulate_panel(spec: SimulationSpec, replication: int = 0,
                   rng: np.random.Generator | None = None) -> tuple[PricePanel, SimulationTruth]:
    rng = rng or replication_rng(spec.seed, replication)
    p, q, n, dt = spec.p, spec.q, spec.n, spec.delta
    sdt = np.sqrt(dt)

    redundant = p - q
    drift = np.concatenate([np.full(q, spec.drift), rng.uniform(*spec.drift_range, redundant)])
    var0 = np.concatenate([np.full(q, spec.var0), rng.uniform(*spec.var0_range, redundant)])
    kap = np.concatenate([np.full(q, spec.cir_kappa), rng.uniform(*spec.cir_kappa_range, redundant)])
    alp = np.concatenate([np.full(q, spec.cir_alpha), rng.uniform(*spec.cir_alpha_range, redundant)])
    vv = np.concatenate([np.full(q, spec.cir_vol), rng.uniform(*spec.cir_vol_range, redundant)])
    var_jump_mean = rng.uniform(*spec.var_jump_range, p)

    chol = np.linalg.cholesky(spec.correlation_matrix())

    # common jump arrivals (counts per interval) and their sizes
    counts = rng.poisson(spec.jump_intensity * dt, n)
    price_jumps = np.zeros((n, p))
    var_jumps = np.zeros((n, p))
    mean_mag = spec.jump_scale * np.sqrt(var0) * sdt
    for i in np.flatnonzero(counts):
        k = counts[i]
        sizes = _double_exponential(rng, (k, p), spec.jump_up_prob, mean_mag, mean_mag)
        price_jumps[i] = sizes.sum(axis=0)
        var_jumps[i] = (rng.exponential(1.0, (k, p)) * var_jump_mean).sum(axis=0)

    z_price = rng.standard_normal((n, p)) @ chol.T
    z_var = rng.standard_normal((n, p))

    variances = np.empty((n + 1, p))
    variances[0] = var0
    dX = np.empty((n, p))
    v = var0.copy()
    for i in range(n):
        vp = np.maximum(v, 0.0)
        sd = np.sqrt(vp)
        dX[i] = drift * dt + sd * z_price[i] * sdt + price_jumps[i]
        v = v + kap * (alp - vp) * dt + vv * sd * z_var[i] * sdt + var_jumps[i]
        variances[i + 1] = np.maximum(v, 0.0)

    # OU betas by exact transition
    betas = np.zeros((n + 1, p))
    if q:
        mean = np.asarray(spec.beta_mean)
        b = np.asarray(spec.beta0 if spec.beta0 is not None else spec.beta_mean, dtype=float)
        decay = np.exp(-spec.beta_kappa * dt)
        if spec.beta_kappa > 0:
            sd_ou = spec.beta_vol * np.sqrt((1 - decay**2) / (2 * spec.beta_kappa))
        else:
            sd_ou = spec.beta_vol * sdt
        shocks = rng.standard_normal((n, q))
        betas[0, :q] = b
        for i in range(n):
            b = mean + (b - mean) * decay + sd_ou * shocks[i]
            betas[i + 1, :q] = b

    # idiosyncratic part
    idio_counts = rng.poisson(spec.idio_jump_intensity * dt, n)
    idio_jumps = np.zeros(n)
    idio_mag = spec.idio_jump_scale * spec.idio_vol * sdt
    for i in np.flatnonzero(idio_counts):
        idio_jumps[i] = _double_exponential(rng, idio_counts[i], spec.idio_up_prob,
                                            idio_mag, idio_mag).sum()
    dZ = spec.idio_drift * dt + spec.idio_vol * sdt * rng.standard_normal(n) + idio_jumps

    contributions = betas[:-1] * dX
    dY = contributions.sum(axis=1) + dZ

    times = np.arange(n + 1) * dt
    X = np.vstack([np.zeros(p), np.cumsum(dX, axis=0)])
    Y = np.concatenate([[0.0], np.cumsum(dY)])
    panel = PricePanel(times, Y, X, tuple(f"X{j + 1}" for j in range(p)))
    truth = SimulationTruth(
        beta_paths=betas,
        integrated_beta=betas[:-1].sum(axis=0) * dt,
        jump_counts=counts,
        idio_jump_counts=idio_counts,
        active_set=np.arange(q),
        factor_contributions=contributions,
        delta=dt,
        variances=variances,
    )
    return panel, truth


def degenerate_spec(p: int = 3, beta=(0.7, -0.5, 0.3), **overrides) -> SimulationSpec:
    """No jumps, constant variances and constant betas."""
    kw = dict(p=p, q=len(beta), beta_mean=tuple(beta), beta_vol=0.0, cir_vol=0.0,
              cir_vol_range=(0.0, 0.0), cir_kappa=0.0, cir_kappa_range=(0.0, 0.0),
              jump_intensity=0.0, idio_jump_intensity=0.0)
    kw.update(overrides)
    return SimulationSpec(**kw)
