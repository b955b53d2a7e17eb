import numpy as np
import pytest

from splinebeta.design import build_design_from_increments
from splinebeta.preprocess import PricePanel, no_truncation
from splinebeta.spline_basis import make_uniform_basis


def random_system(rng, n=60, p=3, K=4, delta=1.0 / 78, truncation=None):
    """Small regression system with smooth betas and Gaussian increments."""
    dx = rng.normal(scale=np.sqrt(delta), size=(n, p))
    t = np.arange(n) * delta
    beta = np.stack([np.cos(t * (j + 1) / (n * delta)) for j in range(p)], axis=1)
    dy = np.einsum("ij,ij->i", beta, dx) + rng.normal(scale=0.3 * np.sqrt(delta), size=n)
    basis = make_uniform_basis(3, K, n * delta)
    spec = truncation or no_truncation(p)
    return build_design_from_increments(dy, dx, basis, delta, spec)


def random_panel(rng, n=200, p=3, delta=1.0 / 78):
    dx = rng.normal(scale=np.sqrt(delta), size=(n, p))
    dy = dx @ np.linspace(0.8, -0.4, p) + rng.normal(scale=0.5 * np.sqrt(delta), size=n)
    cov = np.vstack([np.zeros(p), np.cumsum(dx, axis=0)])
    resp = np.concatenate([[0.0], np.cumsum(dy)])
    return PricePanel(np.arange(n + 1) * delta, resp, cov)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
