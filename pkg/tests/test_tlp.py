import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splinebeta.spline_ols import fit_ols
from splinebeta.tlp import (PenaltyConfig, dc_solve, group_lasso_solve, group_soft_threshold,
                            kkt_check, max_block_gradient, penalized_objective, tlp,
                            weighted_block_norms, weighted_group_prox)
from splinebeta.tuning import penalty_config

from conftest import random_system


def test_tlp_values():
    tau = 0.2
    assert tlp(0.0, tau) == 0
    assert tlp(tau, tau) == 1
    assert tlp(5 * tau, tau) == 1
    assert tlp(-0.1, tau) == pytest.approx(0.5)


def test_objective_edge_cases():
    system = random_system(np.random.default_rng(0), n=50, p=3, K=4)
    cfg = PenaltyConfig(tau=0.1, effective_level=2.0, level_scale=0.3)
    Y = system.response
    assert penalized_objective(system, np.zeros(12), cfg) == pytest.approx(0.5 * Y @ Y)
    g = np.random.default_rng(1).normal(size=12)
    r = Y - system.design @ g
    zero = PenaltyConfig(tau=0.1, effective_level=0.0)
    assert penalized_objective(system, g, zero) == pytest.approx(0.5 * r @ r, rel=1e-14)
    # dense recomputation
    norms = [np.sqrt(g[4 * j:4 * j + 4] @ system.block(j).T @ system.block(j) @ g[4 * j:4 * j + 4])
             for j in range(3)]
    assert np.allclose(weighted_block_norms(system, g), norms)
    expect = 0.5 * r @ r + cfg.lam * cfg.level_scale * sum(min(x / 0.1, 1) for x in norms)
    assert penalized_objective(system, g, cfg) == pytest.approx(expect, rel=1e-13)


def test_prox_closed_forms():
    assert not weighted_group_prox(np.zeros(3), np.eye(3), 1.0).any()
    v = np.array([0.3, -0.4])
    assert not weighted_group_prox(v, np.eye(2), 0.5).any()
    assert np.allclose(weighted_group_prox(v, np.eye(2), 0.2), (1 - 0.2 / 0.5) * v)
    assert np.allclose(group_soft_threshold(v, 0.2), (1 - 0.2 / 0.5) * v)
    # K = 1: minimize ½(x − v)² + t√w|x|, a scalar soft-threshold at t√w
    for v1, w, t in ((2.0, 4.0, 0.5), (0.3, 4.0, 0.5), (-1.5, 0.25, 1.0)):
        x = weighted_group_prox(np.array([v1]), np.array([[w]]), t)[0]
        assert x == pytest.approx(np.sign(v1) * max(abs(v1) - t * np.sqrt(w), 0.0))


def test_prox_singular_weight_matrix():
    # penalty flat along null(W): that component passes through untouched
    W = np.diag([1.0, 0.0])
    x = weighted_group_prox(np.array([0.1, 2.0]), W, 1.0)
    assert np.allclose(x, [0.0, 2.0])


def test_zero_weights_give_ols():
    system = random_system(np.random.default_rng(2), n=80, p=3, K=4)
    cfg = PenaltyConfig(tau=1.0, effective_level=0.0, kkt_tol=1e-10)
    g = group_lasso_solve(system, np.zeros(3), config=cfg)
    assert np.allclose(g, fit_ols(system).gamma_hat, atol=1e-6 * np.abs(g).max())


def test_weights_above_gradient_give_zero():
    system = random_system(np.random.default_rng(3), n=80, p=3, K=4)
    top = max_block_gradient(system)
    assert not group_lasso_solve(system, np.full(3, 1.0001 * top)).any()
    assert group_lasso_solve(system, np.full(3, 0.5 * top)).any()


def test_dc_level_zero_is_ols():
    system = random_system(np.random.default_rng(4), n=80, p=2, K=4)
    res = dc_solve(system, PenaltyConfig(tau=0.1, effective_level=0.0, kkt_tol=1e-10))
    assert res.dc_iterations == 1
    ref = fit_ols(system).gamma_hat
    assert np.allclose(res.gamma_star, ref, atol=1e-6 * np.abs(ref).max())


def test_dc_large_level_empty():
    system = random_system(np.random.default_rng(5), n=80, p=3, K=4)
    level = 2 * max_block_gradient(system)
    res = dc_solve(system, PenaltyConfig(tau=0.1, effective_level=level))
    assert res.active_set.size == 0 and not res.gamma_star.any()
    assert kkt_check(system, res.gamma_star, res.config).inactive_ok


def test_kkt_on_solutions_and_perturbations():
    rng = np.random.default_rng(6)
    system = random_system(rng, n=200, p=6, K=4)
    ols = fit_ols(system).gamma_hat
    rep = kkt_check(system, ols, PenaltyConfig(tau=1e-12, effective_level=0.0))
    assert rep.active_ok and rep.worst_residuals["active_score"] <= 1e-8
    cfg = penalty_config(system.dy, 0.01, 4, 0.05)
    res = dc_solve(system, cfg)
    rep = kkt_check(system, res.gamma_star, cfg)
    assert rep.active_ok and rep.inactive_ok
    if res.active_set.size:
        bad = res.gamma_star.copy()
        bad[res.active_set[0] * 4] += 0.1 * max(1.0, np.abs(bad).max())
        assert not kkt_check(system, bad, cfg).active_ok


def test_selection_recovers_relevant_blocks():
    rng = np.random.default_rng(9)
    n, delta = 1500, 1 / 78
    dx = rng.normal(scale=np.sqrt(delta), size=(n, 8))
    dy = dx[:, :2] @ np.array([1.0, -0.8]) + rng.normal(scale=0.3 * np.sqrt(delta), size=n)
    from splinebeta.design import build_design_from_increments
    from splinebeta.preprocess import no_truncation
    from splinebeta.spline_basis import make_uniform_basis
    system = build_design_from_increments(dy, dx, make_uniform_basis(3, 4, n * delta), delta,
                                          no_truncation(8))
    res = dc_solve(system, penalty_config(dy, 0.01, 4, 0.07))
    assert res.active_set.tolist() == [0, 1]


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_dc_descends_and_stabilizes(seed):
    system = random_system(np.random.default_rng(seed), n=100, p=4, K=4)
    res = dc_solve(system, penalty_config(system.dy, 0.01, 4, 0.03))
    tr = res.objective_trace
    assert tr[-1] <= tr[0] + 1e-12
    assert res.converged


@pytest.mark.parametrize("bad", [dict(tau=0.0, effective_level=1.0),
                                 dict(tau=1.0, effective_level=-1.0),
                                 dict(tau=1.0, effective_level=1.0, level_scale=0.0)])
def test_penalty_config_validation(bad):
    with pytest.raises(ValueError):
        PenaltyConfig(**bad)


@pytest.mark.parametrize("n,p", [(200, 6), (60, 30)])
def test_working_set_matches_full_solve(n, p):
    # (60, 30) has more coefficients than rows, so products go through the design
    from splinebeta.tlp import WhitenedProblem, _fista, _solve_theta
    system = random_system(np.random.default_rng(n + p), n=n, p=p, K=4)
    prob = WhitenedProblem(system)
    assert (prob.gram is None) == (2 * n <= p * 4)
    w = np.full(p, 0.3 * max_block_gradient(system, prob))
    cfg = PenaltyConfig(tau=1.0, effective_level=0.0, kkt_tol=1e-10)
    target = cfg.kkt_tol * np.sqrt(prob.yy)
    ws, _, kkt = _solve_theta(prob, w, np.zeros(p * 4), cfg)
    full, _, _ = _fista(prob, w, np.zeros(p * 4), target, 50_000)
    assert kkt <= target
    obj = [prob.smooth(x) + w @ np.linalg.norm(x.reshape(p, 4), axis=1) for x in (ws, full)]
    assert obj[0] == pytest.approx(obj[1], rel=1e-9, abs=1e-12)
