import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splinebeta.spline_basis import (basis_derivative_matrix, basis_matrix, block_basis_matrix,
                                     evaluate_basis, evaluate_basis_derivative, gram_integral,
                                     make_uniform_basis)


def test_no_interior_knots_for_minimal_cubic():
    b = make_uniform_basis(3, 4, 1.0)
    assert b.interior_knot_count == 0
    assert b.extended_knots.tolist() == [0, 0, 0, 0, 1, 1, 1, 1]


def test_degree_zero_indicators():
    b = make_uniform_basis(0, 2, 1.0)
    assert b.interior_knots.tolist() == [0.5]
    assert evaluate_basis(b, 0.2).tolist() == [1.0, 0.0]
    assert evaluate_basis(b, 0.5).tolist() == [0.0, 1.0]
    assert evaluate_basis(b, 1.0).tolist() == [0.0, 1.0]


def test_linear_hats():
    b = make_uniform_basis(1, 3, 1.0)
    for peak, k in ((0.0, 0), (0.5, 1), (1.0, 2)):
        v = evaluate_basis(b, peak)
        assert v[k] == pytest.approx(1.0)
    assert np.allclose(evaluate_basis(b, 0.25), [0.5, 0.5, 0.0])
    assert np.allclose(evaluate_basis_derivative(b, 0.25), [-2.0, 2.0, 0.0])


def test_partition_of_unity_on_fine_grid():
    b = make_uniform_basis(3, 12, 21 / 252)
    t = np.linspace(0, b.horizon, 10_001)
    assert np.max(np.abs(basis_matrix(b, t).sum(axis=1) - 1)) <= 1e-12


def test_clamped_endpoints():
    b = make_uniform_basis(3, 8, 2.0)
    assert evaluate_basis(b, 0.0)[0] == 1.0
    assert evaluate_basis(b, 2.0)[-1] == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(K=st.integers(4, 14), s=st.floats(0.0, 1.0))
def test_derivative_relative_fd(K, s):
    b = make_uniform_basis(3, K, 1.0)
    h = 1e-5
    t = min(max(s, 2 * h), 1 - 2 * h)
    knots = b.extended_knots
    if np.min(np.abs(knots - t)) < 10 * h:
        return
    fd = (basis_matrix(b, [t + h]) - basis_matrix(b, [t - h]))[0] / (2 * h)
    d = evaluate_basis_derivative(b, t)
    assert np.allclose(d, fd, rtol=1e-6, atol=1e-6 * np.abs(d).max())


def test_block_basis_matrix():
    b = make_uniform_basis(3, 5, 1.0)
    assert np.array_equal(block_basis_matrix(b, 0.3, 1), evaluate_basis(b, 0.3)[None])
    M = block_basis_matrix(b, 0.0, 2)
    assert M.shape == (2, 10)
    assert M[0, 0] == 1 and M[1, 5] == 1
    assert np.array_equal(M[0, :5], M[1, 5:])
    gamma = np.zeros(10)
    gamma[5 + 2] = 1.0
    out = block_basis_matrix(b, 0.4, 2) @ gamma
    assert out[0] == 0 and out[1] == evaluate_basis(b, 0.4)[2]


def test_gram_integral_matches_quadrature():
    from scipy.integrate import quad
    b = make_uniform_basis(3, 6, 1.0)
    G = gram_integral(b, 20_001)
    val = quad(lambda t: evaluate_basis(b, t)[1] * evaluate_basis(b, t)[2], 0, 1,
               points=b.interior_knots, epsabs=1e-13)[0]
    assert G[1, 2] == pytest.approx(val, rel=1e-6)
    assert np.linalg.eigvalsh(G).min() > 0


@pytest.mark.parametrize("args", [(3, 3, 1.0), (-1, 4, 1.0), (3, 4, 0.0)])
def test_invalid_basis(args):
    with pytest.raises(ValueError):
        make_uniform_basis(*args)


def test_times_outside_domain_rejected():
    b = make_uniform_basis(3, 4, 1.0)
    with pytest.raises(ValueError):
        basis_matrix(b, [1.5])
    with pytest.raises(ValueError):
        basis_derivative_matrix(make_uniform_basis(0, 2, 1.0), [0.3])
