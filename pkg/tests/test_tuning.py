import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splinebeta.preprocess import PricePanel, make_truncation, no_truncation
from splinebeta.simulator import SimulationSpec, simulate_panel
from splinebeta.tuning import (GridCell, assign_folds, cross_validate, default_grid, make_tau,
                               one_se_choice)

from conftest import random_panel


def test_tau_scaling_and_brownian_level():
    rng = np.random.default_rng(0)
    n = 20_000
    T = 2.0
    dy = rng.normal(scale=np.sqrt(T / n), size=n)
    assert make_tau(dy, 0.02) == 2 * make_tau(dy, 0.01)
    assert make_tau(dy, 0.05) == pytest.approx(0.05 * np.sqrt(T), rel=0.03)
    with pytest.raises(ValueError):
        make_tau(dy, 0.0)


def test_folds_interleaved():
    f = assign_folds(10, 5)
    assert [np.flatnonzero(f == k).tolist() for k in range(5)] == [[0, 5], [1, 6], [2, 7],
                                                                   [3, 8], [4, 9]]
    with pytest.raises(ValueError):
        assign_folds(3, 5)


@settings(max_examples=50)
@given(n=st.integers(2, 500), k=st.integers(2, 10), seed=st.integers(0, 100))
def test_folds_partition(n, k, seed):
    if n < k:
        return
    f = assign_folds(n, k, seed)
    assert f.shape == (n,)
    assert set(np.unique(f)) == set(range(k))
    counts = np.bincount(f, minlength=k)
    assert counts.max() - counts.min() <= 1


def test_one_se_rule():
    grid = [GridCell(4, 0.01), GridCell(4, 0.05), GridCell(8, 0.05), GridCell(4, 0.2)]
    mse = np.array([1.0, 1.05, 1.05, 1.5])
    se = np.array([0.1, 0.1, 0.1, 0.1])
    best, pick = one_se_choice(grid, mse, se, np.ones(4, bool))
    assert best == GridCell(4, 0.01) and pick == GridCell(4, 0.05)
    best, pick = one_se_choice(grid, mse, se, np.array([False, True, True, True]))
    assert best == GridCell(4, 0.05)
    with pytest.raises(ValueError):
        one_se_choice(grid, mse, se, np.zeros(4, bool))


def test_noiseless_cv_prefers_parsimony():
    rng = np.random.default_rng(1)
    n, delta = 400, 1 / 78
    dx = rng.normal(scale=np.sqrt(delta), size=(n, 2))
    dy = dx @ np.array([0.6, -0.2])
    panel = PricePanel(np.arange(n + 1) * delta, np.concatenate([[0], np.cumsum(dy)]),
                       np.vstack([np.zeros(2), np.cumsum(dx, axis=0)]))
    rep = cross_validate(panel, no_truncation(2), penalized=False, grid=[GridCell(4), GridCell(8)])
    assert np.all(rep.per_cell_mse < 1e-25)
    assert rep.chosen_one_se == GridCell(4)


def test_hand_computed_two_fold_mse():
    # K_n = 1 spline of degree 0 is a constant beta; each fold is a ratio fit
    from splinebeta import tuning
    dy = np.array([1.0, 2.0, 2.5, 5.0])
    dx = np.array([[1.0], [1.0], [2.0], [2.0]])
    folds = np.array([0, 1, 0, 1])
    out = tuning._fold_errors(dy, dx, 0.25, no_truncation(1), folds, 0, 1, [0.0], 1.0, 1.0,
                              False, 0)
    b = (1 * 2 + 2 * 5) / (1 + 4)       # fit on rows 1, 3
    expect = np.mean([(1 - b) ** 2, (2.5 - 2 * b) ** 2])
    assert out[0] == pytest.approx(expect, rel=1e-13)


def test_cv_deterministic_and_thread_invariant():
    panel, _ = simulate_panel(SimulationSpec(p=5, n=600), 3)
    spec = make_truncation(panel)
    grid = [GridCell(K, lv) for K in (4, 6) for lv in (0.02, 0.07, 0.3)]
    a = cross_validate(panel, spec, 0.01, grid, seed=2)
    b = cross_validate(panel, spec, 0.01, grid, seed=2, threads=3)
    assert np.array_equal(a.per_fold_mse, b.per_fold_mse, equal_nan=True)
    assert a.chosen_one_se == b.chosen_one_se
    js = a.to_json()
    assert js["grid"][0] == {"basis_count": 4, "effective_level": 0.02}


def test_default_grid_spans_to_empty_model(rng):
    panel = random_panel(rng, n=300, p=4)
    spec = make_truncation(panel)
    grid = default_grid(panel, spec, (4, 6), levels=5)
    assert len(grid) == 10
    lv = sorted({c.effective_level for c in grid})
    assert lv[-1] / lv[0] == pytest.approx(1e3)
