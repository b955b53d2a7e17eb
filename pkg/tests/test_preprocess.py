import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splinebeta.preprocess import (MEDRV_SCALE, DegenerateSeriesError, PricePanel,
                                   TruncationSpec, apply_truncation, default_mode, full_row_mask,
                                   increments, make_truncation, medrv, no_truncation,
                                   spot_threshold)

from conftest import random_panel


def test_constant_and_linear_prices():
    t = np.linspace(0, 1, 11)
    panel = PricePanel(t, np.full(11, 2.0), np.ones((11, 2)))
    dy, dx = increments(panel)
    assert not dy.any() and not dx.any()
    panel = PricePanel(t, 0.3 * t, np.ones((11, 1)))
    assert np.allclose(increments(panel)[0], 0.3 * 0.1)


def test_increments_telescope(rng):
    panel = random_panel(rng)
    _, dx = increments(panel)
    assert np.allclose(dx.sum(axis=0), panel.covariates[-1] - panel.covariates[0], atol=1e-14)


def test_minimal_panel_has_two_increments():
    panel = PricePanel([0.0, 0.5, 1.0], [0, 1, 2], [[0], [1], [0]])
    assert panel.n == 2 and panel.delta == 0.5


@pytest.mark.parametrize("kwargs,msg", [
    (dict(times=[0, 1], response=[0, 1], covariates=[[0], [1]]), "at least 3"),
    (dict(times=[0, 1, 1], response=[0, 1, 2], covariates=[[0], [1], [2]]), "increasing"),
    (dict(times=[0, 1, 3], response=[0, 1, 2], covariates=[[0], [1], [2]]), "uniformly"),
    (dict(times=[0, 1, 2], response=[0, np.nan, 2], covariates=[[0], [1], [2]]), "non-finite"),
])
def test_panel_validation(kwargs, msg):
    with pytest.raises(ValueError, match=msg):
        PricePanel(**kwargs)


def test_medrv_closed_forms():
    assert medrv(np.zeros(10)) == 0.0
    c, n = 0.03, 50
    assert medrv(np.full(n, c)) == pytest.approx(MEDRV_SCALE * n * c**2, rel=1e-14)
    with pytest.raises(ValueError):
        medrv([1.0, 2.0])


def test_medrv_consistency():
    rng = np.random.default_rng(7)
    sigma, n = 0.4, 10_000
    delta = 1.0 / n
    vals = [medrv(rng.normal(scale=sigma * np.sqrt(delta), size=n)) / (n * delta)
            for _ in range(100)]
    assert np.mean(vals) == pytest.approx(sigma**2, rel=0.05)


def test_medrv_robust_to_single_jump():
    rng = np.random.default_rng(8)
    r = rng.normal(scale=0.01, size=2000)
    base = medrv(r)
    r[1000] += 1.0
    assert medrv(r) == pytest.approx(base, rel=0.01)


def test_threshold_formula_and_linearity(rng):
    panel = random_panel(rng, p=4)
    spec = make_truncation(panel, 0.47, 3.0, "componentwise")
    dy, dx = increments(panel)
    expect = 3.0 * panel.delta**0.47 * np.sqrt(medrv(dy) / panel.horizon)
    assert spec.response_threshold == pytest.approx(expect, rel=1e-14)
    doubled = make_truncation(panel, 0.47, 6.0, "componentwise")
    assert doubled.response_threshold == 2 * spec.response_threshold
    assert np.array_equal(doubled.covariate_thresholds, 2 * spec.covariate_thresholds)
    assert spec.scaled(2.0).response_threshold == doubled.response_threshold


def test_threshold_proportional_to_sigma():
    rng = np.random.default_rng(3)
    delta = 1 / (252 * 78)
    z = rng.normal(scale=np.sqrt(delta), size=5000)
    u1 = spot_threshold(z, delta, 0.47, 3.0)
    u2 = spot_threshold(2 * z, delta, 0.47, 3.0)
    assert u2 == pytest.approx(2 * u1, rel=1e-12)
    assert u1 / (3 * delta**0.47) == pytest.approx(1.0, rel=0.05)


def test_degenerate_series():
    with pytest.raises(DegenerateSeriesError):
        spot_threshold(np.zeros(10), 0.1, 0.47, 3.0)


def test_default_mode():
    assert default_mode(10) == "norm"
    assert default_mode(11) == "componentwise"


def test_apply_truncation_flags():
    dy = np.array([0.0, 0.5, 0.01, 0.0])
    dx = np.array([[0.0, 0.0], [0.0, 0.0], [0.0, 0.9], [0.0, 0.0]])
    comp = TruncationSpec(0.47, 3.0, "componentwise", 0.1, np.array([0.1, 0.1]))
    ky, kx = apply_truncation(dy, dx, comp)
    assert ky.tolist() == [True, False, True, True]
    assert kx[:, 1].tolist() == [True, True, False, True]
    assert full_row_mask(ky, kx).tolist() == [True, False, False, True]
    norm = TruncationSpec(0.47, 3.0, "norm", 0.1, np.array([0.1]))
    row, row2 = apply_truncation(dy, dx, norm)
    assert row.tolist() == [True, False, False, True] and np.array_equal(row, row2)
    ky, kx = apply_truncation(dy, dx, no_truncation(2))
    assert ky.all() and kx.all()


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 1000), grow=st.floats(1.0, 5.0))
def test_larger_thresholds_never_drop(seed, grow):
    rng = np.random.default_rng(seed)
    dy = rng.standard_t(3, size=80)
    dx = rng.standard_t(3, size=(80, 3))
    for mode in ("norm", "componentwise"):
        spec = TruncationSpec(0.47, 3.0, mode, 1.0,
                              np.full(1 if mode == "norm" else 3, 1.2))
        a = apply_truncation(dy, dx, spec)
        b = apply_truncation(dy, dx, spec.scaled(grow))
        for x, y in zip(a, b):
            assert np.all(y[x])
