import numpy as np
import pytest

from splinebeta import bench
from splinebeta.bench import (EstimatorConfig, TruncationConfig, risk_decompose,
                              run_estimation_benchmark, selection_stats, summarize_errors,
                              tdr_fdr_grid)
from splinebeta.design import build_design
from splinebeta.preprocess import make_truncation, no_truncation
from splinebeta.simulator import SimulationSpec, degenerate_spec, simulate_panel
from splinebeta.spline_basis import make_uniform_basis
from splinebeta.spline_ols import fit_ols
from splinebeta.tuning import GridCell


def test_summary_statistics():
    e = np.array([[1.0, -2.0], [3.0, 0.0], [2.0, 2.0]])
    bias, sd, rmse = summarize_errors(e)
    assert np.allclose(bias, [2.0, 0.0])
    assert np.allclose(sd, [1.0, 2.0])
    assert np.allclose(rmse, np.sqrt([14 / 3, 8 / 3]))


def test_selection_rates():
    sel = np.array([[1, 1, 0, 0], [1, 0, 1, 0]], dtype=bool)
    s = selection_stats(sel, 2)
    assert s.relevant_rate == 0.75 and s.irrelevant_rate == 0.25 and s.correct_rate == 0.5
    assert s.per_factor_rate == [1.0, 0.5, 0.5, 0.0]


SMALL = SimulationSpec(p=4, n=400)
ESTIMATORS = [EstimatorConfig("spline", "spline_ols", basis_count=4),
              EstimatorConfig("tlp", "spline_tlp", basis_count=4, effective_level=0.07),
              EstimatorConfig("akx", "akx", window=78)]


def test_noiseless_benchmark_has_no_error():
    spec = degenerate_spec(idio_vol=0.0, n=400)
    rep = run_estimation_benchmark(spec, ESTIMATORS[:1], 3, seed=1,
                                   truncation=TruncationConfig(multiplier=np.inf))
    s = rep.estimation["spline"]
    assert np.allclose(s.bias, 0, atol=1e-8) and np.allclose(s.stdev, 0, atol=1e-8)


def test_report_identical_across_thread_counts():
    a = run_estimation_benchmark(SMALL, ESTIMATORS, 4, seed=3, threads=1)
    b = run_estimation_benchmark(SMALL, ESTIMATORS, 4, seed=3, threads=2)
    assert a.numbers() == b.numbers()
    assert a.selection["tlp"].dc_monotone
    csv = a.estimation_csv().splitlines()
    assert csv[0].startswith("estimator,bias_1,stdev_1,rmse_1")
    assert len(csv) == 4


def test_failures_become_dashes():
    spec = SimulationSpec(p=12, n=200)
    rep = run_estimation_benchmark(spec, [EstimatorConfig("akx", "akx", window=10)], 2, seed=0)
    assert rep.estimation["akx"].failures == 2
    assert rep.estimation_csv().splitlines()[1] == "akx," + ",".join(["-"] * 9)


def test_calibration_freezes_lower_median():
    grid = [GridCell(K, lv) for K in (4, 6) for lv in (0.02, 0.07)]
    cell, picks = bench.calibrate(SMALL, 0.01, grid, 3)
    Ks = sorted(c.basis_count for c in picks)
    levels = sorted(c.effective_level for c in picks)
    assert cell == GridCell(Ks[1], levels[1])


def test_tdr_fdr_extremes():
    rows = tdr_fdr_grid(SimulationSpec(p=6, n=600), [4], [0.0, 1e6], 3, seed=0)
    assert rows[0]["tdr"] == 1.0 and rows[0]["fdr"] == 1.0
    assert rows[1]["tdr"] == 0.0 and rows[1]["fdr"] == 0.0
    assert bench.grid_csv(rows).splitlines()[0] == "basis_count,level,tdr,fdr"


def test_risk_decomposition_edges():
    panel, _ = simulate_panel(degenerate_spec(idio_vol=0.0, n=400), 0)
    basis = make_uniform_basis(3, 4, panel.horizon)
    spec = no_truncation(3)
    fit = fit_ols(build_design(panel, basis, spec))
    rd = risk_decompose(panel, fit, spec)
    assert rd.r_squared == pytest.approx(1.0)
    assert rd.total_qv == pytest.approx(rd.integrated_variance)
    fit.gamma_hat = np.zeros_like(fit.gamma_hat)
    rd = risk_decompose(panel, fit, spec)
    assert rd.r_squared == 0.0 and rd.unexplained_iv == pytest.approx(rd.integrated_variance)


def test_risk_decomposition_truncation_lowers_iv():
    panel, _ = simulate_panel(SimulationSpec(p=3), 2)
    spec = make_truncation(panel)
    fit = fit_ols(build_design(panel, make_uniform_basis(3, 8, panel.horizon), spec))
    rd = risk_decompose(panel, fit, spec, "2020-01")
    assert rd.integrated_variance <= rd.total_qv
    assert 0 < rd.r_squared < 1 and rd.window == "2020-01"


def test_estimator_validation():
    with pytest.raises(ValueError):
        EstimatorConfig("x", "nope")
    with pytest.raises(ValueError):
        EstimatorConfig("x", "spline_ols", basis_count=3)
