"""Time-varying betas from high-frequency data via polynomial splines,
with truncated-L1 group selection among many candidate factors."""
from .spline_basis import SplineBasis, basis_matrix, make_uniform_basis
from .preprocess import PricePanel, TruncationSpec, make_truncation, medrv
from .design import DesignSystem, build_design
from .spline_ols import FitResult, SingularDesignError, fit_ols, sandwich_covariance
from .tlp import PenaltyConfig, SelectionResult, dc_solve
from .tuning import CvReport, GridCell, cross_validate
from .simulator import SimulationSpec, simulate_panel
from .csvio import export_csv, ingest_csv

__version__ = "0.1.0"
