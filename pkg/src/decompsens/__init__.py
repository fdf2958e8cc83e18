"""Disparity decomposition with RMPW weights and marginal-sensitivity-model bounds."""

__version__ = "0.1.0"

from .amplification import CalibrationPoint, ContourGrid, calibrate, contour_grid
from .bootstrap import BootstrapConfig, BootstrapResult, PercentileBootstrap, percentile_bootstrap
from .dataset import DecompositionDataset, RowFilter, Schema, from_arrays, load_csv
from .decomposition import DecompositionEstimate, RMPWDecomposition, decompose
from .exceptions import (
    BootstrapError,
    CellCountError,
    DataError,
    DecompError,
    FitError,
    SeparationError,
)
from .logistic import DesignSpec, LogisticIRLS, fit_logistic
from .sensitivity import (
    CriticalLambda,
    MSMSensitivity,
    SensitivityBounds,
    bounds_at,
    critical_lambda,
    equivalence_critical_lambda,
    extrema,
)
from .synthetic import DgpConfig, SyntheticTruth, generate
from .weights import RMPWWeighter, compute_rmpw, fit_group_propensities

__all__ = [
    "BootstrapConfig", "BootstrapError", "BootstrapResult", "CalibrationPoint", "CellCountError",
    "ContourGrid", "CriticalLambda", "DataError", "DecompError", "DecompositionDataset",
    "DecompositionEstimate", "DesignSpec", "DgpConfig", "FitError", "LogisticIRLS", "MSMSensitivity",
    "PercentileBootstrap", "RMPWDecomposition", "RMPWWeighter", "RowFilter", "Schema",
    "SensitivityBounds", "SeparationError", "SyntheticTruth", "bounds_at", "calibrate",
    "compute_rmpw", "contour_grid", "critical_lambda", "decompose", "equivalence_critical_lambda",
    "extrema", "fit_group_propensities", "fit_logistic", "from_arrays", "generate", "load_csv",
    "percentile_bootstrap",
]
