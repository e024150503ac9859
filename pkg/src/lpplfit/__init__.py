"""Log-periodic power law (JLS) calibration toolkit.

Fits ``A + B*tau**m + C*tau**m*cos(omega*ln(tau) + phi)`` with ``tau = tc - t``
to windows of a univariate series and aggregates crash-time estimates over
window ensembles.
"""
from .ensemble import (
    EnsembleConfig,
    EnsembleSummary,
    extrapolation_band,
    generate_windows,
    run_ensemble,
    scan_t2,
    tc_density,
    tc_quantiles,
)
from .errors import LPPLError
from .model import LinearParams, NonlinearParams, lppl_value, objective, residual_jacobian, slave_linear
from .optimizer import FitConfig, FitResult, SearchBounds, fit_window, levenberg_marquardt, taboo_search
from .synth import SynthSpec, generate
from .timeseries import (
    ColumnSpec,
    TimeSeries,
    Window,
    moving_average,
    parse_csv,
    slice_window,
    to_decimal_years,
)

__all__ = [
    "ColumnSpec", "EnsembleConfig", "EnsembleSummary", "FitConfig", "FitResult",
    "LPPLError", "LinearParams", "NonlinearParams", "SearchBounds", "SynthSpec",
    "TimeSeries", "Window", "extrapolation_band", "fit_window", "generate",
    "generate_windows", "levenberg_marquardt", "lppl_value", "moving_average",
    "objective", "parse_csv", "residual_jacobian", "run_ensemble", "scan_t2",
    "slave_linear", "slice_window", "taboo_search", "tc_density", "tc_quantiles",
    "to_decimal_years",
]
