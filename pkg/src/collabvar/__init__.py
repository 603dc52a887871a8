"""Collaborative VAR forecasting with privacy mechanisms and breach analysis."""

__version__ = "0.1.0"

from collabvar.var_core import (
    LagEmbedding,
    TimeSeriesPanel,
    VarModel,
    build_lag_embedding,
    companion_spectral_radius,
    fit_ar_baseline,
    forecast,
    generate_stationary_coefficients,
    simulate_var,
)

__all__ = [
    "LagEmbedding",
    "TimeSeriesPanel",
    "VarModel",
    "build_lag_embedding",
    "companion_spectral_radius",
    "fit_ar_baseline",
    "forecast",
    "generate_stationary_coefficients",
    "simulate_var",
]
