"""Bilateral migration forecasting with gravity, ANN and LSTM models."""

from .errors import MigcastError
from .metrics import FlowMatrix, cpc, mae, mae_in, r_squared, report, rmse

__version__ = "0.1.0"

__all__ = ["FlowMatrix", "MigcastError", "cpc", "mae", "mae_in", "r_squared", "report", "rmse", "__version__"]
