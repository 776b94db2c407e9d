"""Forecast evaluation metrics over origin x destination flow matrices.

All sums run over observed (unmasked) cells only, and MAE/RMSE normalize by
the observed-cell count rather than the dense ``m * n``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateVarianceError, DomainError, ShapeError

NORMALIZATION_NOTE = "MAE and RMSE are averaged over observed origin-destination cells"
METRIC_NAMES = ("cpc", "mae", "rmse", "r2", "mae_in")


@dataclass(frozen=True, eq=False)
class FlowMatrix:
    """Nonnegative ``m x n`` flows with an explicit observation mask.

    Column labels are free-form; multi-year evaluations label columns by
    ``(destination, year)`` so incoming totals stay per destination-year.
    """

    origins: tuple
    destinations: tuple
    entries: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape != (len(self.origins), len(self.destinations)):
            raise ShapeError(
                f"entries shape {entries.shape} does not match {len(self.origins)}x{len(self.destinations)} labels"
            )
        mask = np.ones(entries.shape, dtype=bool) if self.mask is None else np.asarray(self.mask, dtype=bool)
        if mask.shape != entries.shape:
            raise ShapeError("mask shape does not match entries")
        observed = entries[mask]
        if not np.all(np.isfinite(observed)):
            raise DomainError("flow matrix has non-finite observed entries")
        if np.any(observed < 0):
            raise DomainError("flow matrix has negative entries")
        entries = np.where(mask, entries, 0.0)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "origins", tuple(self.origins))
        object.__setattr__(self, "destinations", tuple(self.destinations))

    @classmethod
    def dense(cls, entries) -> "FlowMatrix":
        entries = np.asarray(entries, dtype=np.float64)
        m, n = entries.shape
        return cls(tuple(range(m)), tuple(range(n)), entries)

    @property
    def shape(self):
        return self.entries.shape

    def observed(self) -> np.ndarray:
        return self.entries[self.mask]

    def incoming(self) -> np.ndarray:
        """Column sums over observed cells."""
        return self.entries.sum(axis=0)


def _as_matrix(x) -> FlowMatrix:
    return x if isinstance(x, FlowMatrix) else FlowMatrix.dense(x)


def _aligned(truth, forecast) -> tuple[FlowMatrix, FlowMatrix]:
    truth, forecast = _as_matrix(truth), _as_matrix(forecast)
    if truth.shape != forecast.shape:
        raise ShapeError(f"shape mismatch: {truth.shape} vs {forecast.shape}")
    if not np.array_equal(truth.mask, forecast.mask):
        raise ShapeError("truth and forecast masks differ")
    if not truth.mask.any():
        raise ShapeError("no observed cells to evaluate")
    return truth, forecast


def cpc(truth, forecast) -> float:
    """Common part of commuters; 1 when both matrices are all zero."""
    truth, forecast = _aligned(truth, forecast)
    t, f = truth.observed(), forecast.observed()
    total = t.sum() + f.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.minimum(t, f).sum() / total)


def mae(truth, forecast) -> float:
    truth, forecast = _aligned(truth, forecast)
    return float(np.mean(np.abs(truth.observed() - forecast.observed())))


def rmse(truth, forecast) -> float:
    truth, forecast = _aligned(truth, forecast)
    return float(np.sqrt(np.mean((truth.observed() - forecast.observed()) ** 2)))


def r_squared(truth, forecast) -> float:
    truth, forecast = _aligned(truth, forecast)
    t, f = truth.observed(), forecast.observed()
    ss_tot = np.sum((t - t.mean()) ** 2)
    if ss_tot == 0:
        raise DegenerateVarianceError("r-squared undefined for constant ground truth")
    return float(1.0 - np.sum((t - f) ** 2) / ss_tot)


def mae_in(truth, forecast) -> float:
    """MAE of per-column incoming totals, over columns with any observed cell."""
    truth, forecast = _aligned(truth, forecast)
    cols = truth.mask.any(axis=0)
    return float(np.mean(np.abs(truth.incoming()[cols] - forecast.incoming()[cols])))


@dataclass
class EvaluationReport:
    cpc: float
    mae: float
    rmse: float
    r2: float
    mae_in: float
    #: (column label, ground-truth incoming total, forecast minus truth)
    incoming_errors: list[tuple] = field(default_factory=list)
    normalization: str = NORMALIZATION_NOTE

    def metrics(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def report(truth, forecast) -> EvaluationReport:
    truth, forecast = _aligned(truth, forecast)
    cols = truth.mask.any(axis=0)
    v, v_hat = truth.incoming(), forecast.incoming()
    errors = [(truth.destinations[j], float(v[j]), float(v_hat[j] - v[j])) for j in np.flatnonzero(cols)]
    return EvaluationReport(
        cpc=cpc(truth, forecast),
        mae=mae(truth, forecast),
        rmse=rmse(truth, forecast),
        r2=r_squared(truth, forecast),
        mae_in=mae_in(truth, forecast),
        incoming_errors=errors,
    )


def write_metrics_csv(path, rows: Sequence[tuple[str, str, EvaluationReport]]) -> None:
    """One ``model,split,metric,value`` line per metric."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", "split", "metric", "value"))
        for model, split_name, rep in rows:
            for name, value in rep.metrics().items():
                w.writerow((model, split_name, name, repr(value)))


def read_metrics_csv(path) -> dict[tuple[str, str, str], float]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {(r["model"], r["split"], r["metric"]): float(r["value"]) for r in csv.DictReader(fh)}
