"""Log-linear bilateral gravity model with origin, destination and year
fixed effects, estimated by ordinary least squares.

Response is ``log(1 + T[t+1])``; regressors are the bilateral GTI block, the
unilateral x destination GTI block, log GDP and log population of origin and
destination, and one dummy per fixed-effect level except the first of each
family, which is absorbed by the intercept.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError, ShapeError, UnderdeterminedError
from .panel import FeatureLayout, FeatureRow, PairSeries

log = logging.getLogger(__name__)

NUMERIC_COLUMNS = ("log_gdp_origin", "log_pop_origin", "log_gdp_dest", "log_pop_dest")
DEPENDENCE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class GravityDesign:
    x: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...]
    #: (column, reason) for columns removed while building the design
    dropped: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True, eq=False)
class GravityFit:
    columns: tuple[str, ...]
    coefficients: np.ndarray
    residual_std_error: float
    dropped: tuple[tuple[str, str], ...] = ()

    def coefficient(self, name: str) -> float:
        try:
            return float(self.coefficients[self.columns.index(name)])
        except ValueError:
            return 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("column", "coefficient"))
            for name, beta in zip(self.columns, self.coefficients):
                w.writerow((name, repr(float(beta))))

    @classmethod
    def from_csv(cls, path) -> "GravityFit":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls(tuple(r["column"] for r in rows), np.array([float(r["coefficient"]) for r in rows]), float("nan"))


def full_column_names(layout: FeatureLayout) -> list[str]:
    names = ["intercept", *NUMERIC_COLUMNS]
    names += [f"gti_bi[{k}]" for k in range(layout.n_bi)]
    names += [f"gti_uni_x_dest[{k}]" for k in range(layout.n_uni)]
    names += [f"origin[{c}]" for c in layout.origins]
    names += [f"dest[{c}]" for c in layout.destinations]
    names += [f"year[{y}]" for y in layout.years]
    return names


def baseline_columns(layout: FeatureLayout) -> set[str]:
    out = set()
    if layout.origins:
        out.add(f"origin[{layout.origins[0]}]")
    if layout.destinations:
        out.add(f"dest[{layout.destinations[0]}]")
    if layout.years:
        out.add(f"year[{layout.years[0]}]")
    return out


def full_matrix(rows: Sequence[FeatureRow], layout: FeatureLayout) -> np.ndarray:
    """Regressor matrix with every fixed-effect level, columns per :func:`full_column_names`."""
    out = np.empty((len(rows), len(full_column_names(layout))))
    for r, row in enumerate(rows):
        if row.gti_bilateral.size != layout.n_bi or row.gti_interaction.size != layout.n_uni:
            raise ShapeError("feature row GTI widths do not match the design layout")
        gdp_pop = np.array([row.gdp_origin, row.pop_origin, row.gdp_dest, row.pop_dest])
        if np.any(gdp_pop <= 0):
            raise DataError(f"nonpositive GDP or population for {row.origin}->{row.destination} in {row.year}")
        out[r] = np.concatenate(
            [
                [1.0],
                np.log(gdp_pop),
                row.gti_bilateral,
                row.gti_interaction,
                row.onehot_origin,
                row.onehot_dest,
                row.onehot_year,
            ]
        )
    return out


def response(targets) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.float64)
    if np.any(targets < 0):
        raise DataError("flows must be nonnegative")
    return np.log1p(targets)


def inverse_response(linear) -> np.ndarray:
    """``exp(linear) - 1`` clamped at zero."""
    return np.maximum(np.expm1(np.asarray(linear, dtype=np.float64)), 0.0)


def build_design(rows: Sequence[FeatureRow], targets, layout: FeatureLayout) -> GravityDesign:
    names = full_column_names(layout)
    x = full_matrix(rows, layout)
    y = response(targets)
    if y.shape != (len(rows),):
        raise ShapeError("one target per feature row required")
    baseline = baseline_columns(layout)
    keep, dropped = [], []
    for k, name in enumerate(names):
        if name in baseline:
            dropped.append((name, "baseline level"))
        elif name != "intercept" and not np.any(x[:, k]):
            dropped.append((name, "identically zero"))
        else:
            keep.append(k)
    return GravityDesign(x[:, keep], y, tuple(names[k] for k in keep), tuple(dropped))


def design_from_series(collection: Sequence[PairSeries]) -> GravityDesign:
    if not collection:
        raise DataError("no series to build a gravity design from")
    rows = [r for s in collection for r in s.rows]
    targets = np.concatenate([s.targets for s in collection])
    return build_design(rows, targets, collection[0].layout)


def _independent_columns(x: np.ndarray, tol: float = DEPENDENCE_TOL) -> list[int]:
    """Greedy left-to-right screen keeping columns not in the span of earlier ones.

    Runs on the triangular factor of the equilibrated matrix, which has the
    same column dependencies as ``x`` but only ``p`` rows.
    """
    norms = np.linalg.norm(x, axis=0)
    live = np.flatnonzero(norms > 0)
    if live.size == 0:
        return []
    r = np.linalg.qr(x[:, live] / norms[live], mode="r")
    basis = np.zeros((r.shape[0], live.size))
    m = 0
    keep = []
    for j, k in enumerate(live):
        v = r[:, j] / np.linalg.norm(r[:, j])
        for _ in range(2):  # second pass restores orthogonality lost to cancellation
            v = v - basis[:, :m] @ (basis[:, :m].T @ v)
        rn = np.linalg.norm(v)
        if rn > tol:
            basis[:, m] = v / rn
            m += 1
            keep.append(int(k))
    return keep


def fit(design: GravityDesign) -> GravityFit:
    """Least squares by Householder QR on column-equilibrated regressors."""
    n, p = design.x.shape
    if n < p:
        raise UnderdeterminedError(f"{n} rows cannot identify {p} columns")
    keep = _independent_columns(design.x)
    dropped = list(design.dropped)
    for k in range(p):
        if k not in keep:
            dropped.append((design.columns[k], "linearly dependent"))
            log.warning("gravity design column %s is linearly dependent; dropped", design.columns[k])
    x = design.x[:, keep]
    scale = np.linalg.norm(x, axis=0)
    q, r = np.linalg.qr(x / scale)
    beta = np.linalg.solve(r, q.T @ design.y) / scale
    resid = design.y - x @ beta
    dof = max(n - len(keep), 1)
    return GravityFit(
        columns=tuple(design.columns[k] for k in keep),
        coefficients=beta,
        residual_std_error=float(np.sqrt(resid @ resid / dof)),
        dropped=tuple(dropped),
    )


_FE = re.compile(r"^(origin|dest|year)\[")


def linear_predictor(fit_: GravityFit, rows: Sequence[FeatureRow], layout: FeatureLayout) -> np.ndarray:
    names = full_column_names(layout)
    index = {name: k for k, name in enumerate(names)}
    for name in fit_.columns:
        if name not in index:
            raise ShapeError(f"fitted column {name!r} not present in the forecast layout")
    x = full_matrix(rows, layout)
    fitted = set(fit_.columns)
    unseen = {
        name
        for k, name in enumerate(names)
        if _FE.match(name) and name not in fitted and name not in baseline_columns(layout) and np.any(x[:, k])
    }
    for name in sorted(unseen):
        log.warning("fixed-effect level %s unseen in training; using the baseline level", name)
    cols = [index[name] for name in fit_.columns]
    return x[:, cols] @ fit_.coefficients


def forecast(fit_: GravityFit, rows: Sequence[FeatureRow], layout: FeatureLayout) -> np.ndarray:
    return inverse_response(linear_predictor(fit_, rows, layout))
