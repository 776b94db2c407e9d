"""Seeded synthetic migration panels in the package's CSV schemas.

Generator
---------
For origins ``i`` and destinations ``j`` each pair has a carrying capacity

    log K_ij = a_i + b_j + u_ij,   a_i ~ N(7, 1), b_j ~ N(0, 0.7), u_ij ~ N(0, 1)

so pair capacities are not additive in origin and destination effects. Flows
follow a lagged logistic dynamic modulated by destination GDP growth::

    x[t+1] = (x[t] + r_ij * x[t] * (1 - x[t] / K_ij)) * (g_j[t+1] / g_j[t]) ** 1.5 * exp(e)

with ``r_ij ~ U(0.2, 0.9)``, ``x[2004] = K_ij * U(0.05, 0.6)``, ``e ~ N(0, noise)``,
and counts rounded to integers. GDP and population drift geometrically per
country. Unilateral GTI follows a slow sinusoid per origin, bilateral GTI
tracks the pair's saturation ``x/K`` and destination GTI a per-pair level, all
clipped to ``[0, 100]``.

Run ``python -m migcast.synthetic OUTDIR`` to write ``flows.csv``,
``indicators.csv`` and ``gti.csv``.
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import numpy as np

DEST_CODES = ("DEU", "ESP", "FRA", "GBR", "ITA", "NLD", "USA", "CAN", "AUS", "BEL")
YEARS = tuple(range(2004, 2016))


def _origin_codes(n: int) -> list[str]:
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    return [f"X{letters[k // 26]}{letters[k % 26]}" for k in range(n)]


def synthetic_panel(
    seed: int = 0,
    n_origins: int = 8,
    n_destinations: int = 5,
    years=YEARS,
    n_keywords: int = 2,
    noise: float = 0.05,
    missing_rate: float = 0.0,
) -> dict[str, list[tuple]]:
    """Return ``{"flows": [...], "indicators": [...], "gti": [...]}`` row lists."""
    if n_destinations > len(DEST_CODES):
        raise ValueError(f"at most {len(DEST_CODES)} destinations supported")
    rng = np.random.default_rng(seed)
    years = list(years)
    origins = _origin_codes(n_origins)
    dests = list(DEST_CODES[:n_destinations])
    n_years = len(years)

    indicators = []
    gdp = {}
    for c in origins + dests:
        rich = c in dests
        g0 = rng.uniform(5e11, 3e12) if rich else rng.uniform(5e9, 3e11)
        p0 = rng.uniform(1e7, 8e7)
        growth = rng.normal(0.02, 0.03, n_years)
        g = g0 * np.exp(np.cumsum(growth))
        p = p0 * np.exp(np.cumsum(rng.normal(0.01, 0.003, n_years)))
        gdp[c] = g
        for k, y in enumerate(years):
            gv, pv = repr(float(g[k])), repr(float(p[k]))
            if missing_rate and rng.random() < missing_rate:
                gv = ""
            indicators.append((c, y, gv, pv))

    a = rng.normal(7.0, 1.0, n_origins)
    b = rng.normal(0.0, 0.7, n_destinations)
    flows, gti = [], []
    uni_phase = rng.uniform(0, 2 * np.pi, (n_origins, n_keywords))
    for i, o in enumerate(origins):
        uni = np.clip(50 + 30 * np.sin(0.5 * np.arange(n_years)[:, None] + uni_phase[i]), 0, 100)
        for j, d in enumerate(dests):
            cap = np.exp(a[i] + b[j] + rng.normal(0.0, 1.0))
            r = rng.uniform(0.2, 0.9)
            x = np.empty(n_years)
            x[0] = cap * rng.uniform(0.05, 0.6)
            for t in range(n_years - 1):
                drive = (gdp[d][t + 1] / gdp[d][t]) ** 1.5
                x[t + 1] = (x[t] + r * x[t] * (1 - x[t] / cap)) * drive * np.exp(rng.normal(0, noise))
            counts = np.maximum(np.rint(x), 0)
            dest_level = rng.uniform(10, 90)
            for t, y in enumerate(years):
                flows.append((o, d, y, int(counts[t])))
                for k in range(n_keywords):
                    gti.append((o, d, y, "uni", k, float(uni[t, k])))
                    bi = np.clip(100 * counts[t] / cap + rng.normal(0, 3), 0, 100)
                    gti.append((o, d, y, "bi", k, float(bi)))
                gti.append((o, d, y, "dest", 0, float(np.clip(dest_level + rng.normal(0, 5), 0, 100))))
    return {"flows": flows, "indicators": indicators, "gti": gti}


def write_synthetic_panel(directory, seed: int = 0, **kwargs) -> dict[str, Path]:
    """Write the three CSV inputs into ``directory``; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data = synthetic_panel(seed, **kwargs)
    headers = {
        "flows": ("origin_iso3", "destination_iso3", "year", "migrants"),
        "indicators": ("iso3", "year", "gdp_usd", "population"),
        "gti": ("origin_iso3", "dest_iso3", "year", "kind", "keyword_index", "value"),
    }
    paths = {}
    for name, header in headers.items():
        path = directory / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in data[name]:
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        paths[name] = path
    return paths


def main(argv=None):
    ap = argparse.ArgumentParser(description="Write a seeded synthetic migration panel.")
    ap.add_argument("outdir")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--origins", type=int, default=8)
    ap.add_argument("--destinations", type=int, default=5)
    args = ap.parse_args(argv)
    paths = write_synthetic_panel(args.outdir, args.seed, n_origins=args.origins, n_destinations=args.destinations)
    for p in paths.values():
        print(p)


if __name__ == "__main__":
    main()
