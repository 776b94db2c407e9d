import csv
from pathlib import Path

import pytest


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


FLOW_HEADER = ("origin_iso3", "destination_iso3", "year", "migrants")
IND_HEADER = ("iso3", "year", "gdp_usd", "population")
GTI_HEADER = ("origin_iso3", "dest_iso3", "year", "kind", "keyword_index", "value")


def indicator_rows(codes, years, gdp=1e10, pop=1e6):
    return [(c, y, gdp * (1 + k), pop * (1 + k)) for k, c in enumerate(codes) for y in years]


@pytest.fixture
def tiny_inputs(tmp_path):
    """Two origins into ESP/FRA, 2004-2010, with simple integer flows."""
    years = range(2004, 2011)
    flows = []
    for i, o in enumerate(("MAR", "SEN")):
        for j, d in enumerate(("ESP", "FRA")):
            for y in years:
                flows.append((o, d, y, 100 * (i + 1) + 10 * j + (y - 2004)))
    return {
        "flows": write_csv(tmp_path / "flows.csv", FLOW_HEADER, flows),
        "indicators": write_csv(tmp_path / "ind.csv", IND_HEADER, indicator_rows(["MAR", "SEN", "ESP", "FRA"], years)),
    }
