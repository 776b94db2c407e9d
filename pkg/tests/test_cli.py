import csv
import json

import numpy as np
import pytest
from conftest import FLOW_HEADER, IND_HEADER, indicator_rows, write_csv

from migcast import cli, pipeline
from migcast.errors import ParameterError
from migcast.metrics import read_metrics_csv, report
from migcast.neural import ForecastRecord, records_to_matrices
from migcast.panel import CountryCode, FeatureLayout, PairSeries, make_row
from migcast.synthetic import write_synthetic_panel

SPLIT = "train=2004-2012,val=2013,test=2014"


@pytest.fixture(scope="module")
def synthetic(tmp_path_factory):
    root = tmp_path_factory.mktemp("syn")
    paths = write_synthetic_panel(root, 5, n_origins=4, n_destinations=3)
    return {k: str(v) for k, v in paths.items()}


def _data_flags(paths, gti=True):
    flags = ["--flows", paths["flows"], "--indicators", paths["indicators"]]
    return flags + (["--gti", paths["gti"]] if gti else [])


def _read(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- exit codes


def test_bad_config_json_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json", encoding="utf-8")
    assert cli.main(["run", "--config", str(cfg)]) == 2
    assert "invalid JSON" in capsys.readouterr().err


def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"epochs": 3}', encoding="utf-8")
    assert cli.main(["train", "--config", str(cfg)]) == 2
    assert "epochs" in capsys.readouterr().err


def test_bad_set_and_models_exit_2(tiny_inputs):
    flags = ["--flows", str(tiny_inputs["flows"]), "--indicators", str(tiny_inputs["indicators"])]
    assert cli.main(["train", *flags, "--set", "lstm.epochs"]) == 2
    assert cli.main(["train", *flags, "--set", "lstm.epochs=-1"]) == 2
    assert cli.main(["train", *flags, "--models", "svm"]) == 2
    assert cli.main(["train", *flags, "--split", "train=2004-2010,test=2010"]) == 2


def test_missing_input_exits_2(tmp_path):
    assert cli.main(["ingest", "--flows", str(tmp_path / "nope.csv"), "--indicators", str(tmp_path / "x.csv")]) == 2
    assert cli.main(["ingest"]) == 2


def test_bad_data_exits_3(tmp_path, capsys):
    flows = write_csv(tmp_path / "f.csv", FLOW_HEADER, [("MAR", "ESP", 2004, -5)])
    ind = write_csv(tmp_path / "i.csv", IND_HEADER, indicator_rows(["MAR", "ESP"], [2004]))
    assert cli.main(["ingest", "--flows", str(flows), "--indicators", str(ind)]) == 3
    assert "[ingest]" in capsys.readouterr().err


# ---------------------------------------------------------------- ingest / summarize


def test_ingest_prints_report(tiny_inputs, capsys):
    assert cli.main(["ingest", "--flows", str(tiny_inputs["flows"]), "--indicators", str(tiny_inputs["indicators"])]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc


def test_summarize_constant_flows(tmp_path, capsys):
    years = (2004, 2005, 2006)
    flows = write_csv(tmp_path / "f.csv", FLOW_HEADER, [("MAR", "ESP", y, f) for y, f in zip(years, (7, 5, 5))])
    ind = write_csv(tmp_path / "i.csv", IND_HEADER, indicator_rows(["MAR", "ESP"], years))
    assert cli.main(["summarize", "--flows", str(flows), "--indicators", str(ind)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["observations"] == 2 and doc["series"] == 1
    assert doc["mean"] == doc["median"] == doc["maximum"] == 5
    assert doc["share_below_10"] == 1.0


def test_summarize_single_observation():
    layout = FeatureLayout(("MAR",), ("ESP",), (2004,))
    row = make_row(layout, "MAR", "ESP", 2004, gdp_origin=1, gdp_dest=1, pop_origin=1, pop_dest=1, flow_current=7)
    s = PairSeries(CountryCode("MAR"), CountryCode("ESP"), (2004,), (row,), np.array([5.0]), layout)
    doc = pipeline.summarize([s]).as_dict()
    assert doc["observations"] == 1
    assert doc["mean"] == doc["median"] == doc["maximum"] == 5
    with pytest.raises(ParameterError):
        pipeline.summarize([])


# ---------------------------------------------------------------- run


@pytest.fixture(scope="module")
def gravity_run(synthetic, tmp_path_factory):
    out = tmp_path_factory.mktemp("grav")
    code = cli.main(["run", *_data_flags(synthetic), "--models", "gravity", "--split", SPLIT, "--out", str(out)])
    return code, out


def test_gravity_smoke_run(gravity_run):
    code, out = gravity_run
    assert code == 0
    for name in ("comparison.csv", "scatter.csv", "heatmap.csv", "comparison_table.csv", "summary.json"):
        assert (out / name).is_file()
    assert (out / "checkpoints" / "gravity.csv").is_file()
    splits = {r["split"] for r in _read(out / "comparison.csv")}
    assert splits == {"train", "test"}


def test_comparison_matches_scatter(gravity_run):
    _, out = gravity_run
    metrics = read_metrics_csv(out / "comparison.csv")
    rows = _read(out / "scatter.csv")
    for split_name in ("train", "test"):
        recs = [
            ForecastRecord(r["origin"], r["destination"], int(r["year"]), float(r["truth"]), float(r["forecast"]))
            for r in rows
            if r["model"] == "gravity" and r["split"] == split_name
        ]
        rep = report(*records_to_matrices(recs)).metrics()
        for name, value in rep.items():
            assert metrics[("gravity", split_name, name)] == pytest.approx(value, rel=1e-12, abs=1e-12)


def test_heatmap_ordering(gravity_run):
    _, out = gravity_run
    rows = [r for r in _read(out / "heatmap.csv") if r["split"] == "test"]
    totals = {}
    for r in rows:
        totals.setdefault(r["destination"], 0.0)
        totals[r["destination"]] += float(r["truth_incoming"])
    order = list(dict.fromkeys(r["destination"] for r in rows))
    seq = [totals[d] for d in order]
    assert seq == sorted(seq, reverse=True)
    for r in rows:
        diff = float(r["forecast_incoming"]) - float(r["truth_incoming"])
        assert float(r["signed_error"]) == pytest.approx(diff, abs=1e-6)


def test_no_refit_reports_validation(synthetic, tmp_path):
    code = cli.main(["run", *_data_flags(synthetic), "--models", "gravity", "--split", SPLIT, "--no-refit", "--out", str(tmp_path)])
    assert code == 0
    assert {r["split"] for r in _read(tmp_path / "comparison.csv")} == {"train", "validation", "test"}


def test_train_then_evaluate(synthetic, tmp_path, capsys):
    flags = [*_data_flags(synthetic), "--models", "gravity,ann", "--split", SPLIT, "--set", "ann.epochs=3", "--out", str(tmp_path)]
    assert cli.main(["train", *flags]) == 0
    assert (tmp_path / "checkpoints" / "ann.npz").is_file()
    assert cli.main(["evaluate", *flags]) == 0
    models = {r["model"] for r in _read(tmp_path / "comparison.csv")}
    assert models == {"gravity", "ann"}
    assert "wrote" in capsys.readouterr().out


def test_evaluate_without_checkpoints_fails(synthetic, tmp_path):
    code = cli.main(["evaluate", *_data_flags(synthetic), "--models", "lstm", "--split", SPLIT, "--out", str(tmp_path)])
    assert code in (2, 3)


# ---------------------------------------------------------------- gti-build


@pytest.fixture
def gti_inputs(tmp_path):
    flows = write_csv(
        tmp_path / "f.csv", FLOW_HEADER, [(o, "ESP", y, 10) for o in ("MAR", "SEN") for y in (2004, 2005)]
    )
    keywords = write_csv(tmp_path / "kw.csv", ("english", "french", "spanish"), [("visa", "visa", "visa")])
    fixture_rows = []
    for o in ("MAR", "SEN"):
        for kw in ("visa", "visa Spain", "visa Espagne", "visa España", "Spain", "Espagne", "España"):
            fixture_rows += [(kw, o, y, m, 10 + m) for y in (2004, 2005) for m in (1, 6)]
    fixtures = write_csv(tmp_path / "fx.csv", ("keyword", "geography", "year", "month", "value"), fixture_rows)
    return {"flows": str(flows), "keywords": str(keywords), "fixtures": str(fixtures), "root": tmp_path}


def test_gti_build_with_fixtures(gti_inputs, capsys):
    root = gti_inputs["root"]
    base = ["gti-build", "--flows", gti_inputs["flows"], "--keywords", gti_inputs["keywords"], "--out", str(root / "o")]
    assert cli.main([*base, "--fixtures", gti_inputs["fixtures"]]) == 0
    out = capsys.readouterr().out
    assert "2 pairs" in out and "transport calls: 14" in out
    rows = _read(root / "o" / "gti.csv")
    assert {(r["origin_iso3"], r["dest_iso3"]) for r in rows} == {("MAR", "ESP"), ("SEN", "ESP")}
    # warm cache: replaying again touches the transport zero times
    assert cli.main([*base, "--fixtures", gti_inputs["fixtures"]]) == 0
    assert "transport calls: 0" in capsys.readouterr().out
    assert cli.main([*base, "--offline"]) == 0


def test_gti_build_offline_cold_cache(gti_inputs, capsys):
    root = gti_inputs["root"]
    code = cli.main(["gti-build", "--flows", gti_inputs["flows"], "--keywords", gti_inputs["keywords"], "--offline", "--out", str(root / "cold")])
    assert code == 3
    err = capsys.readouterr().err
    assert "CacheMissError" in err and "visa" in err
