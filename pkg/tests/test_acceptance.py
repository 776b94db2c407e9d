"""Acceptance criteria 1-9.

Each test prints one ``[criterion N] PASS|FAIL`` line straight to the terminal
and then asserts, so the verdicts show up in ``pytest -v`` output.
"""

from __future__ import annotations

import logging
import math
import os
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from migcast import cli, gravity, metrics
from migcast.neural import AnnModel, LstmModel, TrainConfig, forecast_series, train_lstm
from migcast.numkit import grad_check, loss_gradient
from migcast.panel import (
    CountryCode,
    FeatureLayout,
    PairSeries,
    ScalerStats,
    fit_scaler,
    inverse_transform,
    make_row,
    transform,
    transform_matrix,
)
from migcast.pipeline import RunConfig, evaluate_models, load_panel, summarize, train_models
from migcast.synthetic import write_synthetic_panel


def verdict(capsys, n: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def rel_err(a: float, b: float) -> float:
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))


# ---------------------------------------------------------------- 1


def _oracle(t, f):
    """Direct double loops over cells, no numpy reductions."""
    m, n = len(t), len(t[0])
    cells = [(t[i][j], f[i][j]) for i in range(m) for j in range(n)]
    common = 0.0
    total = 0.0
    abs_sum = 0.0
    sq_sum = 0.0
    for a, b in cells:
        common += min(a, b)
        total += a + b
        abs_sum += abs(a - b)
        sq_sum += (a - b) ** 2
    mean_t = sum(a for a, _ in cells) / len(cells)
    ss_tot = sum((a - mean_t) ** 2 for a, _ in cells)
    v = [sum(t[i][j] for i in range(m)) for j in range(n)]
    vh = [sum(f[i][j] for i in range(m)) for j in range(n)]
    return {
        "cpc": 2 * common / total if total else 1.0,
        "mae": abs_sum / len(cells),
        "rmse": math.sqrt(sq_sum / len(cells)),
        "r2": 1 - sq_sum / ss_tot if ss_tot else None,
        "mae_in": sum(abs(a - b) for a, b in zip(v, vh)) / n,
    }


def test_criterion_1_metric_oracle(capsys):
    rng = np.random.default_rng(20240501)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        m, n = rng.integers(1, 21, size=2)
        t = rng.uniform(0, 1e4, (m, n))
        f = rng.uniform(0, 1e4, (m, n))
        want = _oracle(t.tolist(), f.tolist())
        got = {
            "cpc": metrics.cpc(t, f),
            "mae": metrics.mae(t, f),
            "rmse": metrics.rmse(t, f),
            "mae_in": metrics.mae_in(t, f),
        }
        if want["r2"] is None:
            with pytest.raises(metrics.DegenerateVarianceError):
                metrics.r_squared(t, f)
        else:
            got["r2"] = metrics.r_squared(t, f)
        for k, v in got.items():
            worst = max(worst, rel_err(v, want[k]))
    elapsed = time.perf_counter() - start
    verdict(capsys, 1, worst <= 1e-12 and elapsed < 5.0, f"max rel err {worst:.2e} (tol 1e-12), {elapsed:.2f}s (limit 5s)")


# ---------------------------------------------------------------- 2


def test_criterion_2_worked_fixture(capsys):
    T = [[1, 2], [3, 4]]
    That = [[2, 2], [3, 3]]
    cells = [(Fraction(T[i][j]), Fraction(That[i][j])) for i in range(2) for j in range(2)]
    q_cpc = 2 * sum(min(a, b) for a, b in cells) / sum(a + b for a, b in cells)
    q_mae = sum(abs(a - b) for a, b in cells) / 4
    q_mse = sum((a - b) ** 2 for a, b in cells) / 4
    mean = sum(a for a, _ in cells) / 4
    q_r2 = 1 - sum((a - b) ** 2 for a, b in cells) / sum((a - mean) ** 2 for a, _ in cells)
    v = [T[0][j] + T[1][j] for j in range(2)]
    vh = [That[0][j] + That[1][j] for j in range(2)]
    q_in = Fraction(sum(abs(a - b) for a, b in zip(v, vh)), 2)
    assert (q_cpc, q_mae, q_mse, q_r2, q_in) == (Fraction(9, 10), Fraction(1, 2), Fraction(1, 2), Fraction(3, 5), 1)

    rep = metrics.report(np.array(T), np.array(That))
    checks = {
        "cpc": rep.cpc == float(q_cpc),
        "mae": rep.mae == float(q_mae),
        "rmse": rep.rmse == math.sqrt(float(q_mse)),
        "r2": rep.r2 == float(q_r2),
        "mae_in": rep.mae_in == float(q_in),
    }
    bad = [k for k, ok in checks.items() if not ok]
    verdict(capsys, 2, not bad, f"CPC {rep.cpc!r} MAE {rep.mae!r} RMSE {rep.rmse!r} r2 {rep.r2!r} MAE_in {rep.mae_in!r}; mismatched: {bad or 'none'}")


# ---------------------------------------------------------------- 3

LD = np.longdouble


def _loss_ld(kind, p, t):
    """Loss definitions evaluated in extended precision for the finite-difference side."""
    p = np.asarray(p, LD)
    t = np.asarray(t, LD)
    if kind == "mae":
        return np.mean(np.abs(p - t))
    if kind == "mse":
        return np.mean((p - t) ** 2)
    return 1 - 2 * np.sum(np.minimum(p, t)) / (np.sum(p) + np.sum(t))


def test_criterion_3_gradients(capsys):
    start = time.perf_counter()
    worst: dict[tuple[str, str], float] = {}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        lstm = LstmModel.create(6, width=8, seed=seed)
        ann = AnnModel.create(6, widths=(8, 8), seed=seed)
        x_l, y_l = rng.random((5, 6)), rng.uniform(0.2, 1.0, 5)
        x_a, y_a = rng.random((7, 6)), rng.uniform(0.2, 1.0, 7)
        for kind in ("mae", "mse", "cpc"):
            for name, model, x, y in (("lstm", lstm, x_l, y_l), ("ann", ann, x_a, y_a)):
                out, cache = model.forward(x)
                analytic = model.backward(cache, loss_gradient(kind, out, y))

                def objective(p, model=model, x=x, y=y, kind=kind):
                    return _loss_ld(kind, model.forward(x, params={k: v.astype(LD) for k, v in p.items()})[0], y)

                err = grad_check(objective, model.params, analytic)
                worst[(name, kind)] = max(worst.get((name, kind), 0.0), err)
    elapsed = time.perf_counter() - start
    top = max(worst.values())
    detail = ", ".join(f"{n}/{k} {e:.1e}" for (n, k), e in sorted(worst.items()))
    verdict(capsys, 3, top <= 1e-4 and elapsed < 30.0, f"max rel err {top:.2e} (tol 1e-4) [{detail}], {elapsed:.1f}s (limit 30s)")


# ---------------------------------------------------------------- 4


def test_criterion_4_gravity_noiseless(capsys):
    rng = np.random.default_rng(4)
    origins = tuple(f"O{a}{b}" for a, b in zip("ABCDEFGHIJ", "KLMNOPQRST"))
    dests = ("DEU", "ESP", "FRA", "GBR", "ITA")
    years = tuple(range(2004, 2012))
    layout = FeatureLayout(origins, dests, years, n_bi=2, n_uni=2)
    names = gravity.full_column_names(layout)
    baseline = gravity.baseline_columns(layout)
    truth = {n: rng.uniform(-0.5, 0.5) for n in names if n not in baseline}
    truth["intercept"] = 3.0

    rows, targets = [], []
    for o in origins:
        for d in dests:
            for y in years:
                row = make_row(
                    layout, o, d, y,
                    gdp_origin=rng.uniform(1e9, 1e12), gdp_dest=rng.uniform(1e11, 1e13),
                    pop_origin=rng.uniform(1e6, 1e8), pop_dest=rng.uniform(1e6, 1e8),
                    flow_current=0.0,
                    gti_bilateral=rng.uniform(0, 1, 2), gti_interaction=rng.uniform(0, 1, 2),
                )
                x = gravity.full_matrix([row], layout)[0]
                eta = sum(truth.get(n, 0.0) * x[k] for k, n in enumerate(names))
                rows.append(row)
                targets.append(eta)
    eta = np.array(targets)
    # centre eta so expm1/log1p stays well conditioned
    shift = 6.0 - eta.mean()
    truth["intercept"] += shift
    eta += shift

    start = time.perf_counter()
    fit_ = gravity.fit(gravity.build_design(rows, np.expm1(eta), layout))
    elapsed = time.perf_counter() - start
    worst = max(abs(fit_.coefficient(n) - b) for n, b in truth.items())
    missing = sorted(set(truth) - set(fit_.columns))
    ok = worst <= 1e-6 and not missing and elapsed < 5.0
    verdict(capsys, 4, ok, f"{len(truth)} coefficients, max abs err {worst:.2e} (tol 1e-6), missing {missing or 'none'}, {elapsed:.3f}s (limit 5s)")


# ---------------------------------------------------------------- 5


def _recurrence_series(seed: int = 7):
    """Five series x[t+1] = a x[t] + b with per-series a in [0.6, 0.95], b in [50, 500]."""
    rng = np.random.default_rng(seed)
    origins = tuple(f"O{c}A" for c in "ABCDE")
    years = tuple(range(2004, 2014))
    layout = FeatureLayout(origins, ("DST",), years)
    out = []
    for o in origins:
        a, b = rng.uniform(0.6, 0.95), rng.uniform(50, 500)
        x = [rng.uniform(100, 2000)]
        for _ in range(len(years)):
            x.append(a * x[-1] + b)
        rows = [
            make_row(layout, o, "DST", y, gdp_origin=1e9, gdp_dest=2e9, pop_origin=1e6, pop_dest=2e6, flow_current=x[t])
            for t, y in enumerate(years)
        ]
        out.append(PairSeries(CountryCode(o), CountryCode("DST"), years, tuple(rows), np.array(x[1:]), layout))
    return out, layout


def test_criterion_5_lstm_capacity(capsys):
    series, layout = _recurrence_series()
    scaled = [transform(s, fit_scaler(s)) for s in series]
    model = LstmModel.create(layout.width, width=50, seed=0)
    start = time.perf_counter()
    hist = train_lstm(model, scaled, TrainConfig.lstm_defaults(epochs=500, dropout=0.0))
    elapsed = time.perf_counter() - start
    targets = np.concatenate([s.targets for s in series])
    preds = np.concatenate([forecast_series(model, s) for s in scaled])
    share = float(np.mean(np.abs(preds - targets)) / (targets.max() - targets.min()))
    ok = share < 0.01 and elapsed < 60.0 and hist.steps == 5 * 500
    verdict(capsys, 5, ok, f"training MAE = {share:.3%} of target range (limit 1%), {elapsed:.1f}s (limit 60s)")


# ---------------------------------------------------------------- 6


def test_criterion_6_structure(capsys):
    lstm = LstmModel.create(12)
    ann = AnnModel.create(12)
    h = lstm.width
    lcfg, acfg = TrainConfig.lstm_defaults(), TrainConfig.ann_defaults()
    run_cfg = RunConfig()

    rng = np.random.default_rng(0)
    x = rng.normal(size=(16, 12))
    _, (_, a1, _, h1, a2, _, h2) = ann.forward(x)
    relu_ok = np.array_equal(h1, np.maximum(a1, 0)) and np.array_equal(h2, np.maximum(a2, 0)) and (a1 < 0).any()

    series = [
        transform(s, fit_scaler(s)) for s in _recurrence_series()[0]
    ]
    probe = LstmModel.create(series[0].x.shape[1], width=8, seed=1)
    hist = train_lstm(probe, series, TrainConfig.lstm_defaults(epochs=3))

    facts = {
        "forget bias 1": bool(np.all(lstm.forget_bias == 1.0)) and not np.any(np.delete(lstm.params["b"], np.s_[h : 2 * h])),
        "LSTM width 50": h == 50 and lstm.params["U"].shape == (200, 50),
        "ANN 2x200": ann.widths == (200, 200) and ann.params["w3"].shape == (200,),
        "ANN ReLU": bool(relu_ok),
        "epochs 50/170": (lcfg.epochs, acfg.epochs) == (50, 170)
        and (run_cfg.lstm_config().epochs, run_cfg.ann_config().epochs) == (50, 170),
        "dropout 0.15/0.1": (lcfg.dropout, acfg.dropout) == (0.15, 0.1) and (lstm.dropout, ann.dropout) == (0.15, 0.1),
        "steps = pairs x epochs": hist.steps == len(series) * 3 == probe.adam.step,
    }
    bad = [k for k, ok in facts.items() if not ok]
    verdict(capsys, 6, not bad, f"checked {', '.join(facts)}; failing: {bad or 'none'}")


# ---------------------------------------------------------------- 7


def test_criterion_7_directional_ranking(capsys, tmp_path):
    """LSTM against gravity on ten panels from :mod:`migcast.synthetic`.

    Generator (one panel per seed, 8 origins x 5 destinations, 2004-2015):
    each pair has capacity ``log K = a_i + b_j + u_ij`` with a pair-specific
    ``u_ij ~ N(0, 1)`` that origin and destination fixed effects cannot
    absorb, and flows follow the lagged logistic recurrence
    ``x[t+1] = (x[t] + r x[t] (1 - x[t]/K)) * (GDP_j[t+1]/GDP_j[t])**1.5 * exp(e)``
    with ``r ~ U(0.2, 0.9)``, ``e ~ N(0, 0.05)``, integer-rounded. Both models
    use their default configuration and are refit on train+validation; the
    comparison is RMSE on the 2014 test rows.
    """
    logging.disable(logging.WARNING)
    try:
        wins, lines = 0, []
        for seed in range(10):
            paths = write_synthetic_panel(tmp_path / f"s{seed}", seed)
            cfg = RunConfig(
                flows=paths["flows"], indicators=paths["indicators"], gti=paths["gti"],
                models=("gravity", "lstm"), seed=seed, out=tmp_path / f"o{seed}",
            )
            panel = load_panel(cfg)
            table = evaluate_models(cfg, panel, train_models(cfg, panel))
            g, l = table.value("gravity", "test", "rmse"), table.value("lstm", "test", "rmse")
            wins += l < g
            lines.append(f"{seed}:{l:.0f}<{g:.0f}" if l < g else f"{seed}:{l:.0f}>={g:.0f}")
    finally:
        logging.disable(logging.NOTSET)
    verdict(capsys, 7, wins >= 9, f"RMSE(LSTM) < RMSE(gravity) in {wins}/10 seeds (need 9) [{' '.join(lines)}]")


REAL_DATA = os.environ.get("MIGCAST_REAL_DATA")


@pytest.mark.skipif(not REAL_DATA, reason="set MIGCAST_REAL_DATA to a directory with flows.csv, indicators.csv and gti.csv")
def test_criterion_7_real_data_summary(capsys):
    base = Path(REAL_DATA)
    gti_file = base / "gti.csv"
    cfg = RunConfig(flows=base / "flows.csv", indicators=base / "indicators.csv", gti=gti_file if gti_file.exists() else None)
    s = summarize(load_panel(cfg))
    ok = s.observations == 19326 and s.series == 1997 and round(s.mean) == 742 and round(s.median) == 17
    verdict(capsys, 7, ok, f"real data: {s.observations} observations, {s.series} series, mean {s.mean:.1f}, median {s.median:g}")


# ---------------------------------------------------------------- 8


def test_criterion_8_determinism(capsys, tmp_path):
    paths = write_synthetic_panel(tmp_path / "data", 3)
    config = tmp_path / "run.json"
    config.write_text(
        '{"flows": "data/flows.csv", "indicators": "data/indicators.csv", "gti": "data/gti.csv",'
        ' "models": ["gravity", "ann", "lstm"], "seed": 11, "split": "train=2004-2012,val=2013,test=2014"}',
        encoding="utf-8",
    )
    assert paths["flows"].exists()
    codes = [cli.main(["run", "--config", str(config), "--out", str(tmp_path / out)]) for out in ("a", "b")]
    outputs = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    same = [name for name in outputs if (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()]
    ok = codes == [0, 0] and len(outputs) >= 3 and same == outputs
    verdict(capsys, 8, ok, f"exit codes {codes}; byte-identical {len(same)}/{len(outputs)} CSVs ({', '.join(outputs)})")


# ---------------------------------------------------------------- 9


def test_criterion_9_transform_identities(capsys):
    rng = np.random.default_rng(9)
    worst_scale = 0.0
    for _ in range(200):
        rows, cols = rng.integers(1, 12), rng.integers(1, 30)
        x = rng.uniform(-1, 1, (rows, cols)) * 10.0 ** rng.integers(0, 4, cols)
        if cols > 1:
            x[:, 0] = x[0, 0]  # a constant column exercises the degenerate span
        stats = ScalerStats(x.min(axis=0), x.max(axis=0), 0)
        back = inverse_transform(transform_matrix(x, stats), stats)
        worst_scale = max(worst_scale, float(np.max(np.abs(back - x))))

    counts = np.arange(0, 1_000_001, dtype=np.float64)
    worst_log = float(np.max(np.abs(gravity.inverse_response(gravity.response(counts)) - counts)))
    ok = worst_scale <= 1e-12 and worst_log <= 1e-9
    verdict(capsys, 9, ok, f"min-max round trip {worst_scale:.2e} (tol 1e-12); expm1(log1p(T)) on 0..1e6 {worst_log:.2e} (tol 1e-9)")
