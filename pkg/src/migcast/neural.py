"""Feedforward ANN baseline and the LSTM forecaster, in plain numpy.

Both models consume per-series min-max scaled feature rows and emit the
scaled next-year flow. The LSTM is trained one origin-destination series at a
time (one optimizer step per series per epoch); the ANN pools rows from every
series into shuffled minibatches.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, ParameterError, ShapeError
from .metrics import FlowMatrix
from .numkit import AdamState, LossKind, ParamSet, adam_step, clip_by_global_norm, dropout_mask, loss_gradient, loss_value
from .panel import ScaledSeries, ScalerStats, unscale_targets

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "migcast-checkpoint"
CHECKPOINT_VERSION = 1

LSTM_WIDTH = 50
ANN_WIDTHS = (200, 200)


@dataclass(frozen=True)
class TrainConfig:
    loss: LossKind = LossKind.MAE
    epochs: int = 50
    learning_rate: float = 1e-3
    dropout: float = 0.15
    batch_size: int = 32
    seed: int = 0
    clip_norm: float | None = 5.0

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind.parse(self.loss))
        if self.epochs < 0:
            raise ParameterError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ParameterError("batch size must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError("dropout must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ParameterError("learning rate must be positive")

    @classmethod
    def lstm_defaults(cls, **overrides) -> "TrainConfig":
        return cls(**{"loss": LossKind.MAE, "epochs": 50, "dropout": 0.15, **overrides})

    @classmethod
    def ann_defaults(cls, **overrides) -> "TrainConfig":
        return cls(**{"loss": LossKind.MAE, "epochs": 170, "dropout": 0.1, "batch_size": 32, **overrides})

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["loss"] = self.loss.value
        return d


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ---------------------------------------------------------------- ANN


@dataclass
class AnnModel:
    params: ParamSet
    dropout: float = 0.1
    adam: AdamState = field(default_factory=AdamState)

    @classmethod
    def create(cls, n_inputs: int, widths=ANN_WIDTHS, dropout: float = 0.1, seed: int = 0, lr: float = 1e-3) -> "AnnModel":
        rng = np.random.default_rng(seed)
        h1, h2 = widths
        params = {
            "W1": glorot(rng, h1, n_inputs),
            "b1": np.zeros(h1),
            "W2": glorot(rng, h2, h1),
            "b2": np.zeros(h2),
            "w3": glorot(rng, 1, h2).ravel(),
            "b3": np.zeros(1),
        }
        return cls(params, dropout, AdamState.for_params(params, lr=lr))

    @property
    def n_inputs(self) -> int:
        return self.params["W1"].shape[1]

    @property
    def widths(self) -> tuple[int, int]:
        return (self.params["W1"].shape[0], self.params["W2"].shape[0])

    def forward(self, x, training: bool = False, rng=None, params=None):
        """Return ``(outputs, cache)`` for a batch ``x`` of shape (B, F)."""
        p = self.params if params is None else params
        x = np.atleast_2d(np.asarray(x, dtype=np.result_type(p["W1"], np.float64)))
        if x.shape[1] != p["W1"].shape[1]:
            raise ShapeError(f"ANN expects {p['W1'].shape[1]} inputs, got {x.shape[1]}")
        rate = self.dropout if training else 0.0
        a1 = x @ p["W1"].T + p["b1"]
        m1 = dropout_mask(a1.shape, rate, rng) if rate else 1.0
        h1 = np.maximum(a1, 0.0) * m1
        a2 = h1 @ p["W2"].T + p["b2"]
        m2 = dropout_mask(a2.shape, rate, rng) if rate else 1.0
        h2 = np.maximum(a2, 0.0) * m2
        y = h2 @ p["w3"] + p["b3"][0]
        return y, (x, a1, m1, h1, a2, m2, h2)

    def backward(self, cache, dy, params=None) -> ParamSet:
        p = self.params if params is None else params
        x, a1, m1, h1, a2, m2, h2 = cache
        dy = np.asarray(dy, dtype=np.float64)
        g = {"w3": h2.T @ dy, "b3": np.array([dy.sum()])}
        d_a2 = np.outer(dy, p["w3"]) * m2 * (a2 > 0)
        g["W2"] = d_a2.T @ h1
        g["b2"] = d_a2.sum(axis=0)
        d_a1 = (d_a2 @ p["W2"]) * m1 * (a1 > 0)
        g["W1"] = d_a1.T @ x
        g["b1"] = d_a1.sum(axis=0)
        return g

    def predict(self, x) -> np.ndarray:
        return self.forward(x, training=False)[0]


def ann_forward(model: AnnModel, row, training: bool = False, rng=None) -> float:
    """Scalar forecast for one scaled feature row."""
    return float(model.forward(np.asarray(row, float).reshape(1, -1), training, rng)[0][0])


# ---------------------------------------------------------------- LSTM


@dataclass
class LstmModel:
    """Single LSTM layer with a linear scalar head on every hidden state.

    Gate blocks in ``W``, ``U`` and ``b`` are ordered input, forget, cell
    candidate, output.
    """

    params: ParamSet
    dropout: float = 0.15
    adam: AdamState = field(default_factory=AdamState)

    @classmethod
    def create(cls, n_inputs: int, width: int = LSTM_WIDTH, dropout: float = 0.15, seed: int = 0, lr: float = 1e-3) -> "LstmModel":
        rng = np.random.default_rng(seed)
        b = np.zeros(4 * width)
        b[width : 2 * width] = 1.0
        params = {
            "W": glorot(rng, 4 * width, n_inputs),
            "U": glorot(rng, 4 * width, width),
            "b": b,
            "w_out": glorot(rng, 1, width).ravel(),
            "b_out": np.zeros(1),
        }
        return cls(params, dropout, AdamState.for_params(params, lr=lr))

    @property
    def width(self) -> int:
        return self.params["U"].shape[1]

    @property
    def n_inputs(self) -> int:
        return self.params["W"].shape[1]

    @property
    def forget_bias(self) -> np.ndarray:
        h = self.width
        return self.params["b"][h : 2 * h]

    def forward(self, x, training: bool = False, rng=None, params=None):
        """Unroll over the rows of ``x`` (T, F) from zero state.

        Returns per-timestep outputs and the cache needed by :meth:`backward`.
        """
        p = self.params if params is None else params
        dtype = np.result_type(p["W"], np.float64)
        x = np.atleast_2d(np.asarray(x, dtype=dtype))
        n_steps, n_in = x.shape
        if n_in != p["W"].shape[1]:
            raise ShapeError(f"LSTM expects {p['W'].shape[1]} inputs, got {n_in}")
        H = p["U"].shape[1]
        rate = self.dropout if training else 0.0
        mask = dropout_mask((n_steps, H), rate, rng) if rate else np.ones((n_steps, H))

        zx = x @ p["W"].T + p["b"]
        U = p["U"]
        h = np.zeros((n_steps + 1, H), dtype=dtype)
        c = np.zeros((n_steps + 1, H), dtype=dtype)
        gates = np.empty((n_steps, 4 * H), dtype=dtype)
        tanh_c = np.empty((n_steps, H), dtype=dtype)
        for t in range(n_steps):
            z = zx[t] + U @ h[t]
            i = _sigmoid(z[:H])
            f = _sigmoid(z[H : 2 * H])
            g = np.tanh(z[2 * H : 3 * H])
            o = _sigmoid(z[3 * H :])
            c[t + 1] = f * c[t] + i * g
            tanh_c[t] = np.tanh(c[t + 1])
            h[t + 1] = o * tanh_c[t]
            gates[t, :H], gates[t, H : 2 * H], gates[t, 2 * H : 3 * H], gates[t, 3 * H :] = i, f, g, o
        hd = h[1:] * mask
        y = hd @ p["w_out"] + p["b_out"][0]
        return y, (x, h, c, gates, tanh_c, mask, hd)

    def backward(self, cache, dy, params=None) -> ParamSet:
        """Backpropagation through time for output gradients ``dy`` (T,)."""
        p = self.params if params is None else params
        x, h, c, gates, tanh_c, mask, hd = cache
        n_steps = x.shape[0]
        H = p["U"].shape[1]
        dy = np.asarray(dy, dtype=np.float64)
        grads = {
            "w_out": hd.T @ dy,
            "b_out": np.array([dy.sum()]),
        }
        dh_out = np.outer(dy, p["w_out"]) * mask
        dz_all = np.empty((n_steps, 4 * H))
        dh_next = np.zeros(H)
        dc_next = np.zeros(H)
        U = p["U"]
        for t in reversed(range(n_steps)):
            i, f, g, o = gates[t, :H], gates[t, H : 2 * H], gates[t, 2 * H : 3 * H], gates[t, 3 * H :]
            dh = dh_out[t] + dh_next
            do = dh * tanh_c[t]
            dc = dh * o * (1.0 - tanh_c[t] ** 2) + dc_next
            dz = dz_all[t]
            dz[:H] = dc * g * i * (1.0 - i)
            dz[H : 2 * H] = dc * c[t] * f * (1.0 - f)
            dz[2 * H : 3 * H] = dc * i * (1.0 - g * g)
            dz[3 * H :] = do * o * (1.0 - o)
            dc_next = dc * f
            dh_next = U.T @ dz
        grads["W"] = dz_all.T @ x
        grads["U"] = dz_all.T @ h[:-1]
        grads["b"] = dz_all.sum(axis=0)
        return grads

    def predict(self, x) -> np.ndarray:
        return self.forward(x, training=False)[0]


def lstm_forward(model: LstmModel, series_x, training: bool = False, rng=None) -> np.ndarray:
    """Per-timestep scaled forecasts for one scaled series."""
    return model.forward(series_x, training, rng)[0]


# ---------------------------------------------------------------- training


@dataclass
class TrainHistory:
    epoch_losses: list[float] = field(default_factory=list)
    steps: int = 0


def _training_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1]))


def train_lstm(model: LstmModel, collection: Sequence[ScaledSeries], config: TrainConfig) -> TrainHistory:
    """Per-series BPTT: one forward/backward and one Adam update per series."""
    if not collection:
        raise ParameterError("cannot train on an empty series collection")
    model.dropout = config.dropout
    model.adam.lr = config.learning_rate
    rng = _training_rng(config.seed)
    hist = TrainHistory()
    for _ in range(config.epochs):
        total = 0.0
        for k in rng.permutation(len(collection)):
            s = collection[k]
            y_hat, cache = model.forward(s.x, training=True, rng=rng)
            total += loss_value(config.loss, y_hat, s.y)
            grads = model.backward(cache, loss_gradient(config.loss, y_hat, s.y))
            if config.clip_norm is not None:
                clip_by_global_norm(grads, config.clip_norm)
            adam_step(model.params, grads, model.adam)
            hist.steps += 1
        hist.epoch_losses.append(total / len(collection))
    return hist


def train_ann(model: AnnModel, collection: Sequence[ScaledSeries], config: TrainConfig) -> TrainHistory:
    """Pooled, shuffled minibatch training over every row of every series."""
    if not collection:
        raise ParameterError("cannot train on an empty series collection")
    x = np.vstack([s.x for s in collection])
    y = np.concatenate([s.y for s in collection])
    model.dropout = config.dropout
    model.adam.lr = config.learning_rate
    rng = _training_rng(config.seed)
    hist = TrainHistory()
    n = len(y)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            y_hat, cache = model.forward(x[idx], training=True, rng=rng)
            total += loss_value(config.loss, y_hat, y[idx]) * len(idx)
            grads = model.backward(cache, loss_gradient(config.loss, y_hat, y[idx]))
            adam_step(model.params, grads, model.adam)
            hist.steps += 1
        hist.epoch_losses.append(total / n)
    return hist


def train(model, collection: Sequence[ScaledSeries], config: TrainConfig) -> TrainHistory:
    if isinstance(model, LstmModel):
        return train_lstm(model, collection, config)
    if isinstance(model, AnnModel):
        return train_ann(model, collection, config)
    raise ParameterError(f"cannot train {type(model).__name__}")


# ---------------------------------------------------------------- forecasting


def forecast_series(model, scaled: ScaledSeries) -> np.ndarray:
    """Count-scale forecasts for every row of a series (dropout off, clamped at 0).

    For the LSTM the output at row ``k`` sees rows ``0..k`` only.
    """
    raw = model.predict(scaled.x)
    return np.maximum(unscale_targets(raw, scaled.stats), 0.0)


@dataclass(frozen=True)
class ForecastRecord:
    origin: str
    destination: str
    year: int
    truth: float
    forecast: float


def forecast_records(model, collection: Sequence[ScaledSeries], years=None) -> list[ForecastRecord]:
    """Forecasts for rows whose feature year is in ``years`` (all rows if None)."""
    out = []
    for s in collection:
        preds = forecast_series(model, s)
        for k, y in enumerate(s.years):
            if years is None or y in years:
                out.append(ForecastRecord(s.key[0], s.key[1], y, float(s.series.targets[k]), float(preds[k])))
    return out


def records_to_matrices(records: Sequence[ForecastRecord], by_year: bool = True) -> tuple[FlowMatrix, FlowMatrix]:
    """Truth and forecast matrices: origins as rows, destination(-year) columns."""
    if not records:
        raise DataError("no forecasts to assemble")
    origins = sorted({r.origin for r in records})
    if by_year:
        cols = sorted({(r.destination, r.year) for r in records})
        col_of = lambda r: (r.destination, r.year)  # noqa: E731
    else:
        cols = sorted({r.destination for r in records})
        col_of = lambda r: r.destination  # noqa: E731
    oi = {o: k for k, o in enumerate(origins)}
    ci = {c: k for k, c in enumerate(cols)}
    truth = np.zeros((len(origins), len(cols)))
    fc = np.zeros_like(truth)
    mask = np.zeros_like(truth, dtype=bool)
    for r in records:
        a, b = oi[r.origin], ci[col_of(r)]
        if mask[a, b]:
            raise DataError(f"duplicate forecast for {r.origin}->{col_of(r)}")
        truth[a, b], fc[a, b], mask[a, b] = r.truth, r.forecast, True
    return FlowMatrix(origins, cols, truth, mask), FlowMatrix(origins, cols, fc, mask)


def evaluate(model, collection: Sequence[ScaledSeries], horizon_year: int) -> FlowMatrix:
    """Forecast matrix for ``horizon_year``, fed each pair's history up to it.

    Pairs lacking features for that year are masked out with a warning.
    """
    records = []
    missing = 0
    for s in collection:
        if horizon_year not in s.years:
            missing += 1
            continue
        k = s.years.index(horizon_year)
        view = ScaledSeries(s.series, s.x[: k + 1], s.y[: k + 1], s.stats)
        pred = forecast_series(model, view)[-1]
        records.append(ForecastRecord(s.key[0], s.key[1], horizon_year, float(s.series.targets[k]), float(pred)))
    if missing:
        log.warning("%d series have no features for %d; masked", missing, horizon_year)
    return records_to_matrices(records, by_year=False)[1]


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, model, scalers: dict[tuple[str, str], ScalerStats], config: TrainConfig | None = None, extra: dict | None = None) -> None:
    """Write parameters, optimizer state, config and scalers to one ``.npz``."""
    kind = "lstm" if isinstance(model, LstmModel) else "ann"
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "dropout": model.dropout,
        "shapes": {k: list(v.shape) for k, v in model.params.items()},
        "adam": {k: getattr(model.adam, k) for k in ("lr", "beta1", "beta2", "epsilon", "step")},
        "config": config.to_dict() if config else None,
        "scalers": [[o, d, st.to_dict()] for (o, d), st in sorted(scalers.items())],
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    arrays.update({f"adam_m/{k}": v for k, v in model.adam.m.items()})
    arrays.update({f"adam_v/{k}": v for k, v in model.adam.v.items()})
    buf = io.BytesIO()
    np.savez(buf, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Return ``(model, scalers, config, extra)`` from :func:`save_checkpoint` output."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"{path} is not a migcast checkpoint")
        if meta["version"] > CHECKPOINT_VERSION:
            raise DataError(f"checkpoint version {meta['version']} is newer than supported")
        params = {k.split("/", 1)[1]: data[k].copy() for k in data.files if k.startswith("param/")}
        m = {k.split("/", 1)[1]: data[k].copy() for k in data.files if k.startswith("adam_m/")}
        v = {k.split("/", 1)[1]: data[k].copy() for k in data.files if k.startswith("adam_v/")}
    for k, shape in meta["shapes"].items():
        if list(params[k].shape) != shape:
            raise ShapeError(f"checkpoint parameter {k} has an inconsistent shape")
    adam = AdamState(**meta["adam"])
    adam.m, adam.v = m, v
    cls = LstmModel if meta["kind"] == "lstm" else AnnModel
    model = cls(params, meta["dropout"], adam)
    scalers = {(o, d): ScalerStats.from_dict(st) for o, d, st in meta["scalers"]}
    config = TrainConfig(**meta["config"]) if meta["config"] else None
    return model, scalers, config, meta["extra"]
