"""End-to-end workflow: ingest, scale, split, train, evaluate, report.

Every stage runs inside :func:`stage`, which tags failures with the stage
name and maps them to the CLI exit codes (2 config, 3 data, 4 training).
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gravity, neural
from .errors import (
    AssemblyError,
    CacheMissError,
    DataError,
    FetchError,
    MigcastError,
    ParameterError,
    RateLimitError,
)
from .gti import (
    Fetcher,
    FixtureTransport,
    LiveTransport,
    TokenBucket,
    TrendsCache,
    assemble,
    bilateral_keywords,
    build_universe,
    default_universe,
    destination_keywords,
    read_base_table,
    read_variant_table,
    write_gti_csv,
)
from .metrics import METRIC_NAMES, EvaluationReport, report, write_metrics_csv
from .neural import ForecastRecord, TrainConfig, records_to_matrices
from .panel import (
    FEATURE_YEARS,
    CountryRegistry,
    PairSeries,
    Panel,
    ScaledSeries,
    ScalerStats,
    SplitSpec,
    fit_scaler,
    ingest,
    read_flows,
    transform,
)

log = logging.getLogger(__name__)

MODEL_NAMES = ("gravity", "ann", "lstm")
SPLIT_ORDER = ("train", "validation", "test")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4


# ---------------------------------------------------------------- stages


class StageError(MigcastError):
    """A pipeline failure tagged with the stage it happened in."""

    def __init__(self, stage_name: str, cause: BaseException, exit_code: int):
        self.stage = stage_name
        self.cause = cause
        self.exit_code = exit_code
        super().__init__(f"[{stage_name}] {type(cause).__name__}: {cause}")


# stages whose unclassified failures are not training failures
_STAGE_CODES = {"config": EXIT_CONFIG, "ingest": EXIT_DATA, "gti": EXIT_DATA}


@contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except ParameterError as exc:
        raise StageError(name, exc, EXIT_CONFIG) from exc
    except (DataError, FetchError, OSError, KeyError) as exc:
        code = EXIT_CONFIG if name == "config" else EXIT_DATA
        raise StageError(name, exc, code) from exc
    except (MigcastError, ArithmeticError, ValueError) as exc:
        raise StageError(name, exc, _STAGE_CODES.get(name, EXIT_TRAINING)) from exc


# ---------------------------------------------------------------- config


def parse_models(value) -> tuple[str, ...]:
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    names = []
    for v in value:
        v = str(v).lower()
        if v == "all":
            names.extend(MODEL_NAMES)
        elif v in MODEL_NAMES:
            names.append(v)
        else:
            raise ParameterError(f"unknown model {v!r}; choose from {', '.join(MODEL_NAMES)} or all")
    if not names:
        raise ParameterError("no models selected")
    chosen = set(names)
    return tuple(m for m in MODEL_NAMES if m in chosen)


_PATH_FIELDS = ("flows", "indicators", "gti", "keywords", "variants", "fixtures", "cache", "gti_out")


@dataclass(frozen=True)
class RunConfig:
    flows: Path | None = None
    indicators: Path | None = None
    gti: Path | None = None
    split: SplitSpec = field(default_factory=SplitSpec)
    models: tuple[str, ...] = MODEL_NAMES
    lstm: dict = field(default_factory=dict)
    ann: dict = field(default_factory=dict)
    out: Path = Path("migcast-out")
    seed: int = 0
    offline: bool = False
    refit: bool = True
    parallel_models: bool = False
    # gti-build inputs
    keywords: Path | None = None
    variants: Path | None = None
    fixtures: Path | None = None
    cache: Path | None = None
    gti_out: Path | None = None
    fetch_parallelism: int = 1
    requests_per_second: float = 0.2

    def __post_init__(self):
        for name in _PATH_FIELDS + ("out",):
            v = getattr(self, name)
            if v is not None and not isinstance(v, Path):
                object.__setattr__(self, name, Path(v))
        if not isinstance(self.split, SplitSpec):
            object.__setattr__(self, "split", SplitSpec.parse(str(self.split)))
        object.__setattr__(self, "models", parse_models(self.models))
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ParameterError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if self.fetch_parallelism < 1 or self.requests_per_second <= 0:
            raise ParameterError("fetch parallelism and request rate must be positive")
        # surfaces bad overrides at config time rather than mid-training
        self.lstm_config()
        self.ann_config()

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {', '.join(sorted(unknown))}")
        data = dict(data)
        if base is not None:
            for name in _PATH_FIELDS + ("out",):
                if data.get(name) is not None:
                    p = Path(data[name])
                    data[name] = p if p.is_absolute() else base / p
        for name in ("lstm", "ann"):
            if name in data and not isinstance(data[name], dict):
                raise ParameterError(f"config key {name!r} must be an object")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ParameterError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ParameterError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ParameterError(f"{path}: config must be a JSON object")
        return cls.from_dict(data, base=path.parent)

    def with_overrides(self, **overrides) -> "RunConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def lstm_config(self) -> TrainConfig:
        return _train_config(TrainConfig.lstm_defaults, self.lstm, self.seed, "lstm")

    def ann_config(self) -> TrainConfig:
        return _train_config(TrainConfig.ann_defaults, self.ann, self.seed, "ann")

    def fit_years(self) -> frozenset:
        return self.split.fit_years if self.refit else self.split.train

    def require_inputs(self) -> None:
        for name in ("flows", "indicators"):
            p = getattr(self, name)
            if p is None:
                raise ParameterError(f"no {name} file configured")
            if not p.is_file():
                raise ParameterError(f"{name} file {p} does not exist")
        if self.gti is not None and not self.gti.is_file():
            raise ParameterError(f"gti file {self.gti} does not exist")

    def describe(self) -> dict:
        return {
            "split": self.split.format(),
            "fit_years": sorted(self.fit_years()),
            "models": list(self.models),
            "seed": self.seed,
            "refit": self.refit,
            "lstm": self.lstm_config().to_dict() if "lstm" in self.models else None,
            "ann": self.ann_config().to_dict() if "ann" in self.models else None,
        }


def _train_config(factory, overrides: dict, seed: int, name: str) -> TrainConfig:
    overrides = dict(overrides)
    overrides.setdefault("seed", seed)
    try:
        return factory(**overrides)
    except TypeError as exc:
        raise ParameterError(f"bad {name} override: {exc}") from None


# ---------------------------------------------------------------- summary


@dataclass(frozen=True)
class DatasetSummary:
    observations: int
    series: int
    mean: float
    median: float
    maximum: float
    share_below_10: float
    share_at_least_10000: float
    mean_incoming: float
    incoming_by_destination: tuple[tuple[str, float], ...]

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["incoming_by_destination"] = dict(self.incoming_by_destination)
        return d


def summarize(collection: Sequence[PairSeries] | Panel) -> DatasetSummary:
    """Statistics of the target flows of every usable observation.

    Incoming totals are summed over origins per destination and target year;
    ``mean_incoming`` averages them over all destination-years and the
    per-destination entries over that destination's years.
    """
    series = list(collection)
    if not series:
        raise ParameterError("cannot summarize an empty dataset")
    flows = np.concatenate([s.targets for s in series])
    totals: dict[tuple[str, int], float] = {}
    for s in series:
        d = s.destination.iso3
        for y, t in zip(s.years, s.targets):
            totals[(d, y + 1)] = totals.get((d, y + 1), 0.0) + float(t)
    per_dest: dict[str, list[float]] = {}
    for (d, _), v in sorted(totals.items()):
        per_dest.setdefault(d, []).append(v)
    return DatasetSummary(
        observations=int(flows.size),
        series=len(series),
        mean=float(flows.mean()),
        median=float(np.median(flows)),
        maximum=float(flows.max()),
        share_below_10=float(np.mean(flows < 10)),
        share_at_least_10000=float(np.mean(flows >= 10_000)),
        mean_incoming=float(np.mean(list(totals.values()))),
        incoming_by_destination=tuple((d, float(np.mean(v))) for d, v in per_dest.items()),
    )


# ---------------------------------------------------------------- training


@dataclass
class TrainedModels:
    models: dict
    scalers: dict[tuple[str, str], ScalerStats]
    fit_years: frozenset
    histories: dict = field(default_factory=dict)


def load_panel(config: RunConfig) -> Panel:
    with stage("config"):
        config.require_inputs()
    with stage("ingest"):
        panel = ingest(config.flows, config.indicators, config.gti)
        if not panel.series:
            raise DataError("no usable origin-destination series after ingestion")
        for note in panel.report.notes:
            log.info("ingest: %s", note)
    return panel


def fit_scalers(panel: Panel, years) -> dict[tuple[str, str], ScalerStats]:
    return {s.key: fit_scaler(s, years) for s in panel.series}


def scale_panel(panel: Panel, scalers) -> list[ScaledSeries]:
    missing = [s.key for s in panel.series if s.key not in scalers]
    if missing:
        raise DataError(f"no scaler for series {missing[0][0]}->{missing[0][1]}")
    return [transform(s, scalers[s.key]) for s in panel.series]


def scaled_subset(s: ScaledSeries, years) -> ScaledSeries | None:
    wanted = set(years)
    idx = [k for k, y in enumerate(s.years) if y in wanted]
    if not idx:
        return None
    return ScaledSeries(s.series.subset(wanted), s.x[idx], s.y[idx], s.stats)


def _train_one(name: str, panel: Panel, scaled: list[ScaledSeries], fit_years, config: RunConfig):
    if name == "gravity":
        views = [v for v in (s.subset(fit_years) for s in panel.series) if v is not None]
        return gravity.fit(gravity.design_from_series(views)), None
    views = [v for v in (scaled_subset(s, fit_years) for s in scaled) if v is not None]
    if not views:
        raise DataError("no training rows in the fit years")
    lr_cfg = config.lstm_config() if name == "lstm" else config.ann_config()
    if name == "lstm":
        model = neural.LstmModel.create(panel.layout.width, dropout=lr_cfg.dropout, seed=lr_cfg.seed, lr=lr_cfg.learning_rate)
    else:
        model = neural.AnnModel.create(panel.layout.width, dropout=lr_cfg.dropout, seed=lr_cfg.seed, lr=lr_cfg.learning_rate)
    hist = neural.train(model, views, lr_cfg)
    log.info("%s: %d optimizer steps, final loss %s", name, hist.steps, hist.epoch_losses[-1] if hist.epoch_losses else None)
    return model, hist


def train_models(config: RunConfig, panel: Panel) -> TrainedModels:
    fit_years = config.fit_years()
    with stage("scale"):
        scalers = fit_scalers(panel, fit_years)
        scaled = scale_panel(panel, scalers)
    with stage("train"):
        if config.parallel_models and len(config.models) > 1:
            with ThreadPoolExecutor(max_workers=len(config.models)) as pool:
                futures = {m: pool.submit(_train_one, m, panel, scaled, fit_years, config) for m in config.models}
                results = {m: f.result() for m, f in futures.items()}
        else:
            results = {m: _train_one(m, panel, scaled, fit_years, config) for m in config.models}
    return TrainedModels(
        models={m: r[0] for m, r in results.items()},
        scalers=scalers,
        fit_years=fit_years,
        histories={m: r[1] for m, r in results.items() if r[1] is not None},
    )


CHECKPOINT_DIR = "checkpoints"


def save_models(trained: TrainedModels, out: Path, config: RunConfig) -> Path:
    directory = Path(out) / CHECKPOINT_DIR
    directory.mkdir(parents=True, exist_ok=True)
    extra = {"fit_years": sorted(trained.fit_years)}
    for name, model in trained.models.items():
        if name == "gravity":
            model.to_csv(directory / "gravity.csv")
        else:
            cfg = config.lstm_config() if name == "lstm" else config.ann_config()
            neural.save_checkpoint(directory / f"{name}.npz", model, trained.scalers, cfg, extra)
    with open(directory / "scalers.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"fit_years": extra["fit_years"], "scalers": [[o, d, st.to_dict()] for (o, d), st in sorted(trained.scalers.items())]},
            fh,
            sort_keys=True,
        )
    return directory


def load_models(directory: Path, models: Sequence[str]) -> TrainedModels:
    directory = Path(directory)
    path = directory / "scalers.json"
    if not path.is_file():
        raise DataError(f"no checkpoints found in {directory}")
    with open(path, encoding="utf-8") as fh:
        meta = json.load(fh)
    scalers = {(o, d): ScalerStats.from_dict(st) for o, d, st in meta["scalers"]}
    loaded = {}
    for name in models:
        if name == "gravity":
            p = directory / "gravity.csv"
            if not p.is_file():
                raise DataError(f"missing gravity checkpoint {p}")
            loaded[name] = gravity.GravityFit.from_csv(p)
        else:
            p = directory / f"{name}.npz"
            if not p.is_file():
                raise DataError(f"missing {name} checkpoint {p}")
            loaded[name] = neural.load_checkpoint(p)[0]
    return TrainedModels(loaded, scalers, frozenset(meta["fit_years"]))


# ---------------------------------------------------------------- evaluation


@dataclass
class ComparisonTable:
    rows: list[tuple[str, str, EvaluationReport]]
    summary: DatasetSummary
    records: dict[tuple[str, str], list[ForecastRecord]] = field(default_factory=dict)

    def value(self, model: str, split_name: str, metric: str) -> float:
        for m, s, rep in self.rows:
            if m == model and s == split_name:
                return rep.metrics()[metric]
        raise KeyError((model, split_name, metric))


def report_splits(config: RunConfig, fit_years=None) -> list[tuple[str, frozenset]]:
    """(label, years) evaluated; the train label covers the fit years."""
    out = [("train", frozenset(config.fit_years() if fit_years is None else fit_years))]
    if not config.refit and config.split.validation:
        out.append(("validation", config.split.validation))
    out.append(("test", config.split.test))
    return [(name, years) for name, years in out if years]


def gravity_records(fit_, collection: Sequence[PairSeries], years) -> list[ForecastRecord]:
    views = [v for v in (s.subset(years) for s in collection) if v is not None]
    if not views:
        return []
    # one forecast call so an unseen level is reported once, not per series
    preds = gravity.forecast(fit_, [r for v in views for r in v.rows], views[0].layout)
    out, k = [], 0
    for v in views:
        for y, t in zip(v.years, v.targets):
            out.append(ForecastRecord(v.origin.iso3, v.destination.iso3, y, float(t), float(preds[k])))
            k += 1
    return out


def evaluate_models(config: RunConfig, panel: Panel, trained: TrainedModels) -> ComparisonTable:
    with stage("scale"):
        scaled = scale_panel(panel, trained.scalers)
    rows, records = [], {}
    with stage("evaluate"):
        for name in config.models:
            model = trained.models[name]
            for split_name, years in report_splits(config, trained.fit_years):
                if name == "gravity":
                    recs = gravity_records(model, panel.series, years)
                else:
                    recs = neural.forecast_records(model, scaled, years)
                if not recs:
                    raise DataError(f"no {split_name} rows to evaluate for {name}")
                truth, fc = records_to_matrices(recs, by_year=True)
                rows.append((name, split_name, report(truth, fc)))
                records[(name, split_name)] = recs
    with stage("summarize"):
        summary = summarize(panel)
    return ComparisonTable(rows, summary, records)


# ---------------------------------------------------------------- reports


def _fmt(v) -> str:
    return repr(float(v))


def write_scatter_csv(path, table: ComparisonTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", "split", "origin", "destination", "year", "truth", "forecast"))
        for (model, split_name), recs in table.records.items():
            for r in sorted(recs, key=lambda r: (r.origin, r.destination, r.year)):
                w.writerow((model, split_name, r.origin, r.destination, r.year, _fmt(r.truth), _fmt(r.forecast)))


def heatmap_rows(table: ComparisonTable) -> list[tuple]:
    """(model, split, destination, year, truth_incoming, forecast_incoming, signed_error).

    Within each (model, split) block destinations are listed by descending
    total ground-truth incoming flow (ties by code) and years ascend.
    """
    out = []
    for (model, split_name), recs in table.records.items():
        truth: dict[tuple[str, int], float] = {}
        fc: dict[tuple[str, int], float] = {}
        for r in recs:
            key = (r.destination, r.year)
            truth[key] = truth.get(key, 0.0) + r.truth
            fc[key] = fc.get(key, 0.0) + r.forecast
        by_dest: dict[str, float] = {}
        for (d, _), v in truth.items():
            by_dest[d] = by_dest.get(d, 0.0) + v
        order = sorted(by_dest, key=lambda d: (-by_dest[d], d))
        for d in order:
            for y in sorted(y for dd, y in truth if dd == d):
                t, f = truth[(d, y)], fc[(d, y)]
                out.append((model, split_name, d, y, t, f, f - t))
    return out


def write_heatmap_csv(path, table: ComparisonTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", "split", "destination", "year", "truth_incoming", "forecast_incoming", "signed_error"))
        for model, split_name, d, y, t, f, e in heatmap_rows(table):
            w.writerow((model, split_name, d, y, _fmt(t), _fmt(f), _fmt(e)))


def write_table_csv(path, table: ComparisonTable) -> None:
    """Wide layout: one row per model, ``train - test`` pairs per metric."""
    splits = [s for s in SPLIT_ORDER if any(r[1] == s for r in table.rows)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", *METRIC_NAMES))
        for model in dict.fromkeys(r[0] for r in table.rows):
            cells = []
            for metric in METRIC_NAMES:
                cells.append(" - ".join(f"{table.value(model, s, metric):.4g}" for s in splits))
            w.writerow((model, *cells))


def write_summary_json(path, table: ComparisonTable, panel: Panel, config: RunConfig) -> None:
    doc = {
        "dataset": table.summary.as_dict(),
        "ingest": panel.report.as_dict(),
        "run": config.describe(),
        "normalization": table.rows[0][2].normalization if table.rows else None,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_reports(table: ComparisonTable, panel: Panel, config: RunConfig, out: Path) -> dict[str, Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "comparison": out / "comparison.csv",
        "table": out / "comparison_table.csv",
        "scatter": out / "scatter.csv",
        "heatmap": out / "heatmap.csv",
        "summary": out / "summary.json",
    }
    write_metrics_csv(paths["comparison"], table.rows)
    write_table_csv(paths["table"], table)
    write_scatter_csv(paths["scatter"], table)
    write_heatmap_csv(paths["heatmap"], table)
    write_summary_json(paths["summary"], table, panel, config)
    return paths


def run(config: RunConfig) -> tuple[ComparisonTable, dict[str, Path]]:
    panel = load_panel(config)
    trained = train_models(config, panel)
    with stage("report"):
        save_models(trained, config.out, config)
    table = evaluate_models(config, panel, trained)
    with stage("report"):
        paths = write_reports(table, panel, config, config.out)
    return table, paths


# ---------------------------------------------------------------- gti build


@dataclass
class GtiBuildResult:
    path: Path
    pairs: int
    skipped_pairs: list[tuple[str, str]]
    missing: int
    total: int
    unavailable_series: int
    transport_calls: int

    @property
    def coverage(self) -> float:
        return 1.0 - self.missing / self.total if self.total else 1.0


def gti_build(config: RunConfig, registry: CountryRegistry | None = None) -> GtiBuildResult:
    """Fetch (or replay) every series the flow file's pairs need and write a gti CSV."""
    with stage("config"):
        if config.flows is None or not config.flows.is_file():
            raise ParameterError("gti-build needs an existing flows file to enumerate pairs")
        if config.fixtures is not None and not config.fixtures.is_file():
            raise ParameterError(f"fixture file {config.fixtures} does not exist")
    with stage("gti"):
        registry = registry or CountryRegistry.bundled()
        if config.keywords is not None:
            variants = read_variant_table(config.variants) if config.variants else None
            universe = build_universe(read_base_table(config.keywords), variants)
        else:
            universe = default_universe()
        flows, _ = read_flows(config.flows)
        pairs = sorted({(o, d) for o, d, _ in flows})

        if config.fixtures is not None:
            transport = FixtureTransport.from_csv(config.fixtures)
            limiter = None
        elif config.offline:
            transport, limiter = None, None
        else:
            transport = LiveTransport({c.iso3: c.iso2 for c in registry if c.iso2})
            limiter = TokenBucket(config.requests_per_second)
        cache = TrendsCache(config.cache or config.out / "gti-cache")
        fetcher = Fetcher(cache, transport, limiter, offline=config.offline)

        requests: dict[tuple[str, str], None] = {}
        for o in sorted({o for o, _ in pairs}):
            for kw in universe.texts():
                requests[(kw, o)] = None
        for o, d in pairs:
            dest = registry[d]
            for kw in bilateral_keywords(universe, dest) + destination_keywords(dest):
                requests[(kw, o)] = None

        def fetch(req):
            try:
                fetcher.fetch(*req)
                return 0
            except (CacheMissError, RateLimitError):
                raise
            except FetchError as exc:
                if exc.retriable:
                    raise
                log.debug("unavailable: %s", exc)
                return 1

        reqs = list(requests)
        if config.fetch_parallelism > 1:
            with ThreadPoolExecutor(max_workers=config.fetch_parallelism) as pool:
                unavailable = sum(pool.map(fetch, reqs))
        else:
            unavailable = sum(fetch(r) for r in reqs)

        assemblies, skipped = [], []
        for o, d in pairs:
            try:
                assemblies.append(assemble(universe, registry.get(o), registry[d], FEATURE_YEARS, cache))
            except AssemblyError as exc:
                log.warning("skipping %s->%s: %s", o, d, exc)
                skipped.append((o, d))
        if not assemblies:
            raise DataError("no pair has destination GTI; nothing to write")
        path = config.gti_out or config.out / "gti.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_gti_csv(path, assemblies)
    return GtiBuildResult(
        path=path,
        pairs=len(assemblies),
        skipped_pairs=skipped,
        missing=sum(a.missing for a in assemblies),
        total=sum(a.total for a in assemblies),
        unavailable_series=unavailable,
        transport_calls=getattr(transport, "calls", 0),
    )
