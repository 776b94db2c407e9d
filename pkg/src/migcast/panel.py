"""Panel data model: CSV ingestion, one-hot encoding, per-series min-max
scaling and the year-based train/validation/test split.

Feature columns are laid out in a fixed order (see :class:`FeatureLayout`)::

    gdp_origin, gdp_dest, pop_origin, pop_dest,
    origin one-hot, destination one-hot, year one-hot,
    bilateral GTI block, unilateral x destination GTI block,
    flow_current
"""

from __future__ import annotations

import csv
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    BoundsError,
    DataError,
    ParameterError,
    ParseError,
    RegistryError,
    ShapeError,
)

log = logging.getLogger(__name__)

FIRST_YEAR = 2004
LAST_FLOW_YEAR = 2015
#: years that carry input features; the last one forecasts the final flow year
FEATURE_YEARS: tuple[int, ...] = tuple(range(FIRST_YEAR, LAST_FLOW_YEAR))
MIN_SERIES_LENGTH = 2
OECD_MEMBERS_IN_PERIOD = 35

_ISO3 = re.compile(r"^[A-Z]{3}$")
LANGUAGES = ("en", "fr", "es")


# ---------------------------------------------------------------- countries


@dataclass(frozen=True)
class CountryCode:
    iso3: str
    name: str = ""
    localized: Mapping[str, str] = field(default_factory=dict, compare=False, hash=False)
    iso2: str = field(default="", compare=False, hash=False)

    def __post_init__(self):
        if not _ISO3.match(self.iso3):
            raise RegistryError(f"invalid ISO3 code {self.iso3!r}")
        if not self.name:
            object.__setattr__(self, "name", self.localized.get("en", self.iso3))

    def name_in(self, language: str) -> str:
        try:
            name = self.localized[language]
        except KeyError:
            name = ""
        if not name:
            raise RegistryError(f"{self.iso3} has no {language!r} display name")
        return name

    def __str__(self):
        return self.iso3


class CountryRegistry:
    """Ordered, unique collection of :class:`CountryCode`."""

    def __init__(self, countries: Iterable[CountryCode] = ()):
        self._codes: dict[str, CountryCode] = {}
        for c in countries:
            self.add(c)

    def add(self, country: CountryCode) -> None:
        if country.iso3 in self._codes:
            raise RegistryError(f"duplicate country {country.iso3}")
        self._codes[country.iso3] = country

    def __contains__(self, iso3) -> bool:
        return iso3 in self._codes

    def __getitem__(self, iso3: str) -> CountryCode:
        try:
            return self._codes[iso3]
        except KeyError:
            raise RegistryError(f"unknown country code {iso3!r}") from None

    def get(self, iso3: str) -> CountryCode:
        """Return the registered country, or a bare code when unknown."""
        return self._codes.get(iso3) or CountryCode(iso3)

    def __iter__(self):
        return iter(self._codes.values())

    def __len__(self):
        return len(self._codes)

    @classmethod
    def from_csv(cls, path) -> "CountryRegistry":
        """Read ``iso3,iso2,name_en,name_fr,name_es`` (only ``iso3`` required)."""
        reg = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if not reader.fieldnames or "iso3" not in reader.fieldnames:
                raise ParseError(path, 1, "country table needs an iso3 column")
            for lineno, row in enumerate(reader, start=2):
                iso3 = (row.get("iso3") or "").strip()
                if not _ISO3.match(iso3):
                    raise ParseError(path, lineno, f"invalid ISO3 code {iso3!r}")
                names = {
                    lang: (row.get(f"name_{lang}") or "").strip()
                    for lang in LANGUAGES
                    if (row.get(f"name_{lang}") or "").strip()
                }
                reg.add(CountryCode(iso3, localized=names, iso2=(row.get("iso2") or "").strip()))
        return reg

    @classmethod
    def bundled(cls) -> "CountryRegistry":
        """Localized names for OECD member states, shipped with the package."""
        ref = resources.files("migcast") / "data" / "countries.csv"
        with resources.as_file(ref) as path:
            return cls.from_csv(path)


# ---------------------------------------------------------------- records


@dataclass(frozen=True)
class FlowObservation:
    origin: str
    destination: str
    year: int
    migrants: float

    def __post_init__(self):
        if not FIRST_YEAR <= self.year <= LAST_FLOW_YEAR:
            raise DataError(f"year {self.year} outside [{FIRST_YEAR}, {LAST_FLOW_YEAR}]")
        if not (self.migrants >= 0 and math.isfinite(self.migrants)):
            raise DataError(f"migrant count must be a nonnegative number, got {self.migrants}")


def one_hot(index: int, width: int) -> np.ndarray:
    if not 0 <= index < width:
        raise BoundsError(f"index {index} out of range for width {width}")
    v = np.zeros(width)
    v[index] = 1.0
    return v


@dataclass(frozen=True)
class FeatureLayout:
    """Column layout shared by every feature row of a panel."""

    origins: tuple[str, ...]
    destinations: tuple[str, ...]
    years: tuple[int, ...] = FEATURE_YEARS
    n_bi: int = 0
    n_uni: int = 0

    @cached_property
    def _offsets(self) -> dict[str, slice]:
        widths = [
            ("gdp_origin", 1),
            ("gdp_dest", 1),
            ("pop_origin", 1),
            ("pop_dest", 1),
            ("onehot_origin", len(self.origins)),
            ("onehot_dest", len(self.destinations)),
            ("onehot_year", len(self.years)),
            ("gti_bilateral", self.n_bi),
            ("gti_interaction", self.n_uni),
            ("flow_current", 1),
        ]
        out, start = {}, 0
        for name, w in widths:
            out[name] = slice(start, start + w)
            start += w
        return out

    def block(self, name: str) -> slice:
        return self._offsets[name]

    @property
    def width(self) -> int:
        return self._offsets["flow_current"].stop

    @property
    def flow_column(self) -> int:
        return self._offsets["flow_current"].start

    @cached_property
    def indicator_mask(self) -> np.ndarray:
        mask = np.zeros(self.width, dtype=bool)
        for name in ("onehot_origin", "onehot_dest", "onehot_year"):
            mask[self._offsets[name]] = True
        return mask

    @cached_property
    def column_names(self) -> tuple[str, ...]:
        names = ["gdp_origin", "gdp_dest", "pop_origin", "pop_dest"]
        names += [f"origin[{c}]" for c in self.origins]
        names += [f"dest[{c}]" for c in self.destinations]
        names += [f"year[{y}]" for y in self.years]
        names += [f"gti_bi[{k}]" for k in range(self.n_bi)]
        names += [f"gti_uni_x_dest[{k}]" for k in range(self.n_uni)]
        names.append("flow_current")
        return tuple(names)

    def origin_index(self, iso3: str) -> int:
        try:
            return self.origins.index(iso3)
        except ValueError:
            raise RegistryError(f"origin {iso3!r} not in layout") from None

    def destination_index(self, iso3: str) -> int:
        try:
            return self.destinations.index(iso3)
        except ValueError:
            raise RegistryError(f"destination {iso3!r} not in layout") from None

    def year_index(self, year: int) -> int:
        try:
            return self.years.index(year)
        except ValueError:
            raise RegistryError(f"year {year} not in layout") from None


@dataclass(frozen=True, eq=False)
class FeatureRow:
    origin: str
    destination: str
    year: int
    gdp_origin: float
    gdp_dest: float
    pop_origin: float
    pop_dest: float
    onehot_origin: np.ndarray
    onehot_dest: np.ndarray
    onehot_year: np.ndarray
    gti_bilateral: np.ndarray
    gti_interaction: np.ndarray
    flow_current: float

    def vector(self) -> np.ndarray:
        return np.concatenate(
            [
                [self.gdp_origin, self.gdp_dest, self.pop_origin, self.pop_dest],
                self.onehot_origin,
                self.onehot_dest,
                self.onehot_year,
                self.gti_bilateral,
                self.gti_interaction,
                [self.flow_current],
            ]
        )


def make_row(
    layout: FeatureLayout,
    origin: str,
    destination: str,
    year: int,
    *,
    gdp_origin: float,
    gdp_dest: float,
    pop_origin: float,
    pop_dest: float,
    flow_current: float,
    gti_bilateral=None,
    gti_interaction=None,
) -> FeatureRow:
    """Build a :class:`FeatureRow` whose one-hot blocks follow ``layout``."""
    bi = np.zeros(layout.n_bi) if gti_bilateral is None else np.asarray(gti_bilateral, float)
    inter = np.zeros(layout.n_uni) if gti_interaction is None else np.asarray(gti_interaction, float)
    if bi.shape != (layout.n_bi,) or inter.shape != (layout.n_uni,):
        raise ShapeError("GTI block widths do not match the layout")
    return FeatureRow(
        origin=origin,
        destination=destination,
        year=year,
        gdp_origin=float(gdp_origin),
        gdp_dest=float(gdp_dest),
        pop_origin=float(pop_origin),
        pop_dest=float(pop_dest),
        onehot_origin=one_hot(layout.origin_index(origin), len(layout.origins)),
        onehot_dest=one_hot(layout.destination_index(destination), len(layout.destinations)),
        onehot_year=one_hot(layout.year_index(year), len(layout.years)),
        gti_bilateral=bi,
        gti_interaction=inter,
        flow_current=float(flow_current),
    )


@dataclass(frozen=True, eq=False)
class PairSeries:
    """Chronological feature rows of one origin-destination pair.

    ``targets[k]`` is the flow observed in ``years[k] + 1``.
    """

    origin: CountryCode
    destination: CountryCode
    years: tuple[int, ...]
    rows: tuple[FeatureRow, ...]
    targets: np.ndarray
    layout: FeatureLayout

    def __post_init__(self):
        n = len(self.years)
        if n < 1 or len(self.rows) != n or np.shape(self.targets) != (n,):
            raise ShapeError("years, rows and targets must have equal nonzero length")
        if any(b <= a for a, b in zip(self.years, self.years[1:])):
            raise DataError("series years must be strictly increasing")
        if any(r.year != y for r, y in zip(self.rows, self.years)):
            raise DataError("row years do not match series years")

    @property
    def key(self) -> tuple[str, str]:
        return (self.origin.iso3, self.destination.iso3)

    def __len__(self):
        return len(self.years)

    @cached_property
    def features(self) -> np.ndarray:
        x = np.vstack([r.vector() for r in self.rows])
        if x.shape[1] != self.layout.width:
            raise ShapeError("feature rows do not match the layout width")
        return x

    def subset(self, years: Iterable[int]) -> "PairSeries | None":
        """Rows whose feature year is in ``years``; None when nothing remains."""
        wanted = set(years)
        idx = [k for k, y in enumerate(self.years) if y in wanted]
        if not idx:
            return None
        if len(idx) == len(self.years):
            return self
        return PairSeries(
            origin=self.origin,
            destination=self.destination,
            years=tuple(self.years[k] for k in idx),
            rows=tuple(self.rows[k] for k in idx),
            targets=self.targets[idx],
            layout=self.layout,
        )

    def until(self, year: int) -> "PairSeries | None":
        return self.subset(y for y in self.years if y <= year)


# ---------------------------------------------------------------- scaling


@dataclass(frozen=True, eq=False)
class ScalerStats:
    minimum: np.ndarray
    maximum: np.ndarray
    flow_column: int

    def __post_init__(self):
        if self.minimum.shape != self.maximum.shape:
            raise ShapeError("min and max vectors differ in shape")
        if np.any(self.minimum > self.maximum):
            raise DataError("scaler minimum exceeds maximum")

    @property
    def span(self) -> np.ndarray:
        span = self.maximum - self.minimum
        return np.where(span > 0, span, 1.0)

    def to_dict(self) -> dict:
        return {
            "minimum": self.minimum.tolist(),
            "maximum": self.maximum.tolist(),
            "flow_column": self.flow_column,
        }

    @classmethod
    def from_dict(cls, d) -> "ScalerStats":
        return cls(np.asarray(d["minimum"], float), np.asarray(d["maximum"], float), int(d["flow_column"]))


def fit_scaler(series: PairSeries, years: Iterable[int] | None = None) -> ScalerStats:
    """Per-feature min/max over one series.

    When ``years`` is given only those rows are used; a series with none of
    them falls back to its first row. One-hot columns are passed through
    (fixed to ``[0, 1]``) since per-series scaling would erase them.
    """
    x = series.features
    if years is not None:
        wanted = set(years)
        idx = [k for k, y in enumerate(series.years) if y in wanted] or [0]
        x = x[idx]
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    mask = series.layout.indicator_mask
    lo[mask] = 0.0
    hi[mask] = 1.0
    return ScalerStats(lo, hi, series.layout.flow_column)


def transform_matrix(x, stats: ScalerStats) -> np.ndarray:
    """``(x - min) / (max - min)``; constant columns become ``x - min``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.minimum.size:
        raise ShapeError(f"expected {stats.minimum.size} feature columns, got {x.shape[-1]}")
    return (x - stats.minimum) / stats.span


def inverse_transform(values, stats: ScalerStats, column: int | None = None) -> np.ndarray:
    """Undo :func:`transform_matrix`.

    With ``column`` set, ``values`` are treated as scaled values of that single
    feature column (used for model outputs on the flow column).
    """
    values = np.asarray(values, dtype=np.float64)
    if column is None:
        if values.shape[-1] != stats.minimum.size:
            raise ShapeError(f"expected {stats.minimum.size} feature columns, got {values.shape[-1]}")
        return values * stats.span + stats.minimum
    return values * stats.span[column] + stats.minimum[column]


def scale_targets(targets, stats: ScalerStats) -> np.ndarray:
    c = stats.flow_column
    return (np.asarray(targets, float) - stats.minimum[c]) / stats.span[c]


def unscale_targets(values, stats: ScalerStats) -> np.ndarray:
    return inverse_transform(values, stats, column=stats.flow_column)


@dataclass(frozen=True, eq=False)
class ScaledSeries:
    series: PairSeries
    x: np.ndarray
    y: np.ndarray
    stats: ScalerStats

    @property
    def key(self):
        return self.series.key

    @property
    def years(self):
        return self.series.years


def transform(series: PairSeries, stats: ScalerStats) -> ScaledSeries:
    return ScaledSeries(series, transform_matrix(series.features, stats), scale_targets(series.targets, stats), stats)


# ---------------------------------------------------------------- split


@dataclass(frozen=True)
class SplitSpec:
    train: frozenset = frozenset(range(2004, 2013))
    validation: frozenset = frozenset({2013})
    test: frozenset = frozenset({2014})

    def __post_init__(self):
        for name in ("train", "validation", "test"):
            object.__setattr__(self, name, frozenset(int(y) for y in getattr(self, name)))
        if (self.train & self.validation) or (self.train & self.test) or (self.validation & self.test):
            raise ParameterError("split year sets must be pairwise disjoint")

    @property
    def fit_years(self) -> frozenset:
        """Years used for the final refit (train plus validation)."""
        return self.train | self.validation

    @classmethod
    def parse(cls, text: str) -> "SplitSpec":
        """Parse ``train=2004-2012,val=2013,test=2014``."""
        parts: dict[str, frozenset] = {}
        aliases = {"train": "train", "val": "validation", "validation": "validation", "test": "test"}
        for chunk in filter(None, (c.strip() for c in text.split(","))):
            name, _, span = chunk.partition("=")
            key = aliases.get(name.strip())
            if key is None or not span:
                raise ParameterError(f"bad split component {chunk!r}")
            lo, _, hi = span.partition("-")
            try:
                years = range(int(lo), int(hi or lo) + 1)
            except ValueError:
                raise ParameterError(f"bad year range {span!r}") from None
            parts[key] = parts.get(key, frozenset()) | frozenset(years)
        return cls(**parts)

    def format(self) -> str:
        def rng(ys):
            ys = sorted(ys)
            if not ys:
                return ""
            if ys == list(range(ys[0], ys[-1] + 1)) and len(ys) > 1:
                return f"{ys[0]}-{ys[-1]}"
            return "+".join(str(y) for y in ys)

        return f"train={rng(self.train)},val={rng(self.validation)},test={rng(self.test)}"


def split(collection: Sequence[PairSeries], spec: SplitSpec) -> dict[str, list[PairSeries]]:
    """Partition each series' (row, target) pairs by feature year."""
    out: dict[str, list[PairSeries]] = {"train": [], "validation": [], "test": []}
    for s in collection:
        for name, years in (("train", spec.train), ("validation", spec.validation), ("test", spec.test)):
            view = s.subset(years)
            if view is not None:
                out[name].append(view)
    return out


# ---------------------------------------------------------------- ingestion


@dataclass
class IngestReport:
    observations: int = 0
    series: int = 0
    origins: int = 0
    destinations: int = 0
    dropped_missing_covariates: int = 0
    dropped_outside_run: int = 0
    excluded_short_series: int = 0
    outside_window_rows: int = 0
    gti_missing_values: int = 0
    gti_total_values: int = 0
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


@dataclass
class Panel:
    series: list[PairSeries]
    layout: FeatureLayout
    origins: CountryRegistry
    destinations: CountryRegistry
    report: IngestReport

    def __iter__(self):
        return iter(self.series)

    def __len__(self):
        return len(self.series)


def _read_csv(path, required: Sequence[str]):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    missing = [c for c in required if c not in header]
    if missing:
        fh.close()
        raise ParseError(path, 1, f"missing columns {missing}; expected header {','.join(required)}")
    return fh, reader


def _check_known(registry, *codes):
    if registry is not None:
        for c in codes:
            registry[c]


def _cell_code(path, lineno, value):
    value = (value or "").strip()
    if not _ISO3.match(value):
        raise ParseError(path, lineno, f"invalid ISO3 code {value!r}")
    return value


def _cell_int(path, lineno, value, what):
    try:
        return int(str(value).strip())
    except (TypeError, ValueError):
        raise ParseError(path, lineno, f"{what} is not an integer: {value!r}") from None


def _cell_float(path, lineno, value, what):
    """Parse a decimal cell; an empty cell is a missing value (None)."""
    text = (value or "").strip()
    if text == "" or text.upper() in ("NA", "NAN"):
        return None
    try:
        out = float(text)
    except ValueError:
        raise ParseError(path, lineno, f"{what} is not a number: {value!r}") from None
    if not math.isfinite(out):
        return None
    return out


def read_flows(path, registry: CountryRegistry | None = None):
    """Return ``({(origin, dest, year): migrants}, outside_window_count)``."""
    flows: dict[tuple[str, str, int], float] = {}
    outside = 0
    fh, reader = _read_csv(path, ("origin_iso3", "destination_iso3", "year", "migrants"))
    with fh:
        for lineno, row in enumerate(reader, start=2):
            o = _cell_code(path, lineno, row["origin_iso3"])
            d = _cell_code(path, lineno, row["destination_iso3"])
            year = _cell_int(path, lineno, row["year"], "year")
            migrants = _cell_float(path, lineno, row["migrants"], "migrants")
            _check_known(registry, o, d)
            if not FIRST_YEAR <= year <= LAST_FLOW_YEAR:
                outside += 1
                continue
            if migrants is None:
                continue
            if migrants < 0:
                raise ParseError(path, lineno, f"negative migrant count {migrants}")
            flows[(o, d, year)] = FlowObservation(o, d, year, migrants).migrants
    return flows, outside


def read_indicators(path, registry: CountryRegistry | None = None):
    out: dict[tuple[str, int], tuple[float | None, float | None]] = {}
    fh, reader = _read_csv(path, ("iso3", "year", "gdp_usd", "population"))
    with fh:
        for lineno, row in enumerate(reader, start=2):
            iso = _cell_code(path, lineno, row["iso3"])
            _check_known(registry, iso)
            year = _cell_int(path, lineno, row["year"], "year")
            gdp = _cell_float(path, lineno, row["gdp_usd"], "gdp_usd")
            pop = _cell_float(path, lineno, row["population"], "population")
            out[(iso, year)] = (gdp, pop)
    return out


GTI_KINDS = ("uni", "bi", "dest")


def read_gti(path, registry: CountryRegistry | None = None):
    """Return ``({(origin, dest, year, kind): {index: value}}, widths)``."""
    values: dict[tuple, dict[int, float]] = defaultdict(dict)
    widths = {k: 0 for k in GTI_KINDS}
    fh, reader = _read_csv(path, ("origin_iso3", "dest_iso3", "year", "kind", "keyword_index", "value"))
    with fh:
        for lineno, row in enumerate(reader, start=2):
            o = _cell_code(path, lineno, row["origin_iso3"])
            d = _cell_code(path, lineno, row["dest_iso3"])
            _check_known(registry, o, d)
            year = _cell_int(path, lineno, row["year"], "year")
            kind = (row["kind"] or "").strip()
            if kind not in GTI_KINDS:
                raise ParseError(path, lineno, f"unknown GTI kind {kind!r}")
            idx = _cell_int(path, lineno, row["keyword_index"], "keyword_index")
            if idx < 0 or (kind == "dest" and idx != 0):
                raise ParseError(path, lineno, f"bad keyword_index {idx} for kind {kind}")
            val = _cell_float(path, lineno, row["value"], "value")
            # an empty value still fixes the block width; it is filled later
            widths[kind] = max(widths[kind], idx + 1)
            if val is None:
                continue
            if val < 0:
                raise ParseError(path, lineno, f"negative GTI value {val}")
            values[(o, d, year, kind)][idx] = val
    return dict(values), widths


def _longest_run(years: Sequence[int]) -> list[int]:
    """Longest run of consecutive years; ties resolve to the latest run."""
    best: list[int] = []
    run: list[int] = []
    for y in sorted(years):
        run = run + [y] if run and y == run[-1] + 1 else [y]
        if len(run) >= len(best):
            best = run
    return best


def ingest(
    flows_file,
    indicators_file,
    gti_file=None,
    registry: CountryRegistry | None = None,
    feature_years: Sequence[int] = FEATURE_YEARS,
) -> Panel:
    """Build one :class:`PairSeries` per origin-destination pair.

    ``registry`` restricts acceptable country codes (unknown codes raise
    :class:`RegistryError`); without it every well-formed code is accepted and
    display names come from the bundled OECD table where available.
    """
    flows, outside = read_flows(flows_file, registry)
    indicators = read_indicators(indicators_file, registry)
    if gti_file is not None:
        gti, widths = read_gti(gti_file, registry)
    else:
        gti, widths = {}, {k: 0 for k in GTI_KINDS}

    names = registry if registry is not None else CountryRegistry.bundled()
    origins = sorted({o for o, _, _ in flows})
    destinations = sorted({d for _, d, _ in flows})
    layout = FeatureLayout(
        origins=tuple(origins),
        destinations=tuple(destinations),
        years=tuple(feature_years),
        n_bi=widths["bi"],
        n_uni=widths["uni"],
    )
    report = IngestReport(outside_window_rows=outside)

    pair_years: dict[tuple[str, str], list[int]] = defaultdict(list)
    for o, d, y in flows:
        pair_years[(o, d)].append(y)

    feature_set = set(feature_years)
    series: list[PairSeries] = []
    for (o, d) in sorted(pair_years):
        usable = []
        for y in sorted(pair_years[(o, d)]):
            # y is a candidate feature year only when its target y+1 exists
            if y not in feature_set or (o, d, y + 1) not in flows:
                continue
            gi, pi = indicators.get((o, y), (None, None))
            gj, pj = indicators.get((d, y), (None, None))
            if None in (gi, pi, gj, pj):
                report.dropped_missing_covariates += 1
                continue
            usable.append(y)
        if not usable:
            continue
        run = _longest_run(usable)
        report.dropped_outside_run += len(usable) - len(run)
        if len(run) < MIN_SERIES_LENGTH:
            report.excluded_short_series += 1
            continue
        rows = []
        for y in run:
            uni = _gti_vector(gti, (o, d, y, "uni"), layout.n_uni, report)
            bi = _gti_vector(gti, (o, d, y, "bi"), layout.n_bi, report)
            if layout.n_uni:
                dest_val = _gti_vector(gti, (o, d, y, "dest"), 1, report)[0]
            else:
                dest_val = 0.0
            rows.append(
                make_row(
                    layout, o, d, y,
                    gdp_origin=indicators[(o, y)][0],
                    gdp_dest=indicators[(d, y)][0],
                    pop_origin=indicators[(o, y)][1],
                    pop_dest=indicators[(d, y)][1],
                    flow_current=flows[(o, d, y)],
                    gti_bilateral=bi,
                    gti_interaction=uni * dest_val,
                )
            )
        series.append(
            PairSeries(
                origin=names.get(o),
                destination=names.get(d),
                years=tuple(run),
                rows=tuple(rows),
                targets=np.array([flows[(o, d, y + 1)] for y in run]),
                layout=layout,
            )
        )

    report.series = len(series)
    report.observations = sum(len(s) for s in series)
    report.origins = len({s.origin.iso3 for s in series})
    report.destinations = len({s.destination.iso3 for s in series})
    if report.destinations and report.destinations != OECD_MEMBERS_IN_PERIOD:
        report.notes.append(
            f"{report.destinations} destination countries found; the OECD had "
            f"{OECD_MEMBERS_IN_PERIOD} members over the reference period"
        )
    if report.gti_missing_values:
        report.notes.append(
            f"{report.gti_missing_values} of {report.gti_total_values} GTI values missing, filled with 0"
        )
    log.info("ingested %d series (%d observations)", report.series, report.observations)
    return Panel(
        series=series,
        layout=layout,
        origins=CountryRegistry(names.get(c) for c in origins),
        destinations=CountryRegistry(names.get(c) for c in destinations),
        report=report,
    )


def _gti_vector(gti, key, width, report: IngestReport) -> np.ndarray:
    vals = gti.get(key, {})
    out = np.zeros(width)
    for k in range(width):
        report.gti_total_values += 1
        if k in vals:
            out[k] = vals[k]
        else:
            report.gti_missing_values += 1
    return out
