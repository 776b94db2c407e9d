"""Google Trends Index features.

Builds the multilingual keyword universe, fetches monthly trends series
through a pluggable transport with an on-disk cache, averages them per
calendar year and assembles the unilateral, bilateral and destination GTI
vectors for an origin-destination pair.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import threading
import time
import unicodedata
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .errors import (
    AssemblyError,
    CacheMissError,
    DataError,
    FetchError,
    ParameterError,
    ParseError,
    RateLimitError,
)
from .panel import LANGUAGES, CountryCode

log = logging.getLogger(__name__)

SPAN = (2004, 2014)
GTI_MAX = 100.0


# ---------------------------------------------------------------- keywords


@dataclass(frozen=True)
class Keyword:
    text: str
    languages: tuple[str, ...]
    term: int


@dataclass(frozen=True)
class KeywordUniverse:
    base_terms: tuple[tuple[str, str, str], ...]
    keywords: tuple[Keyword, ...]
    variants: Mapping[str, tuple[str, ...]] = field(default_factory=dict, compare=False, hash=False)

    @property
    def version(self) -> str:
        """Short digest of the keyword ordering; changes whenever positions move."""
        h = hashlib.sha1()
        for kw in self.keywords:
            h.update(f"{kw.text}|{','.join(kw.languages)}\n".encode())
        return h.hexdigest()[:12]

    def __len__(self):
        return len(self.keywords)

    def texts(self) -> list[str]:
        return [kw.text for kw in self.keywords]


def strip_accents(text: str) -> str:
    decomposed = unicodedata.normalize("NFKD", text)
    return "".join(ch for ch in decomposed if not unicodedata.combining(ch))


def read_base_table(path) -> list[tuple[str, str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames[:3]] != ["english", "french", "spanish"]:
            raise ParseError(path, 1, "keyword table header must be english,french,spanish")
        out = []
        for lineno, row in enumerate(reader, start=2):
            triple = tuple((row.get(c) or "").strip() for c in ("english", "french", "spanish"))
            if not all(triple):
                raise ParseError(path, lineno, "each keyword row needs all three languages")
            out.append(triple)
    return out


def read_variant_table(path) -> dict[str, tuple[str, ...]]:
    out: dict[str, list[str]] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"keyword", "variant"} <= set(reader.fieldnames):
            raise ParseError(path, 1, "variant table header must be keyword,variant")
        for lineno, row in enumerate(reader, start=2):
            kw, var = (row["keyword"] or "").strip(), (row["variant"] or "").strip()
            if not kw or not var:
                raise ParseError(path, lineno, "empty keyword or variant")
            out[kw].append(var)
    return {k: tuple(v) for k, v in out.items()}


def _bundled(name: str) -> Path:
    ref = resources.files("migcast") / "data" / name
    with resources.as_file(ref) as p:
        return Path(p)


def default_universe() -> KeywordUniverse:
    return build_universe(
        read_base_table(_bundled("keywords.csv")),
        read_variant_table(_bundled("keyword_variants.csv")),
    )


def build_universe(
    base_table: Sequence[Sequence[str]] | str | Path,
    variants: Mapping[str, Sequence[str]] | None = None,
) -> KeywordUniverse:
    """Expand (english, french, spanish) triples into an ordered keyword list.

    Each language form contributes itself, its declared variants, and the
    accent-stripped spelling of every one of those. Identical spellings inside
    a term merge into one keyword carrying all their languages; a spelling
    already claimed by an earlier term is skipped with a warning.
    """
    if isinstance(base_table, (str, Path)):
        base_table = read_base_table(base_table)
    variants = {k: tuple(v) for k, v in (variants or {}).items()}
    terms = tuple(tuple(t) for t in base_table)

    order: list[str] = []
    owner: dict[str, int] = {}
    langs: dict[str, list[str]] = {}
    for term_idx, triple in enumerate(terms):
        if len(triple) != 3:
            raise DataError(f"keyword row {term_idx} is not an (english, french, spanish) triple")
        for lang, form in zip(LANGUAGES, triple):
            expanded = [form, *variants.get(form, ())]
            expanded += [strip_accents(x) for x in expanded]
            for text in dict.fromkeys(expanded):
                if text not in owner:
                    owner[text] = term_idx
                    langs[text] = [lang]
                    order.append(text)
                elif owner[text] == term_idx:
                    if lang not in langs[text]:
                        langs[text].append(lang)
                else:
                    log.warning(
                        "keyword %r of term %r already listed under term %r; deduplicated",
                        text, triple[0], terms[owner[text]][0],
                    )
    keywords = tuple(Keyword(t, tuple(langs[t]), owner[t]) for t in order)
    return KeywordUniverse(terms, keywords, variants)


def bilateral_keywords(universe: KeywordUniverse, destination: CountryCode) -> list[str]:
    """Each keyword followed by the destination's name in each of its languages."""
    out = []
    for kw in universe.keywords:
        for lang in kw.languages:
            out.append(f"{kw.text} {destination.name_in(lang)}")
    return out


def destination_keywords(destination: CountryCode) -> list[str]:
    """Distinct localized names of the destination country."""
    return list(dict.fromkeys(destination.name_in(lang) for lang in LANGUAGES))


# ---------------------------------------------------------------- series


@dataclass(frozen=True)
class MonthlySeries:
    keyword: str
    geography: str
    months: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        months = tuple((int(y), int(m), float(v)) for y, m, v in self.months)
        object.__setattr__(self, "months", months)
        prev = None
        for y, m, v in months:
            if not 1 <= m <= 12:
                raise DataError(f"{self.keyword}/{self.geography}: bad month {m}")
            if not (0.0 <= v <= GTI_MAX):
                raise DataError(f"{self.keyword}/{self.geography}: value {v} outside [0, 100]")
            if prev is not None and (y, m) <= prev:
                raise DataError(f"{self.keyword}/{self.geography}: months not strictly increasing")
            prev = (y, m)


@dataclass(frozen=True)
class AnnualGti:
    keyword: str
    geography: str
    values: Mapping[int, float]


def annualize(series: MonthlySeries) -> AnnualGti:
    """Mean of the available monthly values in each calendar year."""
    if not series.months:
        raise DataError(f"{series.keyword}/{series.geography}: empty monthly series")
    by_year: dict[int, list[float]] = defaultdict(list)
    for y, _, v in series.months:
        if not (0.0 <= v <= GTI_MAX):
            raise DataError(f"value {v} outside [0, 100]")
        by_year[y].append(v)
    return AnnualGti(series.keyword, series.geography, {y: float(np.mean(vs)) for y, vs in sorted(by_year.items())})


# ---------------------------------------------------------------- transports


class TransportFailure(Exception):
    """Transient transport problem; the fetcher retries these."""


class QuotaExhausted(Exception):
    """The upstream service refuses further requests for now."""


class TrendsTransport(Protocol):
    def fetch_monthly(self, keyword: str, geography: str, start: int, end: int) -> list[tuple[int, int, float]]:
        ...


class FixtureTransport:
    """Replays recorded series from a ``keyword,geography,year,month,value`` CSV."""

    def __init__(self, records: Mapping[tuple[str, str], Sequence[tuple[int, int, float]]]):
        self._records = {k: sorted(v) for k, v in records.items()}
        self.calls = 0

    @classmethod
    def from_csv(cls, path) -> "FixtureTransport":
        recs: dict[tuple[str, str], list] = defaultdict(list)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            need = {"keyword", "geography", "year", "month", "value"}
            if reader.fieldnames is None or not need <= set(reader.fieldnames):
                raise ParseError(path, 1, "fixture header must be keyword,geography,year,month,value")
            for lineno, row in enumerate(reader, start=2):
                try:
                    recs[(row["keyword"], row["geography"])].append(
                        (int(row["year"]), int(row["month"]), float(row["value"]))
                    )
                except ValueError:
                    raise ParseError(path, lineno, "bad year, month or value") from None
        return cls(recs)

    def fetch_monthly(self, keyword, geography, start, end):
        self.calls += 1
        try:
            rows = self._records[(keyword, geography)]
        except KeyError:
            raise FetchError(f"no fixture for keyword={keyword!r} geography={geography!r}", retriable=False) from None
        return [r for r in rows if start <= r[0] <= end]


class LiveTransport:
    """Best-effort adapter over the unofficial Google Trends API (``pytrends``).

    ``geo_codes`` maps ISO3 codes to the ISO2 codes Google expects. The
    upstream API is unstable, so recorded fixtures remain the reference.
    """

    def __init__(self, geo_codes: Mapping[str, str], hl: str = "en-US", tz: int = 0):
        self.geo_codes = dict(geo_codes)
        self.hl = hl
        self.tz = tz
        self._client = None
        self.calls = 0

    def _session(self):
        if self._client is None:
            try:
                from pytrends.request import TrendReq
            except ImportError:
                raise FetchError("live fetching needs the optional 'pytrends' package", retriable=False) from None
            self._client = TrendReq(hl=self.hl, tz=self.tz)
        return self._client

    def fetch_monthly(self, keyword, geography, start, end):
        self.calls += 1
        client = self._session()
        geo = self.geo_codes.get(geography)
        if not geo:
            raise FetchError(f"no ISO2 code known for {geography}", retriable=False)
        try:
            client.build_payload([keyword], timeframe=f"{start}-01-01 {end}-12-31", geo=geo)
            df = client.interest_over_time()
        except Exception as exc:
            status = getattr(getattr(exc, "response", None), "status_code", None)
            if status == 429:
                raise QuotaExhausted(str(exc)) from exc
            raise TransportFailure(str(exc)) from exc
        if df is None or df.empty or keyword not in df:
            return []
        return [(ts.year, ts.month, float(v)) for ts, v in df[keyword].items()]


class TokenBucket:
    """Thread-safe token bucket limiting request rate."""

    def __init__(self, rate: float, capacity: float = 1.0, clock=time.monotonic, sleep=time.sleep):
        if rate <= 0 or capacity <= 0:
            raise ParameterError("rate and capacity must be positive")
        self.rate = rate
        self.capacity = capacity
        self._tokens = capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


# ---------------------------------------------------------------- cache


def _geo_file_part(geography: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in geography)


class TrendsCache:
    """On-disk cache of monthly series plus derived per-geography annual tables.

    Layout inside ``directory``::

        monthly_<GEO>.csv   keyword,span_start,span_end,year,month,value
        <GEO>.csv           keyword,year,gti

    Monthly values are stored with ``repr`` so reads are lossless. A series
    with no months is recorded as a single row with empty year/month/value.
    """

    MONTHLY_HEADER = ("keyword", "span_start", "span_end", "year", "month", "value")
    ANNUAL_HEADER = ("keyword", "year", "gti")

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._loaded: dict[str, dict[tuple[str, int, int], list[tuple[int, int, float]]]] = {}

    def _monthly_path(self, geo):
        return self.directory / f"monthly_{_geo_file_part(geo)}.csv"

    def annual_path(self, geo):
        return self.directory / f"{_geo_file_part(geo)}.csv"

    def _load(self, geo):
        if geo in self._loaded:
            return self._loaded[geo]
        table: dict[tuple[str, int, int], list] = {}
        path = self._monthly_path(geo)
        if path.exists():
            with open(path, newline="", encoding="utf-8") as fh:
                for lineno, row in enumerate(csv.DictReader(fh), start=2):
                    try:
                        key = (row["keyword"], int(row["span_start"]), int(row["span_end"]))
                        months = table.setdefault(key, [])
                        if row["year"]:
                            months.append((int(row["year"]), int(row["month"]), float(row["value"])))
                    except (KeyError, ValueError):
                        raise ParseError(path, lineno, "corrupt cache row") from None
        self._loaded[geo] = table
        return table

    def get(self, keyword: str, geography: str, span=SPAN) -> MonthlySeries | None:
        with self._lock:
            months = self._load(geography).get((keyword, span[0], span[1]))
        if months is None:
            return None
        return MonthlySeries(keyword, geography, tuple(months))

    def put(self, series: MonthlySeries, span=SPAN) -> None:
        with self._lock:
            table = self._load(series.geography)
            key = (series.keyword, span[0], span[1])
            if key in table:
                return
            table[key] = list(series.months)
            path = self._monthly_path(series.geography)
            new = not path.exists()
            with open(path, "a", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                if new:
                    w.writerow(self.MONTHLY_HEADER)
                if series.months:
                    for y, m, v in series.months:
                        w.writerow([series.keyword, span[0], span[1], y, m, repr(float(v))])
                else:
                    w.writerow([series.keyword, span[0], span[1], "", "", ""])
            self._write_annual(series.geography, table)

    def _write_annual(self, geo, table):
        rows = []
        for (kw, _, _), months in table.items():
            if months:
                for y, v in annualize(MonthlySeries(kw, geo, tuple(months))).values.items():
                    rows.append((kw, y, v))
        rows.sort()
        with open(self.annual_path(geo), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.ANNUAL_HEADER)
            for kw, y, v in rows:
                w.writerow([kw, y, repr(v)])

    def annual(self, keyword: str, geography: str, span=SPAN) -> AnnualGti | None:
        series = self.get(keyword, geography, span)
        if series is None:
            return None
        if not series.months:
            return AnnualGti(keyword, geography, {})
        return annualize(series)


# ---------------------------------------------------------------- fetching


class Fetcher:
    """Cache-first fetching with retries, backoff and a shared rate limiter.

    With ``transport=None`` (offline, no fixtures) every cache miss raises
    :class:`CacheMissError`. ``offline=True`` refuses a :class:`LiveTransport`.
    """

    def __init__(
        self,
        cache: TrendsCache,
        transport: TrendsTransport | None = None,
        limiter: TokenBucket | None = None,
        max_retries: int = 4,
        backoff: float = 2.0,
        sleep=time.sleep,
        offline: bool = False,
    ):
        if offline and isinstance(transport, LiveTransport):
            transport = None
        self.cache = cache
        self.transport = transport
        self.limiter = limiter
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep

    def fetch(self, keyword: str, geography: str, span=SPAN) -> MonthlySeries:
        if not (SPAN[0] <= span[0] <= span[1] <= SPAN[1]):
            raise ParameterError(f"span {span} outside {SPAN}")
        hit = self.cache.get(keyword, geography, span)
        if hit is not None:
            return hit
        if self.transport is None:
            raise CacheMissError(keyword, geography)

        delay = self.backoff
        for attempt in range(self.max_retries + 1):
            if self.limiter is not None:
                self.limiter.acquire()
            try:
                months = self.transport.fetch_monthly(keyword, geography, span[0], span[1])
                break
            except QuotaExhausted as exc:
                raise RateLimitError(f"quota exhausted fetching {keyword!r}/{geography}: {exc}") from exc
            except TransportFailure as exc:
                if attempt == self.max_retries:
                    raise FetchError(
                        f"giving up on {keyword!r}/{geography} after {attempt + 1} attempts: {exc}"
                    ) from exc
                log.info("retrying %r/%s in %.1fs: %s", keyword, geography, delay, exc)
                self._sleep(delay)
                delay *= 2
        series = MonthlySeries(keyword, geography, tuple(months))
        self.cache.put(series, span)
        return series

    def fetch_many(self, requests: Sequence[tuple[str, str]], span=SPAN, parallelism: int = 1) -> list[MonthlySeries]:
        if parallelism <= 1:
            return [self.fetch(k, g, span) for k, g in requests]
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(lambda kg: self.fetch(kg[0], kg[1], span), requests))


# ---------------------------------------------------------------- assembly


@dataclass(frozen=True, eq=False)
class GtiVectors:
    year: int
    unilateral: np.ndarray
    bilateral: np.ndarray
    destination: float

    @property
    def interaction(self) -> np.ndarray:
        return self.unilateral * self.destination


@dataclass
class GtiAssembly:
    origin: str
    destination: str
    vectors: dict[int, GtiVectors]
    missing: int = 0
    total: int = 0

    @property
    def coverage(self) -> float:
        return 1.0 - self.missing / self.total if self.total else 1.0


class AnnualLookup(Protocol):
    def annual(self, keyword: str, geography: str, span=SPAN) -> AnnualGti | None:
        ...


def assemble(
    universe: KeywordUniverse,
    origin: CountryCode,
    destination: CountryCode,
    years: Iterable[int],
    store: AnnualLookup,
) -> GtiAssembly:
    """GTI vectors of one pair for each year, read from ``store``.

    Missing keyword-years are filled with 0 and counted. The destination
    scalar is the mean over its localized-name queries present that year.
    """
    years = list(years)
    geo = origin.iso3
    uni_kw = universe.texts()
    bi_kw = bilateral_keywords(universe, destination)
    dest_kw = destination_keywords(destination)

    def table(keywords):
        return [store.annual(k, geo) for k in keywords]

    uni_tab, bi_tab, dest_tab = table(uni_kw), table(bi_kw), table(dest_kw)
    if all(a is None or not a.values for a in dest_tab):
        raise AssemblyError(f"no destination-name GTI for {destination.iso3} measured in {geo}")

    out = GtiAssembly(origin.iso3, destination.iso3, {})
    for y in years:

        def vec(tab):
            v = np.zeros(len(tab))
            for k, a in enumerate(tab):
                out.total += 1
                if a is not None and y in a.values:
                    v[k] = a.values[y]
                else:
                    out.missing += 1
            return v

        d_vals = [a.values[y] for a in dest_tab if a is not None and y in a.values]
        out.total += 1
        if not d_vals:
            out.missing += 1
        out.vectors[y] = GtiVectors(
            year=y,
            unilateral=vec(uni_tab),
            bilateral=vec(bi_tab),
            destination=float(np.mean(d_vals)) if d_vals else 0.0,
        )
    return out


GTI_CSV_HEADER = ("origin_iso3", "dest_iso3", "year", "kind", "keyword_index", "value")


def write_gti_csv(path, assemblies: Iterable[GtiAssembly]) -> int:
    """Write assembled vectors in the panel's gti-file schema; returns row count."""
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GTI_CSV_HEADER)
        for a in assemblies:
            for y in sorted(a.vectors):
                v = a.vectors[y]
                for kind, values in (("uni", v.unilateral), ("bi", v.bilateral), ("dest", [v.destination])):
                    for k, val in enumerate(values):
                        w.writerow([a.origin, a.destination, y, kind, k, repr(float(val))])
                        n += 1
    return n
