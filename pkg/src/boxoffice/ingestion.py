"""Daily pageview retrieval with rate limiting, retries and an on-disk cache.

Days a provider does not report are stored as zero views and tallied in
``filled_days``; the cumulative-view feature needs a total, and absent rows
meant no recorded traffic in the historical statistics services.
"""

from __future__ import annotations

import hashlib
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import requests

from ._util import RateLimiter, read_json, write_json
from .core import (
    AlignedFilm,
    Dataset,
    FilmRecord,
    Manifest,
    PageviewSeries,
    article_language,
    date_of,
    load_catalog,
    offset_of,
    quoted_article_title,
    series_from_json,
    series_to_json,
)
from .errors import (
    ArticleNotFoundError,
    DataIntegrityError,
    EmptyDatasetError,
    FetchError,
    ProviderError,
    QuotaExceededError,
)

log = logging.getLogger(__name__)

DEFAULT_WINDOW_START = -49


@dataclass(frozen=True)
class FetchRequest:
    article_url: str
    release_date: date
    start: int = DEFAULT_WINDOW_START
    end: int = 0

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"empty offset range [{self.start}, {self.end}]")

    @property
    def first_day(self) -> date:
        return date_of(self.start, self.release_date)

    @property
    def last_day(self) -> date:
        return date_of(self.end, self.release_date)


@dataclass(frozen=True)
class ProviderPolicy:
    max_concurrent: int = 4
    min_request_interval: float = 0.0  # seconds
    max_attempts: int = 3
    backoff: float = 0.5  # seconds before the 2nd attempt, doubled after each failure

    def __post_init__(self):
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be positive")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if self.min_request_interval < 0 or self.backoff < 0:
            raise ValueError("durations must be nonnegative")

    @classmethod
    def from_config(cls, cfg: Mapping) -> "ProviderPolicy":
        kw = {}
        if "max_concurrent" in cfg:
            kw["max_concurrent"] = int(cfg["max_concurrent"])
        if "min_request_interval_ms" in cfg:
            kw["min_request_interval"] = float(cfg["min_request_interval_ms"]) / 1000.0
        if "max_attempts" in cfg:
            kw["max_attempts"] = int(cfg["max_attempts"])
        if "backoff_ms" in cfg:
            kw["backoff"] = float(cfg["backoff_ms"]) / 1000.0
        return cls(**kw)

    def limiter(self) -> RateLimiter:
        return RateLimiter(self.max_concurrent, self.min_request_interval)


# --- providers --------------------------------------------------------------

class PageviewProvider(Protocol):
    def daily_counts(self, article_url: str, start: date, end: date) -> Mapping[date, int]:
        """Views per day in [start, end]; days without data may be omitted."""
        ...


class FixturePageviewProvider:
    """Serves canned counts: ``{article_url: {"YYYY-MM-DD": views}}``."""

    def __init__(self, data: Mapping[str, Mapping[str, int]]):
        self.data = {url: {date.fromisoformat(d): int(v) for d, v in days.items()}
                     for url, days in data.items()}
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path) -> "FixturePageviewProvider":
        return cls(read_json(path))

    def daily_counts(self, article_url: str, start: date, end: date) -> dict[date, int]:
        with self._lock:
            self.calls += 1
        days = self.data.get(article_url)
        if days is None:
            raise ArticleNotFoundError(f"no pageview data for {article_url}")
        return {d: v for d, v in days.items() if start <= d <= end}


class HttpPageviewProvider:
    """Per-article daily counts from an HTTP JSON service.

    ``endpoint_template`` takes ``{project}``, ``{article}``, ``{start}`` and
    ``{end}`` placeholders (dates as YYYYMMDD). Responses may be in the
    Wikimedia REST shape (``items[].timestamp/views``) or a flat
    ``{"daily": {"YYYY-MM-DD": views}}`` object.
    """

    def __init__(self, endpoint_template: str, session: requests.Session | None = None,
                 timeout: float = 30.0, user_agent: str = "boxoffice-pageviews/0.1"):
        self.endpoint_template = endpoint_template
        self.session = session or requests.Session()
        self.timeout = timeout
        self.headers = {"User-Agent": user_agent}

    def url_for(self, article_url: str, start: date, end: date) -> str:
        return self.endpoint_template.format(
            project=f"{article_language(article_url)}.wikipedia",
            article=quoted_article_title(article_url),
            start=start.strftime("%Y%m%d"),
            end=end.strftime("%Y%m%d"),
        )

    def daily_counts(self, article_url: str, start: date, end: date) -> dict[date, int]:
        url = self.url_for(article_url, start, end)
        try:
            resp = self.session.get(url, headers=self.headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise ProviderError(f"pageview provider unreachable for {article_url}", str(exc)) from exc
        if resp.status_code == 404:
            raise ArticleNotFoundError(f"pageview provider has no data for {article_url}")
        if resp.status_code == 403:
            raise QuotaExceededError(f"pageview provider refused access (HTTP 403)")
        if resp.status_code != 200:
            raise ProviderError(f"pageview provider returned HTTP {resp.status_code}", resp.text[:500])
        try:
            body = resp.json()
        except ValueError as exc:
            raise ProviderError("pageview provider returned non-JSON body", str(exc)) from exc
        return parse_pageview_response(body)


def parse_pageview_response(body: Mapping) -> dict[date, int]:
    if "items" in body:
        out = {}
        for item in body["items"]:
            ts = str(item["timestamp"])
            out[datetime.strptime(ts[:8], "%Y%m%d").date()] = int(item["views"])
        return out
    if "daily" in body:
        return {date.fromisoformat(k): int(v) for k, v in body["daily"].items()}
    raise ProviderError("unrecognised pageview response shape", repr(body)[:200])


# --- cache ------------------------------------------------------------------

class CacheStore:
    """Directory of pageview-series JSON files plus an ``index.json`` sidecar.

    Entries are keyed per (article_url, date): the sidecar records, per
    article, the covered date span and which dates were zero-filled, so a
    later request for any sub-window is served without the provider.
    """

    INDEX = "index.json"

    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._index_lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}

    @staticmethod
    def filename_for(article_url: str) -> str:
        return hashlib.sha1(article_url.encode("utf-8")).hexdigest()[:20] + ".json"

    def path_for(self, article_url: str) -> Path:
        return self.directory / self.filename_for(article_url)

    def lock_for(self, article_url: str) -> threading.Lock:
        with self._index_lock:
            return self._key_locks.setdefault(article_url, threading.Lock())

    def _read_index(self) -> dict:
        p = self.directory / self.INDEX
        return read_json(p) if p.exists() else {}

    def get(self, article_url: str, first: date, last: date) -> tuple[dict[date, int], set[date]] | None:
        """Cached counts and zero-filled dates for [first, last], or None on a miss."""
        with self._index_lock:
            meta = self._read_index().get(article_url)
        if meta is None:
            return None
        if not (date.fromisoformat(meta["first"]) <= first and last <= date.fromisoformat(meta["last"])):
            return None
        path = self.directory / meta["file"]
        if not path.exists():
            return None
        series, release = series_from_json(read_json(path))
        counts = {}
        for off, v in series.daily.items():
            d = date_of(off, release)
            if first <= d <= last:
                counts[d] = v
        filled = {date.fromisoformat(s) for s in meta.get("filled", [])}
        return counts, {d for d in filled if first <= d <= last}

    def put(self, article_url: str, release_date: date, counts: Mapping[date, int], filled: set[date],
            attempts: int = 1) -> None:
        """Merge ``counts`` (contiguous days) into the article's cached series.

        ``attempts`` is the provider attempt count that produced ``counts``;
        it is kept so later reports can describe the series' provenance.
        """
        with self._index_lock:
            meta = self._read_index().get(article_url)
        merged: dict[date, int] = {}
        filled_all: set[date] = set()
        if meta is not None and (self.directory / meta["file"]).exists():
            old, old_release = series_from_json(read_json(self.directory / meta["file"]))
            merged = {date_of(off, old_release): v for off, v in old.daily.items()}
            filled_all = {date.fromisoformat(s) for s in meta.get("filled", [])}
        for d, v in counts.items():
            if d in filled:
                if d in merged and d not in filled_all:
                    continue  # a real count beats a zero fill
                filled_all.add(d)
            else:
                filled_all.discard(d)
            merged[d] = v
        days = sorted(merged)
        # keep the file gap-free: only the contiguous span containing the new data is retained
        lo, hi = min(counts), max(counts)
        while lo - timedelta(days=1) in merged:
            lo -= timedelta(days=1)
        while hi + timedelta(days=1) in merged:
            hi += timedelta(days=1)
        days = [d for d in days if lo <= d <= hi]
        daily = {offset_of(d, release_date): merged[d] for d in days}
        series = PageviewSeries(article_url, daily, (min(daily), max(daily)))
        fname = self.filename_for(article_url)
        write_json(self.directory / fname, series_to_json(series, release_date))
        with self._index_lock:
            index = self._read_index()
            index[article_url] = {
                "file": fname,
                "first": lo.isoformat(),
                "last": hi.isoformat(),
                "filled": sorted(d.isoformat() for d in filled_all if lo <= d <= hi),
                "attempts": attempts,
            }
            write_json(self.directory / self.INDEX, dict(sorted(index.items())))

    def attempts_for(self, article_url: str) -> int:
        with self._index_lock:
            return int(self._read_index().get(article_url, {}).get("attempts", 1))

    def load_series(self, article_url: str, release_date: date, start: int, end: int) -> PageviewSeries:
        """Series for an offset window, strictly from cache; KeyError on a miss."""
        hit = self.get(article_url, date_of(start, release_date), date_of(end, release_date))
        if hit is None:
            raise KeyError(article_url)
        counts, filled = hit
        daily = {offset_of(d, release_date): v for d, v in counts.items()}
        return PageviewSeries(article_url, daily, (start, end), filled_days=len(filled))


# --- fetching ---------------------------------------------------------------

def _fetch(req: FetchRequest, provider: PageviewProvider, policy: ProviderPolicy, cache: CacheStore,
           limiter: RateLimiter, sleep: Callable[[float], None]) -> tuple[PageviewSeries, int, bool]:
    """Series, provider attempts that produced it, and whether it came from the cache."""
    with cache.lock_for(req.article_url):
        try:
            series = cache.load_series(req.article_url, req.release_date, req.start, req.end)
            return series, cache.attempts_for(req.article_url), True
        except KeyError:
            pass

        first, last = req.first_day, req.last_day
        attempts = 0
        delay = policy.backoff
        while True:
            attempts += 1
            try:
                with limiter.slot():
                    raw = provider.daily_counts(req.article_url, first, last)
                break
            except ProviderError as exc:
                if attempts >= policy.max_attempts:
                    raise FetchError(req.article_url, exc.diagnostic, attempts) from exc
                log.debug("retrying %s after %s (attempt %d)", req.article_url, exc, attempts)
                sleep(delay)
                delay *= 2
            except (ArticleNotFoundError, QuotaExceededError) as exc:
                raise FetchError(req.article_url, str(exc), attempts) from exc

        counts: dict[date, int] = {}
        filled: set[date] = set()
        day = first
        while day <= last:
            v = raw.get(day)
            if v is None:
                filled.add(day)
                v = 0
            elif v < 0:
                raise DataIntegrityError(f"negative view count {v} for {req.article_url} on {day}")
            counts[day] = int(v)
            day += timedelta(days=1)
        cache.put(req.article_url, req.release_date, counts, filled, attempts)
        daily = {offset_of(d, req.release_date): v for d, v in counts.items()}
        return PageviewSeries(req.article_url, daily, (req.start, req.end), filled_days=len(filled)), attempts, False


def fetch_series(req: FetchRequest, provider: PageviewProvider, policy: ProviderPolicy, cache: CacheStore,
                 limiter: RateLimiter | None = None, sleep: Callable[[float], None] = time.sleep) -> PageviewSeries:
    """Series covering exactly ``req``'s offsets; a cache hit skips the provider."""
    return _fetch(req, provider, policy, cache, limiter or policy.limiter(), sleep)[0]


@dataclass
class FetchOutcome:
    """Per-film result. ``attempts`` counts the provider calls that produced the
    series, whether in this run or in the run that filled the cache, so a
    warm rerun reports the same outcome as the cold run."""

    article_url: str
    status: str  # "ok" | "failed"
    attempts: int
    filled_days: int
    reason: str | None = None
    cached: bool = field(default=False, compare=False)

    def to_json(self) -> dict:
        doc = {"article_url": self.article_url, "status": self.status,
               "attempts": self.attempts, "filled_days": self.filled_days}
        if self.reason is not None:
            doc["reason"] = self.reason
        return doc


@dataclass
class FetchReport:
    films: list[FetchOutcome] = field(default_factory=list)

    @property
    def failures(self) -> list[FetchOutcome]:
        return [f for f in self.films if f.status == "failed"]

    @property
    def filled_days(self) -> int:
        return sum(f.filled_days for f in self.films)

    @property
    def cache_hits(self) -> int:
        return sum(f.cached for f in self.films)

    def to_json(self) -> dict:
        return {"films": [f.to_json() for f in self.films]}


def manifest_records(manifest: Manifest, records: Sequence[FilmRecord] | None = None) -> list[FilmRecord]:
    """Catalog records for each manifest entry, in manifest order."""
    if records is None:
        path = manifest.catalog_path()
        if path is None:
            raise ValueError("manifest names no catalog and no records were given")
        records = load_catalog(path, manifest.market)
    by_key = {r.key: r for r in records}
    out = []
    for e in manifest.entries:
        try:
            out.append(by_key[e.catalog_key])
        except KeyError:
            raise ValueError(f"manifest entry {e.title!r} ({e.release_date}) not in catalog") from None
    return out


def fetch_dataset(manifest: Manifest, provider: PageviewProvider, policy: ProviderPolicy, cache: CacheStore,
                  records: Sequence[FilmRecord] | None = None, window_end: int = 0,
                  sleep: Callable[[float], None] = time.sleep) -> tuple[Dataset, FetchReport]:
    """Fetch every manifest entry; failed films are dropped and reported."""
    if not manifest.entries:
        raise EmptyDatasetError("manifest lists no films")
    recs = manifest_records(manifest, records)
    limiter = policy.limiter()

    def one(i: int):
        e, rec = manifest.entries[i], recs[i]
        req = FetchRequest(e.article_url, rec.release_date, manifest.window_start, window_end)
        try:
            series, attempts, cached = _fetch(req, provider, policy, cache, limiter, sleep)
        except (FetchError, DataIntegrityError) as exc:
            return None, FetchOutcome(e.article_url, "failed", getattr(exc, "attempts", 1), 0, str(exc))
        film = AlignedFilm(rec, e.article_url, series, e.alignment_method)
        return film, FetchOutcome(e.article_url, "ok", attempts, series.filled_days, cached=cached)

    with ThreadPoolExecutor(max_workers=policy.max_concurrent) as pool:
        results = list(pool.map(one, range(len(manifest.entries))))

    report = FetchReport([o for _, o in results])
    films = [f for f, _ in results if f is not None]
    if not films:
        raise EmptyDatasetError(f"all {len(results)} film(s) failed to fetch")
    return Dataset(manifest.market, tuple(films), manifest.window_start), report


def load_dataset(manifest: Manifest, cache: CacheStore, records: Sequence[FilmRecord] | None = None,
                 window_end: int = 0) -> Dataset:
    """Assemble a dataset from the cache alone; films missing from it are skipped."""
    recs = manifest_records(manifest, records)
    films = []
    for e, rec in zip(manifest.entries, recs):
        try:
            series = cache.load_series(e.article_url, rec.release_date, manifest.window_start, window_end)
        except KeyError:
            log.warning("no cached pageviews for %s; skipping", e.article_url)
            continue
        films.append(AlignedFilm(rec, e.article_url, series, e.alignment_method))
    if not films:
        raise EmptyDatasetError("no manifest film has cached pageviews")
    return Dataset(manifest.market, tuple(films), manifest.window_start)
