"""Domain model, catalog CSV and pageview/manifest JSON formats.

Revenues stay in market-local currency; every regression is per market, so
only unitless quantities (R², relative error) are ever compared across markets.
Day offsets are ``date - release_date`` in whole days: release day is 0 and a
week before release is -7.
"""

from __future__ import annotations

import csv
import io
import os
import re
from dataclasses import dataclass, field
from datetime import date, timedelta
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping
from urllib.parse import quote, unquote, urlsplit

from ._util import read_json, write_json
from .errors import CatalogError

CATALOG_COLUMNS = ("title", "market", "release_date", "revenue", "screens")


class Market(str, Enum):
    US = "US"
    UK = "UK"
    AU = "AU"
    DE = "DE"
    JA = "JA"

    @property
    def wiki_language(self) -> str:
        return _WIKI_LANGUAGE[self]

    @property
    def film_suffix(self) -> str:
        return _FILM_SUFFIX[self.wiki_language]

    @property
    def wiki_host(self) -> str:
        return f"{self.wiki_language}.wikipedia.org"

    @classmethod
    def parse(cls, code: str) -> "Market":
        try:
            return cls(code.strip().upper())
        except ValueError:
            raise ValueError(f"unknown market {code!r}; expected one of "
                             f"{', '.join(m.value for m in cls)}") from None


_WIKI_LANGUAGE = {Market.US: "en", Market.UK: "en", Market.AU: "en", Market.DE: "de", Market.JA: "ja"}
_FILM_SUFFIX = {"en": "film", "de": "film", "ja": "映画"}


class AlignmentMethod(str, Enum):
    AUTOMATIC = "automatic"
    MANUAL = "manual"


# --- article URLs -----------------------------------------------------------

_WIKI_HOST = re.compile(r"^([a-z][a-z0-9-]*)(?:\.m)?\.wikipedia\.org$")


def canonical_article_url(url: str) -> str:
    """Rewrite an encyclopedia URL to ``https://<lang>.wikipedia.org/wiki/<Title>``.

    The title is percent-decoded and spaces become underscores; query strings
    and fragments are dropped. Raises ValueError for non-encyclopedia URLs.
    """
    parts = urlsplit(url.strip())
    host = (parts.hostname or "").lower()
    m = _WIKI_HOST.match(host)
    if not m or not parts.path.startswith("/wiki/"):
        raise ValueError(f"not an encyclopedia article URL: {url!r}")
    title = unquote(parts.path[len("/wiki/"):]).replace(" ", "_")
    if not title:
        raise ValueError(f"empty article title in {url!r}")
    return f"https://{m.group(1)}.wikipedia.org/wiki/{title}"


def article_language(url: str) -> str | None:
    """Language edition of an encyclopedia URL, or None if it is not one."""
    m = _WIKI_HOST.match((urlsplit(url).hostname or "").lower())
    return m.group(1) if m else None


def article_title(url: str) -> str:
    return canonical_article_url(url).split("/wiki/", 1)[1]


def quoted_article_title(url: str) -> str:
    return quote(article_title(url), safe="")


# --- records ----------------------------------------------------------------

@dataclass(frozen=True)
class FilmRecord:
    title: str
    market: Market
    release_date: date
    revenue: float
    screens: int

    def __post_init__(self):
        if not self.title:
            raise ValueError("title must be nonempty")
        if not self.revenue > 0:
            raise ValueError("revenue must be positive")
        if self.screens < 0:
            raise ValueError("screens must be nonnegative")

    @property
    def key(self) -> tuple[str, date]:
        return (self.title, self.release_date)


@dataclass(frozen=True)
class PageviewSeries:
    """Daily views keyed by day offset, over an inclusive ``coverage`` range.

    ``filled_days`` counts offsets the provider did not report and that were
    recorded as zero.
    """

    article_url: str
    daily: Mapping[int, int]
    coverage: tuple[int, int]
    filled_days: int = 0

    def __post_init__(self):
        lo, hi = self.coverage
        if lo > hi:
            raise ValueError(f"empty coverage {self.coverage}")
        for offset, count in self.daily.items():
            if not lo <= offset <= hi:
                raise ValueError(f"offset {offset} outside coverage [{lo}, {hi}]")
            if count < 0:
                raise ValueError(f"negative view count {count} at offset {offset}")
        object.__setattr__(self, "daily", MappingProxyType(dict(sorted(self.daily.items()))))

    def covers(self, start: int, end: int) -> bool:
        return self.coverage[0] <= start and end <= self.coverage[1]


@dataclass(frozen=True)
class AlignedFilm:
    record: FilmRecord
    article_url: str
    views: PageviewSeries
    alignment_method: AlignmentMethod = AlignmentMethod.AUTOMATIC


@dataclass(frozen=True)
class Dataset:
    market: Market
    films: tuple[AlignedFilm, ...]
    window_start: int

    def __post_init__(self):
        object.__setattr__(self, "films", tuple(self.films))

    def __len__(self) -> int:
        return len(self.films)


@dataclass
class ValidationReport:
    warnings: list[str] = field(default_factory=list)
    fatal: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.fatal

    def __bool__(self) -> bool:
        return bool(self.warnings or self.fatal)


def validate_dataset(d: Dataset) -> ValidationReport:
    report = ValidationReport()
    seen: set[str] = set()
    for film in d.films:
        rec = film.record
        label = f"{rec.title} ({rec.release_date.isoformat()})"
        if rec.market != d.market:
            report.fatal.append(f"mixed markets: {label} is {rec.market.value}, dataset is {d.market.value}")
        if film.article_url in seen:
            report.fatal.append(f"duplicate article URL: {film.article_url}")
        seen.add(film.article_url)
        if film.views.article_url != film.article_url:
            report.fatal.append(f"pageview URL mismatch for {label}: "
                                f"{film.views.article_url} != {film.article_url}")
        if article_language(film.article_url) != rec.market.wiki_language:
            report.fatal.append(f"wrong encyclopedia edition for {label}: {film.article_url}")
        if not film.views.covers(d.window_start, 0):
            lo, hi = film.views.coverage
            report.warnings.append(f"incomplete pageview coverage for {label}: "
                                   f"[{lo}, {hi}] does not span [{d.window_start}, 0]")
    return report


# --- catalog CSV ------------------------------------------------------------

_UINT = re.compile(r"^[0-9]+$")


def _parse_row(row: dict[str, str], line: int, market: Market) -> FilmRecord:
    title = row["title"].strip()
    if not title:
        raise CatalogError("title must be nonempty", line, "title")
    try:
        row_market = Market.parse(row["market"])
    except ValueError as exc:
        raise CatalogError(str(exc), line, "market") from None
    if row_market != market:
        raise CatalogError(f"market {row_market.value} does not match {market.value}", line, "market")
    try:
        release = date.fromisoformat(row["release_date"].strip())
    except ValueError:
        raise CatalogError(f"invalid release_date {row['release_date']!r}", line, "release_date") from None
    revenue_text = row["revenue"].strip()
    if not re.match(r"^-?[0-9]+$", revenue_text):
        raise CatalogError(f"invalid revenue {revenue_text!r}", line, "revenue")
    if int(revenue_text) <= 0:
        raise CatalogError("revenue must be positive", line, "revenue")
    screens_text = row["screens"].strip()
    if not _UINT.match(screens_text):
        raise CatalogError(f"invalid screens {screens_text!r}", line, "screens")
    return FilmRecord(title, market, release, int(revenue_text), int(screens_text))


def parse_catalog_lenient(data: bytes | str, market: Market) -> tuple[list[FilmRecord], list[CatalogError]]:
    """Parse every row, collecting per-row errors instead of stopping at the first.

    ``len(records) + len(errors)`` always equals the number of data rows.
    """
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    text = text.lstrip("﻿")
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise CatalogError("missing header row", 1) from None
    header = [h.strip() for h in header]
    if sorted(header) != sorted(CATALOG_COLUMNS):
        raise CatalogError(f"header must contain exactly {','.join(CATALOG_COLUMNS)}; got {','.join(header)}", 1)

    records: list[FilmRecord] = []
    errors: list[CatalogError] = []
    seen: set[tuple[str, date]] = set()
    for cells in reader:
        line = reader.line_num
        if not cells or (len(cells) == 1 and not cells[0].strip()):
            continue
        if len(cells) != len(header):
            errors.append(CatalogError(f"expected {len(header)} fields, got {len(cells)}", line))
            continue
        try:
            rec = _parse_row(dict(zip(header, cells)), line, market)
        except CatalogError as exc:
            errors.append(exc)
            continue
        if rec.key in seen:
            errors.append(CatalogError(f"duplicate film {rec.title!r} released {rec.release_date.isoformat()}",
                                       line, "title"))
            continue
        seen.add(rec.key)
        records.append(rec)
    return records, errors


def parse_catalog(data: bytes | str, market: Market) -> list[FilmRecord]:
    """Parse catalog CSV content; raises the first row error encountered."""
    records, errors = parse_catalog_lenient(data, market)
    if errors:
        raise errors[0]
    return records


def _format_revenue(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    raise ValueError(f"revenue {value!r} is not representable in the catalog format")


def serialize_catalog(records: Iterable[FilmRecord]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CATALOG_COLUMNS)
    for r in records:
        writer.writerow([r.title, r.market.value, r.release_date.isoformat(),
                         _format_revenue(r.revenue), str(r.screens)])
    return buf.getvalue().encode("utf-8")


def load_catalog(path: str | os.PathLike, market: Market) -> list[FilmRecord]:
    return parse_catalog(Path(path).read_bytes(), market)


# --- pageview series JSON ---------------------------------------------------

def series_to_json(series: PageviewSeries, release_date: date) -> dict:
    return {
        "article_url": series.article_url,
        "release_date": release_date.isoformat(),
        "daily": {str(k): int(v) for k, v in series.daily.items()},
    }


def series_from_json(obj: Mapping) -> tuple[PageviewSeries, date]:
    """Read a pageview-series document; coverage is the span of its offsets."""
    try:
        url = obj["article_url"]
        release = date.fromisoformat(obj["release_date"])
        daily = {int(k): int(v) for k, v in obj["daily"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed pageview series document: {exc}") from None
    if not daily:
        raise ValueError(f"pageview series for {url} has no days")
    offsets = sorted(daily)
    if offsets != list(range(offsets[0], offsets[-1] + 1)):
        raise ValueError(f"pageview series for {url} has gaps")
    return PageviewSeries(url, daily, (offsets[0], offsets[-1])), release


def offset_of(day: date, release_date: date) -> int:
    return (day - release_date).days


def date_of(offset: int, release_date: date) -> date:
    return release_date + timedelta(days=offset)


# --- aligned-dataset manifest ----------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    title: str
    release_date: date
    article_url: str
    pageview_file: str
    alignment_method: AlignmentMethod

    @property
    def catalog_key(self) -> tuple[str, date]:
        return (self.title, self.release_date)


@dataclass(frozen=True)
class Manifest:
    market: Market
    window_start: int
    entries: tuple[ManifestEntry, ...]
    catalog: str | None = None
    base_dir: Path | None = None

    def to_json(self) -> dict:
        doc: dict = {"market": self.market.value, "window_start": self.window_start}
        if self.catalog is not None:
            doc["catalog"] = self.catalog
        doc["entries"] = [
            {
                "catalog_key": {"title": e.title, "release_date": e.release_date.isoformat()},
                "article_url": e.article_url,
                "pageview_file": e.pageview_file,
                "alignment_method": e.alignment_method.value,
            }
            for e in self.entries
        ]
        return doc

    @classmethod
    def from_json(cls, doc: Mapping, base_dir: Path | None = None) -> "Manifest":
        try:
            market = Market.parse(doc["market"])
            window_start = int(doc["window_start"])
            entries = tuple(
                ManifestEntry(
                    title=e["catalog_key"]["title"],
                    release_date=date.fromisoformat(e["catalog_key"]["release_date"]),
                    article_url=e["article_url"],
                    pageview_file=e["pageview_file"],
                    alignment_method=AlignmentMethod(e.get("alignment_method", "automatic")),
                )
                for e in doc["entries"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed manifest: {exc}") from None
        if window_start > 0:
            raise ValueError(f"manifest window_start must be <= 0, got {window_start}")
        return cls(market, window_start, entries, doc.get("catalog"), base_dir)

    def catalog_path(self) -> Path | None:
        if self.catalog is None:
            return None
        p = Path(self.catalog)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p


def load_manifest(path: str | os.PathLike) -> Manifest:
    path = Path(path)
    return Manifest.from_json(read_json(path), base_dir=path.parent)


def save_manifest(path: str | os.PathLike, manifest: Manifest) -> None:
    write_json(path, manifest.to_json())
