"""Binding catalog titles to encyclopedia articles.

Search results for ``"<title> <film word>"`` restricted to the market's
encyclopedia edition are filtered against a list of film articles pulled
from the edition's DBpedia SPARQL endpoint; the best-ranked survivor wins.
"""

from __future__ import annotations

import json
import re
import threading
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Protocol, Sequence
from urllib.parse import unquote

import requests

from ._util import RateLimiter
from .core import (
    AlignmentMethod,
    FilmRecord,
    Market,
    article_language,
    article_title,
    canonical_article_url,
)
from .errors import ConfigurationError, ProviderError, QuotaExceededError

SPARQL_JSON = "application/sparql-results+json"
DCTERMS = "http://purl.org/dc/terms/"


@lru_cache(maxsize=None)
def edition_table() -> dict:
    """Per-language SPARQL endpoint, resource IRI base and category templates."""
    text = resources.files("boxoffice").joinpath("data/editions.json").read_text(encoding="utf-8")
    return json.loads(text)


def _edition(language: str) -> dict:
    try:
        return edition_table()[language]
    except KeyError:
        raise ConfigurationError(f"no category-name template for language {language!r}") from None


# --- film list query --------------------------------------------------------

@dataclass(frozen=True)
class FilmListQuery:
    language: str
    categories: tuple[str, ...]
    rendered: str


def build_film_list_query(language: str, years: Sequence[int], include_animation: bool = True) -> FilmListQuery:
    if not years:
        raise ValueError("years must be nonempty")
    edition = _edition(language)
    templates = edition["categories"]
    kinds = ["film", "animation"] if include_animation else ["film"]
    for kind in kinds:
        if kind not in templates:
            raise ConfigurationError(f"no {kind} category template for language {language!r}")
    years = sorted(set(int(y) for y in years))
    categories = tuple(templates[kind].format(year=y) for kind in kinds for y in years)

    namespace = edition.get("category_namespace", "Category:")
    branches = [f"{{?film dcterms:subject c:{c} .}}" for c in categories]
    body = "\n    UNION\n    ".join(branches)
    rendered = (
        f"PREFIX c: <{edition['resource_base']}{namespace}>\n"
        f"PREFIX dcterms: <{DCTERMS}>\n"
        "SELECT ?film WHERE {\n"
        f"    {body}\n"
        "}\n"
    )
    return FilmListQuery(language, categories, rendered)


# --- film list --------------------------------------------------------------

@dataclass(frozen=True)
class FilmList:
    language: str
    urls: frozenset[str]
    source: str = "unknown"
    retrieved_at: str | None = None

    def __contains__(self, url: str) -> bool:
        return url in self.urls

    def __len__(self) -> int:
        return len(self.urls)


def resource_to_article_url(iri: str, language: str) -> str:
    """Rewrite a DBpedia resource IRI of ``language`` into its article URL."""
    base = _edition(language)["resource_base"]
    if not iri.startswith(base):
        raise ValueError(f"{iri!r} is not a {language} DBpedia resource")
    name = unquote(iri[len(base):])
    if not name:
        raise ValueError(f"empty resource name in {iri!r}")
    return canonical_article_url(f"https://{language}.wikipedia.org/wiki/{name}")


def parse_film_list(response: str | bytes | Mapping, language: str, source: str = "unknown",
                    retrieved_at: str | None = None) -> FilmList:
    if isinstance(response, (str, bytes)):
        try:
            response = json.loads(response)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed SPARQL JSON: {exc}") from None
    try:
        bindings = response["results"]["bindings"]
    except (KeyError, TypeError):
        raise ValueError("SPARQL payload lacks results.bindings") from None
    urls = set()
    for i, row in enumerate(bindings):
        if "film" not in row:
            raise ValueError(f"binding {i} has no 'film' variable")
        urls.add(resource_to_article_url(row["film"]["value"], language))
    return FilmList(language, frozenset(urls), source, retrieved_at)


class SparqlClient:
    """SPARQL Protocol query-via-GET client returning JSON results."""

    def __init__(self, endpoint: str, session: requests.Session | None = None, timeout: float = 60.0):
        self.endpoint = endpoint
        self.session = session or requests.Session()
        self.timeout = timeout

    def select(self, query: str) -> dict:
        try:
            resp = self.session.get(self.endpoint, params={"query": query, "format": SPARQL_JSON},
                                    headers={"Accept": SPARQL_JSON}, timeout=self.timeout)
        except requests.RequestException as exc:
            raise ProviderError(f"SPARQL endpoint {self.endpoint} unreachable", str(exc)) from exc
        if resp.status_code != 200:
            raise ProviderError(f"SPARQL endpoint {self.endpoint} returned HTTP {resp.status_code}",
                                resp.text[:500])
        try:
            return resp.json()
        except ValueError as exc:
            raise ProviderError("SPARQL endpoint returned non-JSON body", str(exc)) from exc

    def film_list(self, language: str, years: Sequence[int], include_animation: bool = True) -> FilmList:
        q = build_film_list_query(language, years, include_animation)
        stamp = datetime.now(timezone.utc).replace(microsecond=0).isoformat()
        return parse_film_list(self.select(q.rendered), language, source=self.endpoint, retrieved_at=stamp)


# --- titles -----------------------------------------------------------------

_BRACKETS = re.compile(r"\([^()]*\)|（[^（）]*）|\[[^\[\]]*\]|【[^【】]*】")


def normalize_title(title: str, language: str = "en") -> str:
    """Matching key for a title: NFC, case-folded, no brackets or punctuation.

    Used for diagnostics only; article URLs are always compared exactly.
    """
    text = unicodedata.normalize("NFC", title).replace("_", " ")
    text = unicodedata.normalize("NFC", text.casefold())
    prev = None
    while prev != text:
        prev, text = text, _BRACKETS.sub(" ", text)
    text = "".join(" " if unicodedata.category(ch)[0] in "PZC" else ch for ch in text)
    text = unicodedata.normalize("NFC", " ".join(text.split()))
    return text


def query_key(query: str) -> str:
    """Key under which a search query is stored in a search fixture file."""
    return "+".join(unicodedata.normalize("NFC", query).casefold().split())


# --- search providers -------------------------------------------------------

class SearchProvider(Protocol):
    site: str | None

    def search(self, query: str) -> list[str]: ...


class FixtureSearchProvider:
    """Canned search results: normalized query string -> ranked URL list."""

    site = None

    def __init__(self, results: Mapping[str, Sequence[str]]):
        self.results = {query_key(k): list(v) for k, v in results.items()}
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path) -> "FixtureSearchProvider":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def search(self, query: str) -> list[str]:
        with self._lock:
            self.calls += 1
        return list(self.results.get(query_key(query), []))


class HttpSearchProvider:
    """Custom-search style JSON API (``items[].link``) restricted to one site."""

    def __init__(self, endpoint: str, key: str, engine_id: str, site: str, num: int = 10,
                 session: requests.Session | None = None, min_interval: float = 0.0,
                 timeout: float = 30.0):
        self.endpoint = endpoint
        self.key = key
        self.engine_id = engine_id
        self.site = site
        self.num = num
        self.session = session or requests.Session()
        self.timeout = timeout
        self._limiter = RateLimiter(1, min_interval)

    def search(self, query: str) -> list[str]:
        params = {"key": self.key, "cx": self.engine_id, "q": query,
                  "siteSearch": self.site, "siteSearchFilter": "i", "num": self.num}
        with self._limiter.slot():
            try:
                resp = self.session.get(self.endpoint, params=params, timeout=self.timeout)
            except requests.RequestException as exc:
                raise ProviderError("search provider unreachable", str(exc)) from exc
        if resp.status_code == 429 or (resp.status_code == 403 and "limit" in resp.text.lower()):
            raise QuotaExceededError(f"search quota exhausted (HTTP {resp.status_code})")
        if resp.status_code != 200:
            raise ProviderError(f"search provider returned HTTP {resp.status_code}", resp.text[:500])
        try:
            items = resp.json().get("items", [])
        except ValueError as exc:
            raise ProviderError("search provider returned non-JSON body", str(exc)) from exc
        return [it["link"] for it in items if "link" in it]


# --- alignment --------------------------------------------------------------

_NON_ARTICLE_PREFIXES = (
    "Category:", "Talk:", "User:", "User_talk:", "Wikipedia:", "File:", "Template:", "Help:",
    "Portal:", "Special:", "Draft:", "Module:", "MediaWiki:",
    "Kategorie:", "Diskussion:", "Benutzer:", "Datei:", "Vorlage:", "Hilfe:", "Spezial:",
    "カテゴリ:", "ノート:", "利用者:", "ファイル:", "画像:", "プロジェクト:", "特別:", "ヘルプ:", "ポータル:",
)


def is_article(url: str) -> bool:
    try:
        title = article_title(url)
    except ValueError:
        return False
    return not title.startswith(_NON_ARTICLE_PREFIXES)


def resolve_candidates(title: str, market: Market, provider: SearchProvider) -> list[str]:
    """Ranked article URLs of the market's edition returned for ``title``."""
    site = getattr(provider, "site", None)
    if site is not None and site != market.wiki_host:
        raise ConfigurationError(f"search provider restricted to {site}, market needs {market.wiki_host}")
    raw = provider.search(f"{title} {market.film_suffix}")
    out: list[str] = []
    for url in raw:
        if article_language(url) != market.wiki_language or not is_article(url):
            continue
        url = canonical_article_url(url)
        if url not in out:
            out.append(url)
    return out


@dataclass(frozen=True)
class AlignmentResult:
    title: str
    release_date: date
    url: str | None
    reason: str | None = None
    method: AlignmentMethod | None = None
    candidates: tuple[tuple[str, bool], ...] = ()
    title_match: bool | None = None
    warnings: tuple[str, ...] = ()

    @property
    def record_key(self) -> tuple[str, date]:
        return (self.title, self.release_date)

    @property
    def aligned(self) -> bool:
        return self.url is not None

    def to_json(self) -> dict:
        doc: dict = {
            "title": self.title,
            "release_date": self.release_date.isoformat(),
            "outcome": "aligned" if self.aligned else "unaligned",
        }
        if self.aligned:
            doc["url"] = self.url
            doc["alignment_method"] = self.method.value
            doc["title_match"] = self.title_match
        else:
            doc["reason"] = self.reason
        doc["candidates"] = [{"url": u, "accepted": a} for u, a in self.candidates]
        if self.warnings:
            doc["warnings"] = list(self.warnings)
        return doc


@dataclass(frozen=True)
class AlignmentSummary:
    total: int = 0
    aligned_auto: int = 0
    aligned_manual: int = 0
    unaligned: int = 0

    @property
    def aligned(self) -> int:
        return self.aligned_auto + self.aligned_manual

    def to_json(self) -> dict:
        return {"total": self.total, "aligned_auto": self.aligned_auto,
                "aligned_manual": self.aligned_manual, "unaligned": self.unaligned}


def _title_match(record: FilmRecord, url: str) -> bool:
    lang = record.market.wiki_language
    return normalize_title(record.title, lang) == normalize_title(article_title(url), lang)


def align_film(record: FilmRecord, film_list: FilmList, provider: SearchProvider) -> AlignmentResult:
    if film_list.language != record.market.wiki_language:
        raise ValueError(f"film list is for {film_list.language!r}, record needs "
                         f"{record.market.wiki_language!r}")
    candidates = resolve_candidates(record.title, record.market, provider)
    chosen = next((u for u in candidates if u in film_list.urls), None)
    flags = tuple((u, u == chosen) for u in candidates)
    if chosen is None:
        reason = "no_candidates" if not candidates else "all_filtered"
        return AlignmentResult(record.title, record.release_date, None, reason=reason, candidates=flags)
    return AlignmentResult(record.title, record.release_date, chosen, method=AlignmentMethod.AUTOMATIC,
                           candidates=flags, title_match=_title_match(record, chosen))


def _manual(record: FilmRecord, url: str, film_list: FilmList) -> AlignmentResult:
    url = canonical_article_url(url)
    if article_language(url) != record.market.wiki_language:
        raise ConfigurationError(f"manual override for {record.title!r} points at the wrong edition: {url}")
    warnings = () if url in film_list.urls else (f"manual override URL not in film list: {url}",)
    return AlignmentResult(record.title, record.release_date, url, method=AlignmentMethod.MANUAL,
                           title_match=_title_match(record, url), warnings=warnings)


def align_catalog(records: Sequence[FilmRecord], film_list: FilmList, provider: SearchProvider,
                  manual_overrides: Mapping[str, str] | None = None,
                  max_workers: int = 1) -> tuple[list[AlignmentResult], AlignmentSummary]:
    """Align every record; manual overrides (title -> URL) take precedence.

    Output order follows ``records`` regardless of ``max_workers``.
    """
    markets = {r.market for r in records}
    if len(markets) > 1:
        raise ValueError(f"records span several markets: {sorted(m.value for m in markets)}")
    overrides = dict(manual_overrides or {})

    def one(rec: FilmRecord) -> AlignmentResult:
        if rec.title in overrides:
            return _manual(rec, overrides[rec.title], film_list)
        return align_film(rec, film_list, provider)

    if max_workers > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(one, records))
    else:
        results = [one(r) for r in records]
    return results, summarize(results)


def summarize(results: Iterable[AlignmentResult]) -> AlignmentSummary:
    total = auto = manual = 0
    for r in results:
        total += 1
        if r.method is AlignmentMethod.AUTOMATIC:
            auto += 1
        elif r.method is AlignmentMethod.MANUAL:
            manual += 1
    return AlignmentSummary(total, auto, manual, total - auto - manual)
