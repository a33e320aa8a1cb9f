"""Command-line pipeline: align -> fetch -> evaluate (and ablate-top).

Exit codes: 0 success, 1 usage/configuration, 2 data error, 3 provider error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import threading
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

from . import alignment, ingestion, modeling, report
from ._util import atomic_write, read_json, write_json
from .core import (
    Manifest,
    ManifestEntry,
    Market,
    load_catalog,
    load_manifest,
    save_manifest,
    serialize_catalog,
)
from .errors import (
    CatalogError,
    ConfigurationError,
    CoverageError,
    EmptyDatasetError,
    FitError,
    ProviderError,
    QuotaExceededError,
)

log = logging.getLogger("boxoffice")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PROVIDER = 0, 1, 2, 3

PATH_KEYS = ("catalog", "film_list", "search", "overrides", "pageviews", "cache_dir", "out")


@dataclass
class RunConfig:
    market: Market | None = None
    catalog: Path | None = None
    film_list: Path | None = None  # SPARQL JSON results file; live endpoint otherwise
    search: Path | None = None  # search fixture file; live search API otherwise
    overrides: Path | None = None
    pageviews: Path | None = None  # pageview fixture file; live endpoint otherwise
    years: list[int] = field(default_factory=list)
    include_animation: bool = True
    sparql_endpoint: str | None = None
    search_endpoint: str | None = None
    search_key: str | None = None
    search_engine_id: str | None = None
    endpoint_template: str | None = None
    min_request_interval_ms: float = 0.0
    max_concurrent: int = 4
    max_attempts: int = 3
    backoff_ms: float = 500.0
    max_workers: int = 1
    cache_dir: Path | None = None
    out: Path = Path("out")
    window_start: int = ingestion.DEFAULT_WINDOW_START
    loocv_day: int = modeling.DEFAULT_LOOCV_DAY
    with_intercept: bool = True
    top_n_errors: int = 50

    def validate(self) -> None:
        if self.market is None:
            raise ConfigurationError("no market given (use --market or a config file)")
        if not self.window_start <= self.loocv_day <= 0:
            raise ConfigurationError(f"need window_start <= loocv_day <= 0, got "
                                     f"{self.window_start} and {self.loocv_day}")
        if self.top_n_errors < 0:
            raise ConfigurationError("top_n_errors must be nonnegative")

    @property
    def cache(self) -> Path:
        return self.cache_dir or self.out / "cache"

    def policy(self) -> ingestion.ProviderPolicy:
        return ingestion.ProviderPolicy.from_config({
            "min_request_interval_ms": self.min_request_interval_ms,
            "max_concurrent": self.max_concurrent,
            "max_attempts": self.max_attempts,
            "backoff_ms": self.backoff_ms,
        })


def _market(value: str) -> Market:
    try:
        return Market.parse(value)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None


def _coerce(cfg: RunConfig, doc: dict[str, Any], base: Path) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    updates: dict[str, Any] = {}
    for key, value in doc.items():
        if key not in known:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        if isinstance(value, dict):
            raise ConfigurationError(f"configuration must be flat; {key!r} is nested")
        if key == "market":
            value = _market(value)
        elif key in PATH_KEYS and value is not None:
            p = Path(value)
            value = p if p.is_absolute() else base / p
        updates[key] = value
    return replace(cfg, **updates)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Fixture defaults, then the config file, then command-line flags."""
    cfg = RunConfig()
    try:
        if args.fixtures:
            fx = Path(args.fixtures)
            cfg = _coerce(cfg, read_json(fx / "fixture.json"), fx)
        if args.config:
            cp = Path(args.config)
            cfg = _coerce(cfg, read_json(cp), cp.parent)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"missing configuration file: {exc.filename}") from None
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    flags: dict[str, Any] = {}
    if args.market:
        flags["market"] = _market(args.market)
    if args.out:
        flags["out"] = Path(args.out)
    if args.window_start is not None:
        flags["window_start"] = args.window_start
    if args.loocv_day is not None:
        flags["loocv_day"] = args.loocv_day
    if args.no_intercept:
        flags["with_intercept"] = False
    if args.top_n_errors is not None:
        flags["top_n_errors"] = args.top_n_errors
    if args.cache_dir:
        flags["cache_dir"] = Path(args.cache_dir)
    cfg = replace(cfg, **flags)
    cfg.validate()
    return cfg


# --- providers from configuration ------------------------------------------

def _film_list(cfg: RunConfig) -> alignment.FilmList:
    lang = cfg.market.wiki_language
    if cfg.film_list is not None:
        if not cfg.film_list.exists():
            raise ConfigurationError(f"film list file not found: {cfg.film_list}")
        return alignment.parse_film_list(cfg.film_list.read_bytes(), lang, source=f"file:{cfg.film_list.name}")
    if not cfg.years:
        raise ConfigurationError("live film list retrieval needs 'years' in the configuration")
    endpoint = cfg.sparql_endpoint or alignment.edition_table()[lang]["sparql_endpoint"]
    return alignment.SparqlClient(endpoint).film_list(lang, cfg.years, cfg.include_animation)


def _search_provider(cfg: RunConfig):
    if cfg.search is not None:
        if not cfg.search.exists():
            raise ConfigurationError(f"search fixture not found: {cfg.search}")
        return alignment.FixtureSearchProvider.from_file(cfg.search)
    if not (cfg.search_endpoint and cfg.search_key and cfg.search_engine_id):
        raise ConfigurationError("live search needs search_endpoint, search_key and search_engine_id")
    return alignment.HttpSearchProvider(cfg.search_endpoint, cfg.search_key, cfg.search_engine_id,
                                        site=cfg.market.wiki_host,
                                        min_interval=cfg.min_request_interval_ms / 1000.0)


def _pageview_provider(cfg: RunConfig):
    if cfg.pageviews is not None:
        if not cfg.pageviews.exists():
            raise ConfigurationError(f"pageview fixture not found: {cfg.pageviews}")
        return ingestion.FixturePageviewProvider.from_file(cfg.pageviews)
    if not cfg.endpoint_template:
        raise ConfigurationError("live pageview retrieval needs endpoint_template")
    return ingestion.HttpPageviewProvider(cfg.endpoint_template)


class CountingProvider:
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0
        self._lock = threading.Lock()

    def daily_counts(self, article_url, start, end):
        with self._lock:
            self.calls += 1
        return self.inner.daily_counts(article_url, start, end)


# --- commands ---------------------------------------------------------------

def cmd_align(cfg: RunConfig) -> int:
    if cfg.catalog is None or not cfg.catalog.exists():
        raise ConfigurationError(f"catalog file not found: {cfg.catalog}")
    records = load_catalog(cfg.catalog, cfg.market)
    film_list = _film_list(cfg)
    provider = _search_provider(cfg)
    overrides = read_json(cfg.overrides) if cfg.overrides is not None and cfg.overrides.exists() else {}
    results, summary = alignment.align_catalog(records, film_list, provider, overrides, cfg.max_workers)

    out = cfg.out
    atomic_write(out / "catalog.csv", serialize_catalog(records))
    write_json(out / "alignment.json", [r.to_json() for r in results])
    write_json(out / "alignment_summary.json", summary.to_json())
    entries = tuple(
        ManifestEntry(r.title, r.release_date, r.url, ingestion.CacheStore.filename_for(r.url), r.method)
        for r in results if r.aligned
    )
    save_manifest(out / "manifest.json", Manifest(cfg.market, cfg.window_start, entries, "catalog.csv"))
    for r in results:
        for w in r.warnings:
            log.warning("%s: %s", r.title, w)
    print(f"aligned {summary.aligned} of {summary.total} films "
          f"({summary.aligned_auto} automatic, {summary.aligned_manual} manual, {summary.unaligned} unaligned)")
    if summary.aligned == 0:
        print("no films aligned", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _manifest(cfg: RunConfig) -> Manifest:
    path = cfg.out / "manifest.json"
    if not path.exists():
        raise ConfigurationError(f"no manifest at {path}; run 'align' first")
    return load_manifest(path)


def cmd_fetch(cfg: RunConfig) -> int:
    manifest = _manifest(cfg)
    provider = CountingProvider(_pageview_provider(cfg))
    cache = ingestion.CacheStore(cfg.cache)
    try:
        dataset, rep = ingestion.fetch_dataset(manifest, provider, cfg.policy(), cache)
    except EmptyDatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    finally:
        log.info("pageview provider calls: %d", provider.calls)
    write_json(cfg.out / "fetch_report.json", rep.to_json())
    for f in rep.failures:
        log.warning("fetch failed: %s", f.reason)
    print(f"fetched {len(dataset)} of {len(manifest.entries)} films "
          f"({len(rep.failures)} failed, {rep.cache_hits} from cache, {rep.filled_days} zero-filled days, "
          f"{provider.calls} provider calls)")
    return EXIT_OK


def _dataset(cfg: RunConfig):
    manifest = _manifest(cfg)
    d = ingestion.load_dataset(manifest, ingestion.CacheStore(cfg.cache))
    if cfg.window_start != d.window_start:
        if cfg.window_start < d.window_start:
            raise CoverageError(f"window_start {cfg.window_start} precedes fetched window {d.window_start}")
        d = replace(d, window_start=cfg.window_start)
    return d


def write_evaluation(d, cfg: RunConfig, out_dir: Path) -> modeling.EvaluationReport:
    n_params = 3 if cfg.with_intercept else 2
    if len(d) < n_params + 1:
        raise FitError(f"dataset has {len(d)} films; at least {n_params + 1} are needed")
    rep = modeling.evaluate(d, (d.window_start, -1), cfg.loocv_day, cfg.with_intercept)
    top = rep.top_by_revenue(cfg.top_n_errors)
    market = d.market.value
    atomic_write(out_dir / "r2_evolution.csv", report.r2_evolution_csv(rep.r2_evolution))
    atomic_write(out_dir / "relative_errors.csv", report.relative_errors_csv(top))
    write_json(out_dir / "fit.json", [f.to_json() for f in rep.fits])
    write_json(out_dir / "evaluation.json", rep.to_json())
    atomic_write(out_dir / "r2_evolution.svg",
                 report.r2_evolution_svg(rep.r2_evolution, f"Evolution of R² in time ({market} films)"))
    atomic_write(out_dir / "relative_errors.svg",
                 report.relative_errors_svg(top, f"Relative error for {len(top)} {market} films"))
    print(report.summary_line(rep, len(d)))
    return rep


def cmd_evaluate(cfg: RunConfig) -> int:
    write_evaluation(_dataset(cfg), cfg, cfg.out)
    return EXIT_OK


def cmd_ablate_top(cfg: RunConfig, k: int) -> int:
    d = _dataset(cfg)
    try:
        reduced = modeling.exclude_top_grossing(d, k)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    write_evaluation(reduced, cfg, cfg.out / f"ablate_top_{k}")
    return EXIT_OK


def cmd_pipeline(cfg: RunConfig) -> int:
    for step in (cmd_align, cmd_fetch, cmd_evaluate):
        code = step(cfg)
        if code != EXIT_OK:
            return code
    return EXIT_OK


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON configuration file")
    common.add_argument("--market", help="market code: US, UK, AU, DE or JA")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--window-start", type=int, help="first day offset of the cumulative window (default -49)")
    common.add_argument("--loocv-day", type=int, help="day offset for leave-one-out predictions (default -7)")
    common.add_argument("--no-intercept", action="store_true", help="fit through the origin")
    common.add_argument("--fixtures", help="directory of offline fixtures (with a fixture.json)")
    common.add_argument("--top-n-errors", type=int, help="films in the relative-error report (default 50)")
    common.add_argument("--cache-dir", help="pageview cache directory (default: <out>/cache)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="boxoffice",
                                 description="Opening-weekend revenue from screens and article pageviews.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("align", parents=[common], help="bind catalog titles to encyclopedia articles")
    sub.add_parser("fetch", parents=[common], help="download daily pageviews into the cache")
    sub.add_parser("evaluate", parents=[common], help="R² evolution, LOOCV relative errors, charts")
    ab = sub.add_parser("ablate-top", parents=[common], help="evaluate without the top-k grossing films")
    ab.add_argument("--k", type=int, required=True, help="number of top-grossing films to drop")
    sub.add_parser("pipeline", parents=[common], help="align, fetch and evaluate")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "align":
            return cmd_align(cfg)
        if args.command == "fetch":
            return cmd_fetch(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "ablate-top":
            return cmd_ablate_top(cfg, args.k)
        return cmd_pipeline(cfg)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (QuotaExceededError, ProviderError) as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (EmptyDatasetError, CatalogError, CoverageError, FitError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
