"""Synthetic markets for tests, demos and the bundled offline fixtures.

Each film has a latent "interest" level that drives both its opening-weekend
revenue and a surge of article traffic that grows exponentially as release
approaches, on top of background traffic unrelated to revenue. Early
cumulative views are therefore mostly noise and late ones are informative,
which is the mechanism behind an R² curve rising toward release.
"""

from __future__ import annotations

import argparse
import itertools
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Sequence
from urllib.parse import quote

import numpy as np

from ._util import atomic_write, write_json
from .alignment import edition_table, query_key
from .core import (
    AlignedFilm,
    AlignmentMethod,
    Dataset,
    FilmRecord,
    Market,
    PageviewSeries,
    date_of,
    serialize_catalog,
)


@dataclass(frozen=True)
class SimulatedFilm:
    record: FilmRecord
    views: dict[int, int]  # offset -> views over [window_start, 0]


def simulate_films(titles: Sequence[str], market: Market, seed: int, window_start: int = -49,
                   year: int = 2013, outlier_top: int = 0, outlier_sigma: float = 1.5,
                   surge_days: float = 5.0) -> list[SimulatedFilm]:
    """Revenues, screens and daily views for ``titles`` (one film each).

    ``outlier_top`` > 0 multiplies the revenues of that many top earners by
    heavy lognormal noise, making them poorly explained by the features.
    """
    rng = np.random.default_rng(seed)
    n = len(titles)
    interest = rng.lognormal(0.0, 1.0, n)
    background = rng.lognormal(np.log(300.0), 0.8, n)
    screens = np.round(np.exp(rng.normal(np.log(600.0) + 0.3 * np.log(interest), 0.8))).astype(int)
    surge = 4000.0 * interest
    surge_total = surge * surge_days  # approx. sum of surge * exp(d / surge_days) for d <= 0
    revenue = (1500.0 * screens + 60.0 * surge_total) * rng.lognormal(0.0, 0.4, n)
    if outlier_top:
        top = np.argsort(-revenue, kind="stable")[:outlier_top]
        revenue[top] *= rng.lognormal(0.0, outlier_sigma, outlier_top)
    revenue = np.maximum(np.round(revenue), 1.0)

    offsets = np.arange(window_start, 1)
    rates = background[:, None] + surge[:, None] * np.exp(offsets[None, :] / surge_days)
    counts = rng.poisson(rates)
    start = date(year, 1, 1)
    days = rng.integers(0, 365, n)

    films = []
    for i, title in enumerate(titles):
        rec = FilmRecord(title, market, start + timedelta(days=int(days[i])), int(revenue[i]), int(screens[i]))
        films.append(SimulatedFilm(rec, {int(o): int(c) for o, c in zip(offsets, counts[i])}))
    return films


def synthetic_url(language: str, title: str) -> str:
    return f"https://{language}.wikipedia.org/wiki/{title.replace(' ', '_')}"


def replication_dataset(n: int = 300, seed: int = 0, window_start: int = -49, market: Market = Market.US,
                        outlier_top: int = 0, outlier_sigma: float = 1.5) -> Dataset:
    """A ready-made dataset of ``n`` simulated films."""
    titles = [f"Synthetic Film {i:04d}" for i in range(n)]
    films = []
    for sim in simulate_films(titles, market, seed, window_start, outlier_top=outlier_top,
                              outlier_sigma=outlier_sigma):
        url = synthetic_url(market.wiki_language, sim.record.title)
        series = PageviewSeries(url, sim.views, (window_start, 0))
        films.append(AlignedFilm(sim.record, url, series, AlignmentMethod.AUTOMATIC))
    return Dataset(market, tuple(films), window_start)


# --- titles -----------------------------------------------------------------

_JA_A = ["風", "夢", "空", "海", "星", "花", "月", "光", "雪", "桜", "森", "炎", "影", "雨", "虹",
         "鬼", "猫", "犬", "龍", "剣", "恋", "嵐", "魂", "宙", "島", "街", "駅", "春", "夏", "秋"]
_JA_B = ["物語", "の彼方", "の記憶", "戦記", "伝説", "の約束", "探偵", "少女", "の旅", "大作戦",
         "の王", "の詩", "奇譚", "の迷宮", "日和", "の歌", "革命", "の城", "の庭", "狂想曲"]
_JA_PREFIX = ["", "劇場版 ", "名探偵", "ドラゴン"]
_EN_A = ["Silent", "Broken", "Last", "Hidden", "Crimson", "Frozen", "Wild", "Dark", "Golden", "Lost",
         "Iron", "Secret", "Endless", "Savage", "Final", "Midnight", "Distant", "Burning", "Hollow", "Electric"]
_EN_B = ["Horizon", "Kingdom", "Promise", "Empire", "Signal", "Harbor", "Legacy", "Frontier", "Garden",
         "Voyage", "Reckoning", "Descent", "Paradise", "Machine", "Protocol", "Shadow", "River", "Summit",
         "Island", "Witness"]


def _titles(language: str, rng: np.random.Generator, count: int) -> list[str]:
    if language == "ja":
        pool = [p + a + b for p, a, b in itertools.product(_JA_PREFIX, _JA_A, _JA_B)]
    else:
        pool = [f"The {a} {b}" for a, b in itertools.product(_EN_A, _EN_B)]
        pool += [f"{a} {b}" for a, b in itertools.product(_EN_A, _EN_B)]
        pool += [f"{b} of the {a}" for a, b in itertools.product(_EN_A, _EN_B)]
        pool += [f"{a} {b} {k}" for a, b, k in itertools.product(_EN_A, _EN_B, ("II", "3D", "Returns"))]
        pool += [f"The {a} {b} {k}" for a, b, k in itertools.product(_EN_A, _EN_B, ("2", "Rising", "Begins"))]
    pool = sorted(set(pool))
    if count > len(pool):
        raise ValueError(f"title pool too small for {count} titles")
    idx = rng.choice(len(pool), size=count, replace=False)
    return [pool[i] for i in idx]


# --- fixture directories ----------------------------------------------------

@dataclass(frozen=True)
class FixturePlan:
    market: Market
    years: tuple[int, ...]
    n_catalog: int
    n_list: int
    n_auto: int
    n_manual: int
    n_no_candidates: int
    film_list_name: str
    seed: int
    window_start: int = -49

    @property
    def n_aligned(self) -> int:
        return self.n_auto + self.n_manual

    @property
    def n_all_filtered(self) -> int:
        return self.n_catalog - self.n_aligned - self.n_no_candidates


# 104 catalog titles, a 769-URL film list and 73 alignments, as reported for Japan
JA_PLAN = FixturePlan(Market.JA, (2012, 2013), n_catalog=104, n_list=769, n_auto=71, n_manual=2,
                      n_no_candidates=14, film_list_name="ja_films_2012_2013.json", seed=20130)
US_PLAN = FixturePlan(Market.US, (2013,), n_catalog=340, n_list=3079, n_auto=322, n_manual=3,
                      n_no_candidates=6, film_list_name="en_films_2013.json", seed=20131)

PLANS = {"JA": JA_PLAN, "US": US_PLAN}

_QUALIFIER = {"ja": "_({year}年の映画)", "en": "_({year}_film)", "de": "_(Film)"}
_OTHER_WORK = {"ja": "_(漫画)", "en": "_(novel)", "de": "_(Roman)"}
_CATEGORY_NS = {"ja": "カテゴリ:", "en": "Category:", "de": "Kategorie:"}


def _sparql_payload(urls: Sequence[str], language: str) -> dict:
    base = edition_table()[language]["resource_base"]
    rows = [{"film": {"type": "uri", "value": base + u.split("/wiki/", 1)[1]}} for u in urls]
    return {"head": {"vars": ["film"]}, "results": {"bindings": rows}}


def build_fixture(plan: FixturePlan) -> dict[str, object]:
    """All fixture documents for ``plan``, keyed by file name."""
    rng = np.random.default_rng(plan.seed)
    lang = plan.market.wiki_language
    suffix = plan.market.film_suffix
    titles = _titles(lang, rng, plan.n_catalog + plan.n_list)
    cat_titles, spare = titles[:plan.n_catalog], titles[plan.n_catalog:]
    films = simulate_films(cat_titles, plan.market, plan.seed, plan.window_start, year=plan.years[-1])

    kinds = (["auto"] * plan.n_auto + ["manual"] * plan.n_manual
             + ["none"] * plan.n_no_candidates + ["filtered"] * plan.n_all_filtered)
    kinds = [kinds[i] for i in rng.permutation(len(kinds))]

    def film_url(title: str, qualified: bool) -> str:
        q = _QUALIFIER[lang].format(year=plan.years[-1]) if qualified else ""
        return synthetic_url(lang, title) + q

    def noise_urls(title: str) -> list[str]:
        pool = [
            f"https://{lang}.wikipedia.org/wiki/{_CATEGORY_NS[lang]}{plan.years[-1]}",
            f"https://{'en' if lang != 'en' else 'de'}.wikipedia.org/wiki/{title.replace(' ', '_')}",
            synthetic_url(lang, title) + _OTHER_WORK[lang],
            f"https://www.example.com/{quote(title)}",
        ]
        return [pool[i] for i in sorted(rng.choice(len(pool), size=int(rng.integers(1, 4)), replace=False))]

    list_urls: list[str] = []
    search: dict[str, list[str]] = {}
    overrides: dict[str, str] = {}
    aligned: list[tuple[SimulatedFilm, str]] = []
    for sim, kind in zip(films, kinds):
        title = sim.record.title
        key = query_key(f"{title} {suffix}")
        url = film_url(title, qualified=bool(rng.random() < 0.3))
        if kind == "auto":
            cands = noise_urls(title)
            pos = int(rng.integers(0, len(cands) + 1))
            shown = url
            if rng.random() < 0.25:  # search engines hand back percent-encoded paths
                shown = f"https://{lang}.wikipedia.org/wiki/{quote(url.split('/wiki/', 1)[1])}"
            cands.insert(pos, shown)
            search[key] = cands
            list_urls.append(url)
            aligned.append((sim, url))
        elif kind == "manual":
            search[key] = [synthetic_url(lang, title) + _OTHER_WORK[lang]]
            overrides[title] = url
            list_urls.append(url)
            aligned.append((sim, url))
        elif kind == "none":
            if rng.random() < 0.5:
                search[key] = [u for u in noise_urls(title) if _CATEGORY_NS[lang] in u or "example.com" in u]
        else:
            search[key] = [synthetic_url(lang, title) + _OTHER_WORK[lang]]

    for title in spare:
        if len(list_urls) >= plan.n_list:
            break
        list_urls.append(film_url(title, qualified=bool(rng.random() < 0.2)))
    if len(set(list_urls)) != plan.n_list:
        raise RuntimeError("film list does not reach the planned size")

    pageviews: dict[str, dict[str, int]] = {}
    for sim, url in aligned:
        days = {}
        for off, count in sim.views.items():
            if rng.random() < 0.01:
                continue  # the provider reports nothing for this day
            days[date_of(off, sim.record.release_date).isoformat()] = count
        pageviews[url] = days

    fixture_cfg = {
        "market": plan.market.value,
        "years": list(plan.years),
        "window_start": plan.window_start,
        "catalog": "catalog.csv",
        "film_list": plan.film_list_name,
        "search": "search.json",
        "overrides": "overrides.json",
        "pageviews": "pageviews.json",
    }
    return {
        "fixture.json": fixture_cfg,
        "catalog.csv": serialize_catalog([f.record for f in films]),
        plan.film_list_name: _sparql_payload(sorted(list_urls), lang),
        "search.json": dict(sorted(search.items())),
        "overrides.json": dict(sorted(overrides.items())),
        "pageviews.json": dict(sorted(pageviews.items())),
    }


def write_fixture(plan: FixturePlan, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    for name, doc in build_fixture(plan).items():
        if isinstance(doc, bytes):
            atomic_write(out / name, doc)
        else:
            write_json(out / name, doc)
    return out


def bundled_fixture_dir(market: str) -> Path:
    return Path(__file__).parent / "fixtures" / market.lower()


def main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description="Regenerate a bundled synthetic fixture directory.")
    ap.add_argument("market", choices=sorted(PLANS))
    ap.add_argument("--out", help="target directory (default: the bundled fixture location)")
    args = ap.parse_args(argv)
    out = write_fixture(PLANS[args.market], args.out or bundled_fixture_dir(args.market))
    print(out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
