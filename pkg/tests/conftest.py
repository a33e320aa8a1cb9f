import sys
from datetime import date
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from boxoffice.core import AlignedFilm, Dataset, FilmRecord, Market, PageviewSeries  # noqa: E402
from boxoffice.synthetic import bundled_fixture_dir  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def ja_fixture_dir():
    return bundled_fixture_dir("JA")


def make_film(title, revenue, screens, daily, market=Market.US, release=date(2013, 6, 1), url=None,
              coverage=None):
    lang = market.wiki_language
    url = url or f"https://{lang}.wikipedia.org/wiki/{title.replace(' ', '_')}"
    coverage = coverage or (min(daily), max(daily))
    rec = FilmRecord(title, market, release, revenue, screens)
    return AlignedFilm(rec, url, PageviewSeries(url, daily, coverage))


def make_dataset(rows, window_start=-3, market=Market.US):
    """rows: (title, revenue, screens, {offset: views})."""
    films = [make_film(t, r, s, d, market) for t, r, s, d in rows]
    return Dataset(market, tuple(films), window_start)
