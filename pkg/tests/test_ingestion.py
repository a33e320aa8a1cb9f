import threading
import time
from datetime import date, timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxoffice.core import AlignmentMethod, FilmRecord, Manifest, ManifestEntry, Market
from boxoffice.errors import (
    ArticleNotFoundError,
    DataIntegrityError,
    EmptyDatasetError,
    FetchError,
    ProviderError,
    QuotaExceededError,
)
from boxoffice.ingestion import (
    CacheStore,
    FetchRequest,
    FixturePageviewProvider,
    HttpPageviewProvider,
    ProviderPolicy,
    fetch_dataset,
    fetch_series,
    load_dataset,
    parse_pageview_response,
)

RELEASE = date(2013, 6, 1)
EN = "https://en.wikipedia.org/wiki/"
FAST = ProviderPolicy(max_concurrent=4, max_attempts=3, backoff=0.01)


def no_sleep(_):
    pass


def days(*counts, end=RELEASE):
    first = end - timedelta(days=len(counts) - 1)
    return {(first + timedelta(days=i)).isoformat(): c for i, c in enumerate(counts)}


class Flaky:
    """Fails with a transient error ``failures`` times, then serves ``inner``."""

    def __init__(self, inner, failures, exc=ProviderError):
        self.inner = inner
        self.failures = failures
        self.exc = exc
        self.calls = 0

    def daily_counts(self, url, start, end):
        self.calls += 1
        if self.calls <= self.failures:
            raise self.exc("transient", "HTTP 503") if self.exc is ProviderError else self.exc("nope")
        return self.inner.daily_counts(url, start, end)


def manifest_for(titles, window_start=-3):
    recs = [FilmRecord(t, Market.US, RELEASE, 100 + i, 10) for i, t in enumerate(titles)]
    entries = tuple(ManifestEntry(r.title, r.release_date, EN + r.title, "", AlignmentMethod.AUTOMATIC) for r in recs)
    return Manifest(Market.US, window_start, entries), recs


# --- single series --------------------------------------------------------------

def test_passthrough_example(tmp_path):
    p = FixturePageviewProvider({EN + "X": days(5, 7, 11)})
    s = fetch_series(FetchRequest(EN + "X", RELEASE, -2, 0), p, FAST, CacheStore(tmp_path))
    assert [s.daily[o] for o in (-2, -1, 0)] == [5, 7, 11]
    assert s.coverage == (-2, 0) and s.filled_days == 0


def test_cache_hit_makes_no_calls(tmp_path):
    p = FixturePageviewProvider({EN + "X": days(1, 2, 3, 4)})
    cache = CacheStore(tmp_path)
    first = fetch_series(FetchRequest(EN + "X", RELEASE, -3, 0), p, FAST, cache)
    assert p.calls == 1
    again = fetch_series(FetchRequest(EN + "X", RELEASE, -3, 0), p, FAST, cache)
    narrower = fetch_series(FetchRequest(EN + "X", RELEASE, -2, -1), p, FAST, cache)
    assert p.calls == 1
    assert again == first
    assert dict(narrower.daily) == {-2: 2, -1: 3}


def test_wider_window_goes_back_to_provider(tmp_path):
    p = FixturePageviewProvider({EN + "X": days(1, 2, 3, 4, 5, 6)})
    cache = CacheStore(tmp_path)
    fetch_series(FetchRequest(EN + "X", RELEASE, -2, 0), p, FAST, cache)
    s = fetch_series(FetchRequest(EN + "X", RELEASE, -5, 0), p, FAST, cache)
    assert p.calls == 2 and s.daily[-5] == 1


def test_omitted_day_is_zero_filled(tmp_path):
    data = days(5, 7, 11)
    del data[(RELEASE - timedelta(days=1)).isoformat()]
    s = fetch_series(FetchRequest(EN + "X", RELEASE, -2, 0), FixturePageviewProvider({EN + "X": data}),
                     FAST, CacheStore(tmp_path))
    assert dict(s.daily) == {-2: 5, -1: 0, 0: 11}
    assert s.filled_days == 1
    # the fill survives a round trip through the cache
    cached = CacheStore(tmp_path).load_series(EN + "X", RELEASE, -2, 0)
    assert cached.filled_days == 1


def test_real_count_replaces_earlier_fill(tmp_path):
    cache = CacheStore(tmp_path)
    d1 = RELEASE - timedelta(days=1)
    cache.put(EN + "X", RELEASE, {d1: 0, RELEASE: 4}, {d1})
    cache.put(EN + "X", RELEASE, {d1: 9}, set())
    s = cache.load_series(EN + "X", RELEASE, -1, 0)
    assert dict(s.daily) == {-1: 9, 0: 4} and s.filled_days == 0
    cache.put(EN + "X", RELEASE, {d1: 0}, {d1})
    assert cache.load_series(EN + "X", RELEASE, -1, 0).daily[-1] == 9


def test_negative_count_is_integrity_error(tmp_path):
    p = FixturePageviewProvider({EN + "X": days(1, -2, 3)})
    with pytest.raises(DataIntegrityError):
        fetch_series(FetchRequest(EN + "X", RELEASE, -2, 0), p, FAST, CacheStore(tmp_path))


def test_retry_with_backoff_then_success(tmp_path):
    sleeps = []
    p = Flaky(FixturePageviewProvider({EN + "X": days(1, 2)}), failures=2)
    policy = ProviderPolicy(max_attempts=3, backoff=0.5)
    s = fetch_series(FetchRequest(EN + "X", RELEASE, -1, 0), p, policy, CacheStore(tmp_path), sleep=sleeps.append)
    assert p.calls == 3 and sleeps == [0.5, 1.0]
    assert dict(s.daily) == {-1: 1, 0: 2}


def test_retries_exhausted(tmp_path):
    p = Flaky(FixturePageviewProvider({}), failures=99)
    with pytest.raises(FetchError) as info:
        fetch_series(FetchRequest(EN + "X", RELEASE, -1, 0), p, ProviderPolicy(max_attempts=3, backoff=0),
                     CacheStore(tmp_path), sleep=no_sleep)
    assert p.calls == 3 and info.value.attempts == 3
    assert "HTTP 503" in info.value.diagnostic


@pytest.mark.parametrize("exc", [ArticleNotFoundError, QuotaExceededError])
def test_permanent_errors_not_retried(tmp_path, exc):
    p = Flaky(FixturePageviewProvider({}), failures=99, exc=exc)
    with pytest.raises(FetchError):
        fetch_series(FetchRequest(EN + "X", RELEASE, -1, 0), p, FAST, CacheStore(tmp_path), sleep=no_sleep)
    assert p.calls == 1


def test_request_and_policy_validation():
    with pytest.raises(ValueError):
        FetchRequest(EN + "X", RELEASE, 0, -1)
    with pytest.raises(ValueError):
        ProviderPolicy(max_concurrent=0)
    with pytest.raises(ValueError):
        ProviderPolicy(max_attempts=0)
    with pytest.raises(ValueError):
        ProviderPolicy(min_request_interval=-1)
    p = ProviderPolicy.from_config({"max_concurrent": 2, "min_request_interval_ms": 250, "backoff_ms": 100})
    assert p == ProviderPolicy(max_concurrent=2, min_request_interval=0.25, max_attempts=3, backoff=0.1)


# --- datasets -------------------------------------------------------------------

def test_fetch_dataset_from_warm_cache(tmp_path):
    manifest, recs = manifest_for(["A", "B", "C"])
    p = FixturePageviewProvider({EN + t: days(1, 2, 3, 4) for t in "ABC"})
    cache = CacheStore(tmp_path)
    fetch_dataset(manifest, p, FAST, cache, recs)
    calls = p.calls
    d, report = fetch_dataset(manifest, p, FAST, cache, recs)
    assert p.calls == calls == 3
    assert len(d.films) == 3 and {o.status for o in report.films} == {"ok"}
    assert report.cache_hits == 3 and [o.attempts for o in report.films] == [1, 1, 1]
    assert all(f.views.coverage == (-3, 0) for f in d.films)


def test_fetch_dataset_one_failure(tmp_path):
    manifest, recs = manifest_for(["A", "B", "C"])
    p = FixturePageviewProvider({EN + "A": days(1, 1, 1, 1), EN + "C": days(2, 2, 2, 2)})
    d, report = fetch_dataset(manifest, p, FAST, CacheStore(tmp_path), recs, sleep=no_sleep)
    assert [f.record.title for f in d.films] == ["A", "C"]
    assert [o.article_url for o in report.failures] == [EN + "B"]
    assert report.to_json()["films"][1]["status"] == "failed"


def test_fetch_dataset_empty_and_all_failing(tmp_path):
    manifest, recs = manifest_for([])
    with pytest.raises(EmptyDatasetError):
        fetch_dataset(manifest, FixturePageviewProvider({}), FAST, CacheStore(tmp_path), recs)
    manifest, recs = manifest_for(["A"])
    with pytest.raises(EmptyDatasetError):
        fetch_dataset(manifest, FixturePageviewProvider({}), FAST, CacheStore(tmp_path), recs)


def test_fetch_is_idempotent_on_disk(tmp_path):
    manifest, recs = manifest_for([f"F{i}" for i in range(12)], window_start=-10)
    data = {EN + f"F{i}": days(*range(i, i + 11)) for i in range(12)}
    first = FixturePageviewProvider(data)
    fetch_dataset(manifest, first, FAST, CacheStore(tmp_path), recs)
    snapshot = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    second = FixturePageviewProvider(data)
    d, _ = fetch_dataset(manifest, second, FAST, CacheStore(tmp_path), recs)
    assert second.calls == 0
    assert {p.name: p.read_bytes() for p in tmp_path.iterdir()} == snapshot
    assert load_dataset(manifest, CacheStore(tmp_path), recs) == d


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sets(st.integers(-6, 0), max_size=7), min_size=1, max_size=6))
def test_filled_days_account_for_every_missing_day(tmp_path_factory, missing):
    tmp = tmp_path_factory.mktemp("cache")
    titles = [f"F{i}" for i in range(len(missing))]
    manifest, recs = manifest_for(titles, window_start=-6)
    data = {}
    for t, gone in zip(titles, missing):
        data[EN + t] = {(RELEASE + timedelta(days=o)).isoformat(): 3 for o in range(-6, 1) if o not in gone}
    d, report = fetch_dataset(manifest, FixturePageviewProvider(data), FAST, CacheStore(tmp), recs)
    assert report.filled_days == sum(len(g) for g in missing)
    for f, gone in zip(d.films, missing):
        assert sum(1 for o, v in f.views.daily.items() if v == 0) == len(gone)


class Instrumented:
    """Records call start times and peak concurrency."""

    def __init__(self, hold=0.01):
        self.hold = hold
        self.starts = []
        self.active = 0
        self.peak = 0
        self.lock = threading.Lock()

    def daily_counts(self, url, start, end):
        with self.lock:
            self.starts.append(time.monotonic())
            self.active += 1
            self.peak = max(self.peak, self.active)
        time.sleep(self.hold)
        with self.lock:
            self.active -= 1
        return {start + timedelta(days=i): 1 for i in range((end - start).days + 1)}


def test_rate_limits_respected(tmp_path):
    manifest, recs = manifest_for([f"F{i}" for i in range(10)])
    p = Instrumented()
    policy = ProviderPolicy(max_concurrent=2, min_request_interval=0.02)
    fetch_dataset(manifest, p, policy, CacheStore(tmp_path), recs)
    gaps = [b - a for a, b in zip(sorted(p.starts), sorted(p.starts)[1:])]
    assert len(p.starts) == 10
    assert p.peak <= 2
    assert min(gaps) >= 0.02 - 1e-3


def test_concurrency_cap_without_interval(tmp_path):
    manifest, recs = manifest_for([f"F{i}" for i in range(12)])
    p = Instrumented(hold=0.02)
    fetch_dataset(manifest, p, ProviderPolicy(max_concurrent=3), CacheStore(tmp_path), recs)
    assert p.peak <= 3


def test_load_dataset_skips_uncached(tmp_path):
    manifest, recs = manifest_for(["A", "B"])
    cache = CacheStore(tmp_path)
    fetch_series(FetchRequest(EN + "A", RELEASE, -3, 0), FixturePageviewProvider({EN + "A": days(1, 2, 3, 4)}),
                 FAST, cache)
    d = load_dataset(manifest, cache, recs)
    assert [f.record.title for f in d.films] == ["A"]
    with pytest.raises(EmptyDatasetError):
        load_dataset(manifest, CacheStore(tmp_path / "empty"), recs)


# --- HTTP provider over a fake session -----------------------------------------

class _Resp:
    def __init__(self, status, body=None, text=""):
        self.status_code = status
        self._body = body
        self.text = text

    def json(self):
        if self._body is None:
            raise ValueError("no json")
        return self._body


class _Session:
    def __init__(self, resp):
        self.resp = resp
        self.urls = []

    def get(self, url, headers=None, timeout=None):
        self.urls.append(url)
        return self.resp


TEMPLATE = "https://pv.example/{project}/{article}/daily/{start}/{end}"


def test_http_provider_builds_url_and_parses():
    body = {"items": [{"timestamp": "2013053100", "views": 4}, {"timestamp": "2013060100", "views": 6}]}
    session = _Session(_Resp(200, body))
    p = HttpPageviewProvider(TEMPLATE, session)
    got = p.daily_counts("https://ja.wikipedia.org/wiki/風立ちぬ", date(2013, 5, 31), RELEASE)
    assert got == {date(2013, 5, 31): 4, RELEASE: 6}
    assert session.urls == ["https://pv.example/ja.wikipedia/%E9%A2%A8%E7%AB%8B%E3%81%A1%E3%81%AC/daily/20130531/20130601"]


@pytest.mark.parametrize("status,exc", [(404, ArticleNotFoundError), (403, QuotaExceededError), (500, ProviderError)])
def test_http_provider_status_mapping(status, exc):
    with pytest.raises(exc):
        HttpPageviewProvider(TEMPLATE, _Session(_Resp(status, text="x"))).daily_counts(EN + "X", RELEASE, RELEASE)


def test_http_provider_bad_body():
    with pytest.raises(ProviderError):
        HttpPageviewProvider(TEMPLATE, _Session(_Resp(200))).daily_counts(EN + "X", RELEASE, RELEASE)


def test_parse_pageview_shapes():
    assert parse_pageview_response({"daily": {"2013-06-01": 3}}) == {RELEASE: 3}
    with pytest.raises(ProviderError):
        parse_pageview_response({"rows": []})


def test_warm_report_matches_cold_report(tmp_path):
    manifest, recs = manifest_for(["A", "B"])
    inner = FixturePageviewProvider({EN + "A": days(1, 2, 3, 4), EN + "B": days(5, 6, 7, 8)})
    flaky = Flaky(inner, failures=1)
    _, cold = fetch_dataset(manifest, flaky, ProviderPolicy(max_concurrent=1, backoff=0), CacheStore(tmp_path), recs,
                            sleep=no_sleep)
    _, warm = fetch_dataset(manifest, flaky, FAST, CacheStore(tmp_path), recs)
    assert flaky.calls == 3
    assert [o.attempts for o in cold.films] == [2, 1]
    assert warm.to_json() == cold.to_json()
    assert (cold.cache_hits, warm.cache_hits) == (0, 2)
