import xml.etree.ElementTree as ET
from datetime import date

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxoffice.modeling import FilmPrediction, evaluate
from boxoffice.report import (
    fmt_float,
    nice_ticks,
    parse_r2_evolution_csv,
    parse_relative_errors_csv,
    r2_evolution_csv,
    r2_evolution_svg,
    relative_errors_csv,
    relative_errors_svg,
    summary_line,
)
from boxoffice.synthetic import replication_dataset

SVG = "{http://www.w3.org/2000/svg}"


def preds(n=3):
    return [FilmPrediction(f'Film "{i}", part <{i}>', date(2013, 1, 1 + i), 1000.0 * (n - i), 900.0, 0.1 * i)
            for i in range(n)]


def test_r2_csv_example():
    assert r2_evolution_csv([(-2, 0.5), (-1, 0.1)]) == "t,r_squared\n-2,0.5\n-1,0.1\n"


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-100, 0), st.floats(-10, 1, allow_nan=False)), max_size=30))
def test_r2_csv_round_trip(series):
    assert parse_r2_evolution_csv(r2_evolution_csv(series)) == series


def test_relative_errors_csv_round_trip():
    rows = parse_relative_errors_csv(relative_errors_csv(preds()))
    assert [r["rank"] for r in rows] == [1, 2, 3]
    assert rows[1]["title"] == 'Film "1", part <1>'
    assert rows[2]["relative_error"] == 0.2


def test_bad_headers():
    with pytest.raises(ValueError):
        parse_r2_evolution_csv("day,r2\n")
    with pytest.raises(ValueError):
        parse_relative_errors_csv("rank\n")


def test_fmt_float_round_trips():
    for x in (0.1, 1 / 3, 1e-300, 123456789.0, -0.0):
        assert float(fmt_float(x)) == x


def test_nice_ticks():
    assert nice_ticks(0, 1) == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
    assert nice_ticks(0, 49, target=8) == [0, 10, 20, 30, 40]
    t = nice_ticks(-0.3, 1)
    assert t == [0.0, 0.5, 1.0] and all(-0.3 <= v <= 1 for v in t)


def test_r2_svg_is_well_formed_and_stable():
    series = [(t, 0.3 + 0.01 * (t + 49)) for t in range(-49, 0)]
    a = r2_evolution_svg(series)
    assert a == r2_evolution_svg(series)
    root = ET.fromstring(a)
    assert root.tag == SVG + "svg"
    points = root.find(SVG + "polyline").get("points").split()
    assert len(points) == 49
    xs = [float(p.split(",")[0]) for p in points]
    assert xs == sorted(xs)  # t=-49 on the left, t=-1 on the right
    assert len(root.findall(SVG + "circle")) == 49


def test_errors_svg_escapes_titles():
    root = ET.fromstring(relative_errors_svg(preds(5)))
    bars = root.findall(SVG + "rect")[1:]
    assert len(bars) == 5
    assert bars[0].find(SVG + "title").text.startswith('Film "0", part <0>')


def test_empty_charts_render():
    ET.fromstring(r2_evolution_svg([]))
    ET.fromstring(relative_errors_svg([]))


def test_summary_line():
    rep = evaluate(replication_dataset(30, seed=0))
    line = summary_line(rep, 30)
    t, r2 = rep.max_r_squared
    assert line.startswith("n=30 ") and f"{r2:.4f}" in line and f"t={t}" in line
