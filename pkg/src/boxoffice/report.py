"""CSV and SVG renderings of an evaluation.

All output is byte-stable: floats in CSV use the shortest round-trip
decimal (``repr``) and SVG coordinates are fixed to two decimals.
"""

from __future__ import annotations

import csv
import io
import math
from typing import Sequence
from xml.sax.saxutils import escape

from .modeling import EvaluationReport, FilmPrediction

R2_HEADER = ("t", "r_squared")
ERRORS_HEADER = ("rank", "title", "revenue", "prediction", "relative_error")


def fmt_float(x: float) -> str:
    return repr(float(x))


def _csv(rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def r2_evolution_csv(series: Sequence[tuple[int, float]]) -> str:
    return _csv([R2_HEADER] + [(str(t), fmt_float(r2)) for t, r2 in series])


def relative_errors_csv(films: Sequence[FilmPrediction]) -> str:
    rows = [ERRORS_HEADER]
    for rank, p in enumerate(films, start=1):
        rows.append((str(rank), p.title, fmt_float(p.revenue), fmt_float(p.prediction),
                     fmt_float(p.relative_error)))
    return _csv(rows)


def parse_r2_evolution_csv(text: str) -> list[tuple[int, float]]:
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != R2_HEADER:
        raise ValueError(f"unexpected header {header}")
    return [(int(t), float(r2)) for t, r2 in reader]


def parse_relative_errors_csv(text: str) -> list[dict]:
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != ERRORS_HEADER:
        raise ValueError(f"unexpected header {header}")
    out = []
    for rank, title, revenue, prediction, err in reader:
        out.append({"rank": int(rank), "title": title, "revenue": float(revenue),
                    "prediction": float(prediction), "relative_error": float(err)})
    return out


# --- SVG --------------------------------------------------------------------

WIDTH, HEIGHT = 720, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 40, 60


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10 ** math.floor(math.log10(raw))
    step = next(s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw)
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    v = first
    while v <= hi + step * 1e-9:
        ticks.append(round(v, 10))
        v += step
    return ticks


def _f(x: float) -> str:
    return f"{x:.2f}"


def _tick_label(v: float) -> str:
    return f"{v:g}"


class _Canvas:
    def __init__(self, title: str, x_label: str, y_label: str):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2:.2f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
            f'<text x="{WIDTH / 2:.2f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(x_label)}</text>',
            f'<text x="16" y="{HEIGHT / 2:.2f}" text-anchor="middle" '
            f'transform="rotate(-90 16 {HEIGHT / 2:.2f})">{escape(y_label)}</text>',
        ]
        self.x0, self.x1 = MARGIN_L, WIDTH - MARGIN_R
        self.y0, self.y1 = HEIGHT - MARGIN_B, MARGIN_T

    def y_axis(self, ticks: list[float], lo: float, hi: float):
        for v in ticks:
            y = self.sy(v, lo, hi)
            self.parts.append(f'<line x1="{self.x0}" y1="{_f(y)}" x2="{self.x1}" y2="{_f(y)}" '
                              f'stroke="#dddddd"/>')
            self.parts.append(f'<text x="{self.x0 - 6}" y="{_f(y + 4)}" text-anchor="end">{_tick_label(v)}</text>')
        self.parts.append(f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x0}" y2="{self.y1}" stroke="black"/>')
        self.parts.append(f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x1}" y2="{self.y0}" stroke="black"/>')

    def sy(self, v: float, lo: float, hi: float) -> float:
        return self.y0 - (v - lo) / (hi - lo) * (self.y0 - self.y1)

    def x_tick(self, x: float, label: str):
        self.parts.append(f'<line x1="{_f(x)}" y1="{self.y0}" x2="{_f(x)}" y2="{self.y0 + 4}" stroke="black"/>')
        self.parts.append(f'<text x="{_f(x)}" y="{self.y0 + 18}" text-anchor="middle">{escape(label)}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def r2_evolution_svg(series: Sequence[tuple[int, float]], title: str = "R² by day before release") -> str:
    """Line chart; the x axis counts days before release, decreasing to the right."""
    canvas = _Canvas(title, "days before release", "R²")
    if not series:
        return canvas.render()
    days = [-t for t, _ in series]
    vals = [r2 for _, r2 in series]
    lo = min(0.0, min(vals))
    hi = max(1.0, max(vals))
    ticks = nice_ticks(lo, hi)
    lo, hi = min(lo, ticks[0]), max(hi, ticks[-1])
    canvas.y_axis(ticks, lo, hi)
    d_max, d_min = max(days), min(days)
    span = d_max - d_min or 1

    def sx(day: int) -> float:
        return canvas.x0 + (d_max - day) / span * (canvas.x1 - canvas.x0)

    for v in nice_ticks(d_min, d_max, target=8):
        if d_min <= v <= d_max and float(v).is_integer():
            canvas.x_tick(sx(v), _tick_label(v))
    pts = " ".join(f"{_f(sx(day))},{_f(canvas.sy(r2, lo, hi))}" for day, r2 in zip(days, vals))
    canvas.parts.append(f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
    for day, r2 in zip(days, vals):
        canvas.parts.append(f'<circle cx="{_f(sx(day))}" cy="{_f(canvas.sy(r2, lo, hi))}" r="2.5" '
                            f'fill="#1f77b4"><title>{day} days: R²={r2:.4f}</title></circle>')
    return canvas.render()


def relative_errors_svg(films: Sequence[FilmPrediction], title: str = "Relative error by revenue rank") -> str:
    """Bar chart of relative errors, films ordered as given (highest revenue first)."""
    canvas = _Canvas(title, "film (by opening-weekend revenue rank)", "relative error")
    if not films:
        return canvas.render()
    errs = [p.relative_error for p in films]
    ticks = nice_ticks(0.0, max(max(errs), 1e-12))
    hi = ticks[-1]
    canvas.y_axis(ticks, 0.0, hi)
    slot = (canvas.x1 - canvas.x0) / len(films)
    bar = slot * 0.8
    label_every = max(1, math.ceil(len(films) / 25))
    for i, p in enumerate(films):
        x = canvas.x0 + i * slot + (slot - bar) / 2
        top = canvas.sy(p.relative_error, 0.0, hi)
        canvas.parts.append(
            f'<rect x="{_f(x)}" y="{_f(top)}" width="{_f(bar)}" height="{_f(canvas.y0 - top)}" fill="#d62728">'
            f'<title>{escape(p.title)}: {p.relative_error:.4f}</title></rect>')
        if i % label_every == 0:
            canvas.x_tick(x + bar / 2, str(i + 1))
    return canvas.render()


def summary_line(report: EvaluationReport, n: int) -> str:
    t_best, r2_best = report.max_r_squared
    return (f"n={n} max R²={r2_best:.4f} at t={t_best} "
            f"mean relative error (t={report.loocv_t})={report.mean_relative_error:.4f}")
