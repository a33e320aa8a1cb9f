"""Opening-weekend regression on screen count and cumulative pageviews.

One model per day offset ``t``::

    revenue_i = a_screens * screens_i + a_views * views_i(t) [+ intercept] + residual_i

where ``views_i(t)`` sums film i's daily views from the dataset's window start
through day ``t``. Models are evaluated by in-sample R² over a range of days
and by leave-one-out predictions at a single day (default: a week before
release), scored with the relative error ``|y - p| / y``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from typing import Sequence

import numpy as np
import scipy.linalg

from .core import AlignedFilm, Dataset, PageviewSeries
from .errors import CoverageError, DegenerateTargetError, FitError, FoldError, UnderdeterminedFitError

DEFAULT_LOOCV_DAY = -7


def cumulative_views(s: PageviewSeries, t0: int, t: int) -> int:
    """Total views over offsets t0..t inclusive."""
    if t < t0:
        raise ValueError(f"window end {t} precedes window start {t0}")
    lo, hi = s.coverage
    if t0 < lo or t > hi:
        raise CoverageError(f"{s.article_url}: window [{t0}, {t}] exceeds coverage [{lo}, {hi}]")
    return sum(v for d, v in s.daily.items() if t0 <= d <= t)


@dataclass(frozen=True)
class DesignMatrix:
    features: np.ndarray  # (n, 2): screens, cumulative views
    targets: np.ndarray  # (n,)
    t: int
    keys: tuple[tuple[str, date], ...] = ()

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[1] != 2:
            raise ValueError(f"features must be n x 2, got {self.features.shape}")
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError("feature rows and targets differ in length")

    @property
    def n(self) -> int:
        return int(self.targets.shape[0])

    def drop(self, i: int) -> "DesignMatrix":
        keys = self.keys[:i] + self.keys[i + 1:] if self.keys else ()
        return DesignMatrix(np.delete(self.features, i, axis=0), np.delete(self.targets, i), self.t, keys)

    def take(self, idx: Sequence[int]) -> "DesignMatrix":
        idx = list(idx)
        keys = tuple(self.keys[i] for i in idx) if self.keys else ()
        return DesignMatrix(self.features[idx], self.targets[idx], self.t, keys)


def build_design_matrix(d: Dataset, t: int) -> DesignMatrix:
    if not d.window_start <= t <= 0:
        raise ValueError(f"day {t} outside [{d.window_start}, 0]")
    short = [f.record.title for f in d.films if not f.views.covers(d.window_start, t)]
    if short:
        raise CoverageError(f"pageviews do not span [{d.window_start}, {t}] for: {', '.join(short)}")
    rows = [(f.record.screens, cumulative_views(f.views, d.window_start, t)) for f in d.films]
    features = np.array(rows, dtype=float).reshape(len(rows), 2)
    targets = np.array([f.record.revenue for f in d.films], dtype=float)
    return DesignMatrix(features, targets, t, tuple(f.record.key for f in d.films))


@dataclass(frozen=True)
class RegressionFit:
    alpha_screens: float
    alpha_views: float
    intercept: float | None
    t: int
    n: int
    rank: int
    r_squared: float

    @property
    def with_intercept(self) -> bool:
        return self.intercept is not None

    def to_json(self) -> dict:
        doc = {"t": self.t, "n": self.n, "rank": self.rank, "with_intercept": self.with_intercept,
               "alpha_screens": self.alpha_screens, "alpha_views": self.alpha_views}
        if self.intercept is not None:
            doc["intercept"] = self.intercept
        doc["r_squared"] = self.r_squared
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "RegressionFit":
        return cls(doc["alpha_screens"], doc["alpha_views"], doc.get("intercept"),
                   doc["t"], doc["n"], doc["rank"], doc["r_squared"])


def lstsq_min_norm(a: np.ndarray, y: np.ndarray, rcond: float | None = None) -> tuple[np.ndarray, int]:
    """Minimum-norm least-squares solution via column-pivoted QR.

    When the numerical rank r is below the column count, the leading r rows
    of R are reduced by a second QR of their transpose (a complete orthogonal
    decomposition), which yields the minimum-norm solution among all
    minimizers.
    """
    n, p = a.shape
    if p == 0:
        return np.zeros(0), 0
    q, r, piv = scipy.linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if rcond is None:
        rcond = max(n, p) * np.finfo(float).eps
    if diag.size == 0 or diag[0] == 0.0:
        return np.zeros(p), 0
    rank = int(np.sum(diag > rcond * diag[0]))
    qty = q[:, :rank].T @ y
    z = np.zeros(p)
    if rank == p:
        z = scipy.linalg.solve_triangular(r[:p, :p], qty)
    else:
        # [R11 R12] = T^T W^T with W (p x rank) orthonormal, T upper triangular
        w, tt = np.linalg.qr(r[:rank, :].T)
        u = scipy.linalg.solve_triangular(tt.T, qty, lower=True)
        z = w @ u
    coef = np.empty(p)
    coef[piv] = z
    return coef, rank


def _design(m: DesignMatrix, with_intercept: bool) -> np.ndarray:
    if with_intercept:
        return np.column_stack([m.features, np.ones(m.n)])
    return m.features


def _ss_tot(y: np.ndarray, centered: bool) -> float:
    dev = y - y.mean() if centered else y
    return float(dev @ dev)


def fit_ols(m: DesignMatrix, with_intercept: bool = True) -> RegressionFit:
    n_params = 3 if with_intercept else 2
    if m.n < n_params:
        raise UnderdeterminedFitError(f"{m.n} observation(s) cannot fit {n_params} parameters")
    y = m.targets
    ss_tot = _ss_tot(y, with_intercept)
    if ss_tot == 0.0:
        raise DegenerateTargetError("targets have zero total sum of squares")
    coef, rank = lstsq_min_norm(_design(m, with_intercept), y)
    resid = y - _design(m, with_intercept) @ coef
    r2 = 1.0 - float(resid @ resid) / ss_tot
    return RegressionFit(
        alpha_screens=float(coef[0]),
        alpha_views=float(coef[1]),
        intercept=float(coef[2]) if with_intercept else None,
        t=m.t, n=m.n, rank=rank, r_squared=r2,
    )


def predict(f: RegressionFit, screens: float, cum_views: float) -> float:
    out = f.alpha_screens * screens + f.alpha_views * cum_views
    if f.intercept is not None:
        out += f.intercept
    return out


def predict_matrix(f: RegressionFit, m: DesignMatrix) -> np.ndarray:
    out = f.alpha_screens * m.features[:, 0] + f.alpha_views * m.features[:, 1]
    if f.intercept is not None:
        out = out + f.intercept
    return out


def r_squared(f: RegressionFit, m: DesignMatrix) -> float:
    """1 - SS_res/SS_tot; SS_tot is mean-centred only when ``f`` has an intercept."""
    if m.n == 0:
        raise ValueError("empty design matrix")
    ss_tot = _ss_tot(m.targets, f.with_intercept)
    if ss_tot == 0.0:
        raise DegenerateTargetError("targets have zero total sum of squares")
    resid = m.targets - predict_matrix(f, m)
    return 1.0 - float(resid @ resid) / ss_tot


def loocv_from_matrix(m: DesignMatrix, with_intercept: bool = True) -> np.ndarray:
    n_params = 3 if with_intercept else 2
    if m.n < n_params + 1:
        raise FoldError(f"leave-one-out needs at least {n_params + 1} films, got {m.n}")
    preds = np.empty(m.n)
    for i in range(m.n):
        try:
            fit = fit_ols(m.drop(i), with_intercept)
        except FitError as exc:
            raise FoldError(f"fold {i} ({m.keys[i][0] if m.keys else i}): {exc}", fold=i) from exc
        preds[i] = predict(fit, m.features[i, 0], m.features[i, 1])
    return preds


def loocv_predictions(d: Dataset, t: int = DEFAULT_LOOCV_DAY, with_intercept: bool = True) -> np.ndarray:
    """Prediction for each film from a model fitted on all the other films."""
    return loocv_from_matrix(build_design_matrix(d, t), with_intercept)


def relative_errors(y: Sequence[float], p: Sequence[float]) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    if y.shape != p.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {p.shape}")
    if np.any(y <= 0):
        raise ValueError("actual revenues must be positive")
    return np.abs(y - p) / y


def _days(d: Dataset, t_range: tuple[int, int]) -> range:
    lo, hi = t_range
    if lo > hi:
        raise ValueError(f"empty day range [{lo}, {hi}]")
    if lo < d.window_start or hi > 0:
        raise ValueError(f"day range [{lo}, {hi}] outside [{d.window_start}, 0]")
    return range(lo, hi + 1)


def _cumulative_table(d: Dataset, t_hi: int) -> np.ndarray:
    """Row i, column j: film i's views summed over [window_start, window_start + j]."""
    short = [f.record.title for f in d.films if not f.views.covers(d.window_start, t_hi)]
    if short:
        raise CoverageError(f"pageviews do not span [{d.window_start}, {t_hi}] for: {', '.join(short)}")
    width = t_hi - d.window_start + 1
    daily = np.zeros((len(d.films), width), dtype=np.int64)
    for i, f in enumerate(d.films):
        for off, v in f.views.daily.items():
            if d.window_start <= off <= t_hi:
                daily[i, off - d.window_start] = v
    return np.cumsum(daily, axis=1)


def _matrices(d: Dataset, days: range):
    """Design matrices for consecutive days, sharing one prefix-sum pass."""
    table = _cumulative_table(d, days[-1])
    screens = np.array([f.record.screens for f in d.films], dtype=float)
    targets = np.array([f.record.revenue for f in d.films], dtype=float)
    keys = tuple(f.record.key for f in d.films)
    for t in days:
        views = table[:, t - d.window_start].astype(float)
        yield DesignMatrix(np.column_stack([screens, views]).reshape(len(keys), 2), targets, t, keys)


def _at_day(exc: Exception, t: int) -> Exception:
    new = exc.__class__(f"t={t}: {exc}")
    new.__cause__ = exc
    return new


def fit_evolution(d: Dataset, t_range: tuple[int, int], with_intercept: bool = True) -> list[RegressionFit]:
    fits = []
    for m in _matrices(d, _days(d, t_range)):
        try:
            fits.append(fit_ols(m, with_intercept))
        except FitError as exc:
            raise _at_day(exc, m.t)
    return fits


def r2_evolution(d: Dataset, t_range: tuple[int, int], with_intercept: bool = True) -> list[tuple[int, float]]:
    """In-sample R² of the day-t model for each t in the inclusive range."""
    return [(f.t, f.r_squared) for f in fit_evolution(d, t_range, with_intercept)]


def loocv_r2_evolution(d: Dataset, t_range: tuple[int, int],
                       with_intercept: bool = True) -> list[tuple[int, float]]:
    """Out-of-sample R² (from leave-one-out predictions) for each day."""
    out = []
    for m in _matrices(d, _days(d, t_range)):
        try:
            p = loocv_from_matrix(m, with_intercept)
        except FitError as exc:
            raise _at_day(exc, m.t)
        resid = m.targets - p
        out.append((m.t, 1.0 - float(resid @ resid) / _ss_tot(m.targets, with_intercept)))
    return out


def revenue_order(films: Sequence[AlignedFilm]) -> list[int]:
    """Indices by revenue descending, then release date, then title."""
    return sorted(range(len(films)),
                  key=lambda i: (-films[i].record.revenue, films[i].record.release_date, films[i].record.title))


def exclude_top_grossing(d: Dataset, k: int) -> Dataset:
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k >= len(d.films):
        raise ValueError(f"cannot exclude {k} of {len(d.films)} films")
    drop = set(revenue_order(d.films)[:k])
    kept = tuple(f for i, f in enumerate(d.films) if i not in drop)
    return Dataset(d.market, kept, d.window_start)


@dataclass(frozen=True)
class FilmPrediction:
    title: str
    release_date: date
    revenue: float
    prediction: float
    relative_error: float

    def to_json(self) -> dict:
        return {"title": self.title, "release_date": self.release_date.isoformat(),
                "revenue": self.revenue, "prediction": self.prediction,
                "relative_error": self.relative_error}


@dataclass(frozen=True)
class EvaluationReport:
    per_film: tuple[FilmPrediction, ...]
    loocv_t: int
    with_intercept: bool
    r2_evolution: tuple[tuple[int, float], ...]
    fits: tuple[RegressionFit, ...] = field(default=(), repr=False)

    @property
    def mean_relative_error(self) -> float:
        return float(np.mean([p.relative_error for p in self.per_film]))

    @property
    def max_r_squared(self) -> tuple[int, float]:
        return max(self.r2_evolution, key=lambda e: e[1])

    def top_by_revenue(self, k: int) -> list[FilmPrediction]:
        order = sorted(self.per_film, key=lambda p: (-p.revenue, p.release_date, p.title))
        return order[:k]

    def to_json(self) -> dict:
        return {
            "loocv_t": self.loocv_t,
            "with_intercept": self.with_intercept,
            "per_film": [p.to_json() for p in self.per_film],
            "r2_evolution": [{"t": t, "r_squared": r2} for t, r2 in self.r2_evolution],
        }


def evaluate(d: Dataset, t_range: tuple[int, int] | None = None, loocv_t: int = DEFAULT_LOOCV_DAY,
             with_intercept: bool = True) -> EvaluationReport:
    """R² evolution over ``t_range`` (default: window start to the day before release)
    plus leave-one-out predictions at ``loocv_t``."""
    if t_range is None:
        t_range = (d.window_start, -1)
    fits = fit_evolution(d, t_range, with_intercept)
    m = build_design_matrix(d, loocv_t)
    p = loocv_from_matrix(m, with_intercept)
    e = relative_errors(m.targets, p)
    per_film = tuple(
        FilmPrediction(f.record.title, f.record.release_date, float(f.record.revenue), float(pi), float(ei))
        for f, pi, ei in zip(d.films, p, e)
    )
    return EvaluationReport(per_film, loocv_t, with_intercept,
                            tuple((f.t, f.r_squared) for f in fits), tuple(fits))
