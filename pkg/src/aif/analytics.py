"""Validation statistics: screening, factor scores, OLS with F-test, lag profiles."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .hierarchy import IndicatorHierarchy
from .panel import SeriesPanel, monthly_means

LOW_CORRELATION, SHORT_HISTORY, NONE = "low_correlation", "short_history", "none"
BETA_TOL = 1e-10
BETA_MAX_ITER = 300


class AnalyticsError(ValueError):
    pass


class RankDeficiencyError(AnalyticsError):
    pass


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise AnalyticsError("series must be one-dimensional and of equal length")
    if len(x) < 3:
        raise AnalyticsError("need at least 3 observations")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise AnalyticsError("zero variance")
    return float(np.clip(np.dot(dx, dy) / math.sqrt(sxx * syy), -1.0, 1.0))


# --------------------------------------------------------------------------
# Screening
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScreenRow:
    indicator: str
    r: float
    kept: bool
    reason: str


@dataclass
class ScreeningReport:
    threshold: float
    rows: list[ScreenRow]

    @property
    def kept(self) -> list[str]:
        return [row.indicator for row in self.rows if row.kept]

    def as_dict(self) -> dict:
        return {"threshold": self.threshold,
                "indicators": [dict(indicator=r.indicator, r=None if math.isnan(r.r) else r.r,
                                    kept=r.kept, reason=r.reason) for r in self.rows]}


def align_months(months: Sequence[str], target: Mapping[str, float]) -> list[int]:
    return [i for i, m in enumerate(months) if m in target]


def screen_indicators(panel: SeriesPanel, target: Mapping[str, float], threshold: float = 0.1,
                      required_span: tuple[str, str] | None = None) -> ScreeningReport:
    """Keep indicators with full history over ``required_span`` and
    |r| >= threshold against the monthly target (calendar-month means).

    ``required_span`` is an inclusive (first, last) ISO date pair and
    defaults to the panel's own date range.
    """
    months, monthly = monthly_means(panel)
    rows_idx = align_months(months, target)
    if len(rows_idx) < 3:
        raise AnalyticsError("target series does not align with at least 3 panel months")
    y = np.array([target[months[i]] for i in rows_idx])
    if required_span is None:
        lo, hi = panel.dates[0], panel.dates[-1]
    else:
        lo, hi = np.datetime64(required_span[0], "D"), np.datetime64(required_span[1], "D")
    if lo < panel.dates[0] or hi > panel.dates[-1]:
        short_all = True
    else:
        short_all = False
    span = (panel.dates >= lo) & (panel.dates <= hi)
    rows = []
    for j, name in enumerate(panel.indicators):
        full = not short_all and bool(np.all(np.isfinite(panel.values[span, j])))
        x = monthly[rows_idx, j]
        ok = np.isfinite(x)
        try:
            r = pearson(x[ok], y[ok]) if ok.sum() >= 3 else float("nan")
        except AnalyticsError:
            r = 0.0 if ok.sum() >= 3 else float("nan")
        if not full:
            rows.append(ScreenRow(name, r, False, SHORT_HISTORY))
        elif abs(r) < threshold:
            rows.append(ScreenRow(name, r, False, LOW_CORRELATION))
        else:
            rows.append(ScreenRow(name, r, True, NONE))
    return ScreeningReport(threshold, rows)


# --------------------------------------------------------------------------
# Factor scores
# --------------------------------------------------------------------------

@dataclass
class FactorScore:
    primary: str
    members: list[str]
    loadings: np.ndarray
    explained_variance_ratio: float
    scores: np.ndarray


def standardize(X: np.ndarray) -> np.ndarray:
    """Columns to mean 0, population variance 1; constant columns become 0."""
    X = np.asarray(X, dtype=np.float64)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    Z = np.zeros_like(X)
    ok = sd > 0
    Z[:, ok] = (X[:, ok] - mu[ok]) / sd[ok]
    return Z


def first_component(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """First principal component of the standardized columns of ``X``.

    Returns (scores, loadings, explained variance ratio); the sign makes the
    scores non-negatively correlated with the row means of ``X``.
    """
    Z = standardize(X)
    n, m = Z.shape
    cov = Z.T @ Z / n
    evals, evecs = np.linalg.eigh(cov)
    vec = evecs[:, -1]
    total = np.trace(cov)
    ratio = float(evals[-1] / total) if total > 0 else 0.0
    scores = Z @ vec
    mean_series = X.mean(axis=1)
    ds, dm = scores - scores.mean(), mean_series - mean_series.mean()
    if np.dot(ds, dm) < 0:
        vec, scores = -vec, -scores
    return scores, vec, ratio


def group_factor_scores(monthly_values: np.ndarray, indicators: Sequence[str],
                        hierarchy: IndicatorHierarchy) -> dict[str, FactorScore]:
    """One first-component score series per primary indicator."""
    X = np.asarray(monthly_values, dtype=np.float64)
    if X.shape[0] < 2:
        raise AnalyticsError("factor scores need at least two observations")
    out = {}
    for primary in hierarchy.primary_names:
        members = [n for n in hierarchy.primary_entries(primary) if n in indicators]
        if not members:
            raise AnalyticsError(f"primary indicator {primary!r} has no surviving indicators")
        cols = X[:, [list(indicators).index(n) for n in members]]
        scores, loadings, ratio = first_component(cols)
        out[primary] = FactorScore(primary, members, loadings, ratio, scores)
    return out


# --------------------------------------------------------------------------
# Regression and F distribution
# --------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < BETA_TOL:
            return h
    raise AnalyticsError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise AnalyticsError("beta parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _check_df(k: int, n: int) -> tuple[int, int]:
    df2 = n - k - 1
    if k < 1 or df2 < 1:
        raise AnalyticsError(f"invalid degrees of freedom (k={k}, n={n})")
    return k, df2


def f_pvalue(F: float, k: int, n: int) -> float:
    """Upper tail P(F(k, n-k-1) > F)."""
    df1, df2 = _check_df(k, n)
    if F < 0 or math.isnan(F):
        raise AnalyticsError("F statistic must be non-negative")
    if math.isinf(F):
        return 0.0
    return betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * F))


def f_cdf(F: float, k: int, n: int) -> float:
    """Lower tail P(F(k, n-k-1) <= F), evaluated independently of f_pvalue."""
    df1, df2 = _check_df(k, n)
    if F <= 0:
        return 0.0
    if math.isinf(F):
        return 1.0
    return betainc(df1 / 2.0, df2 / 2.0, df1 * F / (df1 * F + df2))


@dataclass
class RegressionReport:
    coefficients: np.ndarray
    intercept: float
    r2: float
    adj_r2: float
    F: float
    p_value: float
    n: int
    k: int
    residual_ss: float = 0.0

    def as_dict(self) -> dict:
        return dict(coefficients=[float(c) for c in self.coefficients], intercept=float(self.intercept),
                    r2=self.r2, adj_r2=self.adj_r2, F=_finite_or_none(self.F), p_value=self.p_value,
                    n=self.n, k=self.k)


def _finite_or_none(x):
    return float(x) if math.isfinite(x) else None


def fit_statistics(r2: float, n: int, k: int) -> tuple[float, float, float]:
    """(adjusted R^2, F, p-value) implied by R^2 for k regressors and n samples."""
    _, df2 = _check_df(k, n)
    adj = 1.0 - (1.0 - r2) * (n - 1) / df2
    F = math.inf if r2 >= 1.0 else (r2 / k) / ((1.0 - r2) / df2)
    return adj, F, f_pvalue(F, k, n)


def ols_regress(y, X) -> RegressionReport:
    """Least squares with intercept; X is (n, k)."""
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if len(y) != n:
        raise AnalyticsError("y and X differ in length")
    if n <= k + 1:
        raise AnalyticsError(f"need n > k + 1 observations (n={n}, k={k})")
    design = np.column_stack([np.ones(n), X])
    if np.linalg.matrix_rank(design) < k + 1:
        raise RankDeficiencyError("design matrix is rank deficient")
    beta, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ beta
    sse = float(resid @ resid)
    sst = float(((y - y.mean()) ** 2).sum())
    if sst == 0:
        raise AnalyticsError("zero variance")
    r2 = min(max(1.0 - sse / sst, 0.0), 1.0)
    adj, F, p = fit_statistics(r2, n, k)
    return RegressionReport(beta[1:], float(beta[0]), r2, adj, F, p, n, k, sse)


# --------------------------------------------------------------------------
# Lag profile
# --------------------------------------------------------------------------

@dataclass
class LagProfile:
    lags: list[int]
    r: list[float]
    n_pairs: list[int] = field(default_factory=list)

    @property
    def argmax_lag(self) -> int:
        return self.lags[int(np.argmax(self.r))]

    def as_dict(self) -> dict:
        return dict(lags=self.lags, r=self.r, n_pairs=self.n_pairs, argmax_lag=self.argmax_lag)


def _shift_month(month: str, delta: int) -> str:
    y, m = int(month[:4]), int(month[5:7])
    total = y * 12 + (m - 1) - delta
    return f"{total // 12:04d}-{total % 12 + 1:02d}"


def january_adjust(index: Mapping[str, float], investment: Mapping[str, float]):
    """Merge each January index value into February as their mean and drop
    January from both series. A January without a February stays dropped."""
    idx = {}
    for month, value in index.items():
        if month.endswith("-01"):
            continue
        if month.endswith("-02"):
            jan = month[:5] + "01"
            if jan in index:
                value = (index[jan] + value) / 2.0
        idx[month] = value
    inv = {m: v for m, v in investment.items() if not m.endswith("-01")}
    return idx, inv


def lag_correlation(index: Mapping[str, float], investment: Mapping[str, float], max_lag: int = 5,
                    jan_adjust: bool = True) -> LagProfile:
    """Pearson r between index at month t - lag and investment at month t.

    Lags are calendar months. After the January adjustment a lookup that
    lands on a January uses the merged January-February value.
    """
    if max_lag < 0:
        raise AnalyticsError("max_lag must be >= 0")
    if jan_adjust:
        idx, inv = january_adjust(index, investment)
    else:
        idx, inv = dict(index), dict(investment)
    overlap = sorted(set(idx) & set(inv))
    if len(overlap) < max_lag + 3:
        raise AnalyticsError(f"need at least {max_lag + 3} overlapping months, have {len(overlap)}")
    lags, rs, counts = [], [], []
    for lag in range(max_lag + 1):
        xs, ys = [], []
        for month in sorted(inv):
            src = _shift_month(month, lag)
            if jan_adjust and src.endswith("-01"):
                src = src[:5] + "02"
            if src in idx:
                xs.append(idx[src])
                ys.append(inv[month])
        if len(xs) < 3:
            raise AnalyticsError(f"fewer than 3 aligned months at lag {lag}")
        lags.append(lag)
        rs.append(pearson(xs, ys))
        counts.append(len(xs))
    return LagProfile(lags, rs, counts)
