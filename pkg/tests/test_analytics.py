import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from aif.analytics import (AnalyticsError, LOW_CORRELATION, NONE, RankDeficiencyError, SHORT_HISTORY,
                           betainc, f_cdf, f_pvalue, first_component, fit_statistics, group_factor_scores,
                           january_adjust, lag_correlation, ols_regress, pearson, screen_indicators,
                           standardize)
from aif.hierarchy import hierarchy_from_rows
from aif.panel import SeriesPanel


def test_pearson_against_numpy(rng):
    x, y = rng.normal(size=30), rng.normal(size=30)
    assert pearson(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)
    with pytest.raises(AnalyticsError, match="zero variance"):
        pearson([1, 1, 1], [1, 2, 3])


@settings(max_examples=80, deadline=None)
@given(st.floats(0.1, 30), st.floats(0.1, 30), st.floats(0, 1))
def test_betainc_matches_scipy(a, b, x):
    assert betainc(a, b, x) == pytest.approx(stats.beta.cdf(x, a, b), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 50), st.integers(1, 8), st.integers(10, 200))
def test_f_pvalue_matches_scipy(F, k, n):
    if n - k - 1 < 1:
        return
    assert f_pvalue(F, k, n) == pytest.approx(stats.f.sf(F, k, n - k - 1), abs=1e-9)
    assert f_cdf(F, k, n) + f_pvalue(F, k, n) == pytest.approx(1.0, abs=1e-9)


def test_ols_against_lstsq(rng):
    X = rng.normal(size=(40, 3))
    y = 1.5 + X @ np.array([0.5, -2.0, 0.0]) + rng.normal(0, 0.3, 40)
    rep = ols_regress(y, X)
    beta = np.linalg.lstsq(np.column_stack([np.ones(40), X]), y, rcond=None)[0]
    np.testing.assert_allclose(rep.coefficients, beta[1:], atol=1e-10)
    assert rep.intercept == pytest.approx(beta[0])
    adj, F, p = fit_statistics(rep.r2, 40, 3)
    assert (rep.adj_r2, rep.F, rep.p_value) == pytest.approx((adj, F, p))
    assert rep.p_value == pytest.approx(stats.f.sf(rep.F, 3, 36), abs=1e-9)


def test_ols_rank_deficiency_and_size():
    X = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(RankDeficiencyError):
        ols_regress(np.arange(10.0) ** 2, X)
    with pytest.raises(AnalyticsError):
        ols_regress(np.arange(3.0), np.ones((3, 2)))


def test_first_component_recovers_common_factor(rng):
    f = rng.normal(size=200)
    X = np.column_stack([f + 0.1 * rng.normal(size=200), 2 * f + 0.1 * rng.normal(size=200),
                         -f + 0.1 * rng.normal(size=200) + 5])
    scores, loadings, ratio = first_component(X)
    assert abs(np.corrcoef(scores, f)[0, 1]) > 0.99
    assert ratio > 0.95
    assert np.dot(scores - scores.mean(), X.mean(axis=1) - X.mean()) >= 0
    Z = standardize(X)
    np.testing.assert_allclose(Z.std(axis=0), 1.0)


def test_group_factor_scores_errors_on_empty_group():
    h = hierarchy_from_rows([dict(primary="A", secondary="a", entry="x", polarity="positive"),
                             dict(primary="B", secondary="b", entry="y", polarity="positive")])
    vals = np.random.default_rng(0).normal(size=(10, 2))
    out = group_factor_scores(vals, ["x", "y"], h)
    assert list(out) == ["A", "B"] and out["A"].members == ["x"]
    with pytest.raises(AnalyticsError, match="'B'"):
        group_factor_scores(vals[:, :1], ["x"], h)


def test_screening_reasons():
    dates = np.arange(np.datetime64("2021-01-01"), np.datetime64("2021-07-01"), dtype="datetime64[D]")
    months = dates.astype("datetime64[M]").astype(int)
    signal = np.sin(months.astype(float))
    late = signal.copy()
    late[:40] = np.nan
    vals = np.column_stack([signal + 5, np.ones(len(dates)), late + 5])
    p = SeriesPanel(dates, ["good", "flat", "late"], vals)
    target = {str(m): float(np.sin(float(mi))) for m, mi in
              zip(np.unique(dates.astype("datetime64[M]")), np.unique(months))}
    rep = screen_indicators(p, target, 0.5)
    reasons = {r.indicator: r.reason for r in rep.rows}
    assert reasons == {"good": NONE, "flat": LOW_CORRELATION, "late": SHORT_HISTORY}
    assert rep.kept == ["good"]


def test_january_adjust_merges_and_drops():
    idx = {"2021-01": 1.0, "2021-02": 3.0, "2021-03": 5.0}
    inv = {"2021-01": 9.0, "2021-02": 10.0, "2021-03": 11.0}
    a, b = january_adjust(idx, inv)
    assert a == {"2021-02": 2.0, "2021-03": 5.0} and b == {"2021-02": 10.0, "2021-03": 11.0}


def test_lag_correlation_needs_overlap():
    idx = {f"2021-{m:02d}": float(m) for m in range(1, 6)}
    with pytest.raises(AnalyticsError):
        lag_correlation(idx, idx, max_lag=5)
