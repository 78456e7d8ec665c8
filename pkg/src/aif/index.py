"""Polarity normalization, entropy weights and composite index aggregation."""
from __future__ import annotations

import calendar
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .hierarchy import NEGATIVE, POSITIVE, TWO_WAY, IndicatorHierarchy
from .panel import SeriesPanel

DAILY, MONTHLY, ANNUAL = "daily", "monthly", "annual"
_RANK = {DAILY: 0, MONTHLY: 1, ANNUAL: 2}
DEGENERATE_VALUE = 0.5


class IndexEngineError(ValueError):
    pass


# --------------------------------------------------------------------------
# Normalization
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnStats:
    """Per-column min, max and (lower) median used for normalization."""
    indicators: tuple[str, ...]
    minimum: np.ndarray
    maximum: np.ndarray
    median: np.ndarray

    @classmethod
    def of(cls, panel: SeriesPanel) -> "ColumnStats":
        v = panel.values
        if v.size == 0:
            raise IndexEngineError("empty panel")
        if not np.all(np.isfinite(v)):
            raise IndexEngineError(f"region {panel.region!r}: panel has missing cells; screen short histories first")
        return cls(tuple(panel.indicators), v.min(axis=0), v.max(axis=0), lower_median(v))


def lower_median(values: np.ndarray) -> np.ndarray:
    """Column medians taken as the lower middle order statistic, so the
    median is always an observed value."""
    return np.sort(values, axis=0)[(values.shape[0] - 1) // 2]


def normalize_column(x: np.ndarray, polarity: str, lo: float, hi: float, med: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if polarity == POSITIVE:
        if hi == lo:
            return np.full_like(x, DEGENERATE_VALUE)
        return (x - lo) / (hi - lo)
    if polarity == NEGATIVE:
        if hi == lo:
            return np.full_like(x, DEGENERATE_VALUE)
        return (hi - x) / (hi - lo)
    if polarity == TWO_WAY:
        if hi == lo:
            return np.full_like(x, DEGENERATE_VALUE)
        out = np.empty_like(x)
        below = x <= med
        # with med == lo the lower branch only holds the median itself, which is the peak
        out[below] = (x[below] - lo) / (med - lo) if med > lo else 1.0
        out[~below] = (hi - x[~below]) / (hi - med) if hi > med else 1.0
        return out
    raise IndexEngineError(f"unknown polarity {polarity!r}")


def normalize(panel: SeriesPanel, polarities: Mapping[str, str], stats: ColumnStats | None = None) -> SeriesPanel:
    """Map every column into [0, 1] according to its polarity.

    With external ``stats`` (e.g. national statistics applied to a region)
    values outside the reference range are clipped to [0, 1].
    """
    if panel.values.size == 0:
        raise IndexEngineError("empty panel")
    own = stats is None
    if own:
        stats = ColumnStats.of(panel)
    elif not np.all(np.isfinite(panel.values)):
        raise IndexEngineError(f"region {panel.region!r}: panel has missing cells")
    if list(stats.indicators) != list(panel.indicators):
        raise IndexEngineError(f"region {panel.region!r}: indicators differ from the reference statistics")
    out = np.empty_like(panel.values)
    for j, name in enumerate(panel.indicators):
        if name not in polarities:
            raise IndexEngineError(f"no polarity for indicator {name!r}")
        out[:, j] = normalize_column(panel.values[:, j], polarities[name],
                                     stats.minimum[j], stats.maximum[j], stats.median[j])
    if not own:
        out = np.clip(out, 0.0, 1.0)
    return panel.with_values(out)


# --------------------------------------------------------------------------
# Weights and composites
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightVector:
    indicators: tuple[str, ...]
    weights: np.ndarray

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.indicators, map(float, self.weights)))

    def subset(self, names: Sequence[str]) -> "WeightVector":
        """Weights of ``names`` renormalized to sum to one (equal if all zero)."""
        lookup = self.as_dict()
        missing = [n for n in names if n not in lookup]
        if missing:
            raise IndexEngineError(f"no weights for {missing}")
        w = np.array([lookup[n] for n in names])
        total = w.sum()
        w = w / total if total > 0 else np.full(len(names), 1.0 / len(names))
        return WeightVector(tuple(names), w)


def entropy_weights(normalized: SeriesPanel | np.ndarray) -> WeightVector | np.ndarray:
    """Entropy weight method.

    p_ij = x_ij / sum_i x_ij, e_j = -sum_i p_ij ln p_ij / ln n (0 ln 0 = 0),
    w_j proportional to 1 - e_j. All-zero and constant columns get e_j = 1; if every
    column has e_j = 1 the weights are equal. Accepts a panel (returns a
    WeightVector) or a bare matrix (returns an array).
    """
    if isinstance(normalized, SeriesPanel):
        return WeightVector(tuple(normalized.indicators), entropy_weights(normalized.values))
    X = np.asarray(normalized, dtype=np.float64)
    n, m = X.shape
    if n < 2:
        raise IndexEngineError("entropy weights need at least two rows")
    if np.any(X < 0) or not np.all(np.isfinite(X)):
        raise IndexEngineError("entropy weights need finite non-negative values")
    col = X.sum(axis=0)
    e = np.ones(m)
    nz = col > 0
    P = np.zeros_like(X)
    P[:, nz] = X[:, nz] / col[nz]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0)), 0.0)
    e[nz] = -plogp[:, nz].sum(axis=0) / np.log(n)
    # a constant column has p_ij = 1/n exactly, hence e_j = 1; avoid rounding residue
    e[np.all(X == X[0], axis=0)] = 1.0
    d = np.clip(1.0 - e, 0.0, None)
    if d.sum() <= 0:
        return np.full(m, 1.0 / m)
    return d / d.sum()


@dataclass
class IndexSeries:
    frequency: str
    periods: list[str]
    values: np.ndarray
    partial: list[bool] | None = None
    name: str = "index"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.frequency not in _RANK:
            raise IndexEngineError(f"unknown frequency {self.frequency!r}")
        if len(self.periods) != len(self.values):
            raise IndexEngineError("periods and values differ in length")
        if any(a >= b for a, b in zip(self.periods, self.periods[1:])):
            raise IndexEngineError("periods must be strictly increasing")
        if self.partial is None:
            self.partial = [False] * len(self.periods)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.periods, map(float, self.values)))


def composite_index(normalized: SeriesPanel, weights: WeightVector, name: str = "index") -> IndexSeries:
    """Daily weighted sum of normalized indicator values."""
    if tuple(weights.indicators) != tuple(normalized.indicators):
        if sorted(weights.indicators) != sorted(normalized.indicators):
            raise IndexEngineError("weights do not cover exactly the panel's indicators")
        weights = WeightVector(tuple(normalized.indicators),
                               np.array([weights.as_dict()[n] for n in normalized.indicators]))
    values = normalized.values @ weights.weights
    periods = [str(d) for d in normalized.dates]
    return IndexSeries(DAILY, periods, np.clip(values, 0.0, 1.0), name=name)


def dimension_index(normalized: SeriesPanel, hierarchy: IndicatorHierarchy, primary: str,
                    weights: WeightVector) -> IndexSeries:
    names = [n for n in hierarchy.primary_entries(primary) if n in normalized.indicators]
    if not names:
        raise IndexEngineError(f"primary indicator {primary!r} has no entries in the panel")
    return composite_index(normalized.select(names), weights.subset(names), name=primary)


# --------------------------------------------------------------------------
# Temporal aggregation
# --------------------------------------------------------------------------

def _period_of(label: str, target: str) -> str:
    return label[:7] if target == MONTHLY else label[:4]


def _expected_members(period: str, source: str) -> int:
    if source == DAILY:
        if len(period) == 7:
            y, m = int(period[:4]), int(period[5:7])
            return calendar.monthrange(y, m)[1]
        return 366 if calendar.isleap(int(period)) else 365
    return 12  # monthly -> annual


def aggregate(series: IndexSeries, target: str) -> IndexSeries:
    """Calendar-period means. Periods with fewer members than the calendar
    allows are flagged partial; source partial members also flag the period."""
    if _RANK[target] < _RANK[series.frequency]:
        raise IndexEngineError(f"cannot aggregate {series.frequency} to finer {target}")
    if target == series.frequency:
        return IndexSeries(series.frequency, list(series.periods), series.values.copy(),
                           list(series.partial), series.name)
    groups: dict[str, list[int]] = {}
    for i, p in enumerate(series.periods):
        groups.setdefault(_period_of(p, target), []).append(i)
    periods, values, partial = [], [], []
    for period in sorted(groups):
        idx = groups[period]
        vals = series.values[idx]
        vals = vals[np.isfinite(vals)]
        if not len(vals):
            continue
        periods.append(period)
        values.append(float(np.mean(vals)))
        partial.append(len(vals) < _expected_members(period, series.frequency)
                       or any(series.partial[i] for i in idx))
    return IndexSeries(target, periods, np.array(values), partial, series.name)


# --------------------------------------------------------------------------
# Regions
# --------------------------------------------------------------------------

def region_indices(panels: Mapping[str, SeriesPanel], weights: WeightVector, stats: ColumnStats,
                   polarities: Mapping[str, str]) -> dict[str, IndexSeries]:
    """Annual indices per region on the national scale: regional values are
    normalized with national statistics and weighted with national weights."""
    out = {}
    for region in sorted(panels):
        panel = panels[region]
        if sorted(panel.indicators) != sorted(stats.indicators):
            raise IndexEngineError(f"region {region!r}: indicator list differs from the national panel")
        panel = panel.select(list(stats.indicators))
        norm = normalize(panel, polarities, stats)
        daily = composite_index(norm, weights, name=region)
        out[region] = aggregate(daily, ANNUAL)
    return out
