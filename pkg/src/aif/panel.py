"""Search-volume panels: long CSV ingestion into per-region date x keyword matrices."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

PANEL_COLUMNS = ["date", "keyword", "region", "value"]
MAX_INTERPOLATED_GAP = 3


class PanelError(ValueError):
    pass


@dataclass
class SeriesPanel:
    """Daily values for one region.

    Cells before a keyword's first or after its last observation are NaN
    (history shorter than the panel); interior gaps are never NaN.
    """
    dates: np.ndarray          # datetime64[D], strictly increasing
    indicators: list[str]
    values: np.ndarray         # (len(dates), len(indicators))
    region: str = "national"

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.dates), len(self.indicators)):
            raise PanelError(f"values shape {self.values.shape} does not match "
                             f"{len(self.dates)} dates x {len(self.indicators)} indicators")
        if len(self.dates) > 1 and np.any(np.diff(self.dates) <= np.timedelta64(0, "D")):
            raise PanelError("dates must be strictly increasing")
        if len(set(self.indicators)) != len(self.indicators):
            raise PanelError("duplicate indicator names")

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.indicators.index(name)]

    def select(self, names: Sequence[str]) -> "SeriesPanel":
        missing = [n for n in names if n not in self.indicators]
        if missing:
            raise PanelError(f"region {self.region!r}: indicators not in panel: {missing}")
        idx = [self.indicators.index(n) for n in names]
        return SeriesPanel(self.dates.copy(), list(names), self.values[:, idx].copy(), self.region)

    def full_history(self) -> list[str]:
        return [name for j, name in enumerate(self.indicators) if np.all(np.isfinite(self.values[:, j]))]

    def with_values(self, values) -> "SeriesPanel":
        return SeriesPanel(self.dates.copy(), list(self.indicators), values, self.region)


def _fill_gaps(series: np.ndarray, interpolate: bool, label: str) -> np.ndarray:
    ok = np.isfinite(series)
    if not ok.any():
        return series
    first, last = np.argmax(ok), len(ok) - 1 - np.argmax(ok[::-1])
    inner = ~ok[first:last + 1]
    if not inner.any():
        return series
    if not interpolate:
        raise PanelError(f"{label}: missing dates inside the observed range")
    # run lengths of interior gaps
    runs, count = [], 0
    for flag in inner:
        if flag:
            count += 1
        elif count:
            runs.append(count)
            count = 0
    if max(runs) > MAX_INTERPOLATED_GAP:
        raise PanelError(f"{label}: gap of {max(runs)} days exceeds the {MAX_INTERPOLATED_GAP}-day interpolation limit")
    out = series.copy()
    x = np.arange(len(series))
    seg = slice(first, last + 1)
    known = ok[seg]
    out[seg] = np.interp(x[seg], x[seg][known], series[seg][known])
    return out


def panels_from_records(records: Sequence[tuple[str, str, str, float]], interpolate: bool = False) -> dict[str, SeriesPanel]:
    """records: (date, keyword, region, value). Regions share no date grid;
    each spans its own first..last date at daily resolution."""
    by_region: dict[str, dict[str, dict[np.datetime64, float]]] = {}
    for date, keyword, region, value in records:
        d = np.datetime64(date, "D")
        cells = by_region.setdefault(region, {}).setdefault(keyword, {})
        if d in cells:
            raise PanelError(f"duplicate value for ({date}, {keyword}, {region})")
        if not np.isfinite(value) or value < 0:
            raise PanelError(f"({date}, {keyword}, {region}): value must be a finite non-negative number")
        cells[d] = float(value)
    panels = {}
    for region in sorted(by_region):
        cols = by_region[region]
        keywords = sorted(cols)
        all_dates = [d for c in cols.values() for d in c]
        start, end = min(all_dates), max(all_dates)
        dates = np.arange(start, end + np.timedelta64(1, "D"), dtype="datetime64[D]")
        pos = {d: i for i, d in enumerate(dates)}
        values = np.full((len(dates), len(keywords)), np.nan)
        for j, kw in enumerate(keywords):
            for d, v in cols[kw].items():
                values[pos[d], j] = v
            values[:, j] = _fill_gaps(values[:, j], interpolate, f"region {region!r}, keyword {kw!r}")
        panels[region] = SeriesPanel(dates, keywords, values, region)
    return panels


def read_panel_csv(path: str | Path, interpolate: bool = False) -> dict[str, SeriesPanel]:
    records = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != PANEL_COLUMNS:
            raise PanelError(f"{path}: expected columns {PANEL_COLUMNS}, got {reader.fieldnames}")
        for row in reader:
            records.append((row["date"], row["keyword"], row["region"], float(row["value"])))
    if not records:
        raise PanelError(f"{path}: empty panel")
    return panels_from_records(records, interpolate)


def national_panel(panels: dict[str, SeriesPanel], name: str = "national") -> SeriesPanel:
    """The panel called ``name`` if present, otherwise the cross-region mean
    on the common date grid and keyword set."""
    if name in panels:
        return panels[name]
    regions = sorted(panels)
    first = panels[regions[0]]
    for r in regions[1:]:
        p = panels[r]
        if p.indicators != first.indicators or not np.array_equal(p.dates, first.dates):
            raise PanelError(f"region {r!r} does not share the date grid and keywords of {regions[0]!r}")
    stacked = np.stack([panels[r].values for r in regions])
    return SeriesPanel(first.dates.copy(), list(first.indicators), stacked.mean(axis=0), name)


def month_keys(dates: np.ndarray) -> np.ndarray:
    return np.asarray(dates, dtype="datetime64[M]")


def monthly_means(panel: SeriesPanel) -> tuple[list[str], np.ndarray]:
    """Calendar-month means per column; a month with any NaN cell yields NaN."""
    months = month_keys(panel.dates)
    uniq = np.unique(months)
    out = np.empty((len(uniq), len(panel.indicators)))
    for i, m in enumerate(uniq):
        out[i] = panel.values[months == m].mean(axis=0)
    return [str(m) for m in uniq], out
