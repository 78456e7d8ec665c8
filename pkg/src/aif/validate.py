"""Input validation. Problems are collected as diagnostics, never raised."""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from datetime import date
from pathlib import Path

from .config import RunConfig
from .hierarchy import HIERARCHY_COLUMNS, POLARITIES
from .panel import MAX_INTERPOLATED_GAP, PANEL_COLUMNS

INVESTMENT_COLUMNS = ["month", "value"]
_MONTH = re.compile(r"^\d{4}-(0[1-9]|1[0-2])$")


@dataclass(frozen=True)
class Diagnostic:
    file: str
    row: int | None
    column: str | None
    message: str

    def __str__(self):
        where = self.file
        if self.row is not None:
            where += f":{self.row}"
        if self.column:
            where += f" [{self.column}]"
        return f"{where}: {self.message}"


def _read_csv(path: Path, columns: list[str], out: list[Diagnostic], delimiter: str = ","):
    try:
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f, delimiter=delimiter)
            if reader.fieldnames != columns:
                out.append(Diagnostic(str(path), 1, None,
                                      f"expected columns {columns}, found {reader.fieldnames}"))
                return None
            rows = []
            for i, row in enumerate(reader, start=2):
                if None in row or any(row[c] is None for c in columns):
                    out.append(Diagnostic(str(path), i, None, "wrong number of fields"))
                    continue
                rows.append((i, row))
            return rows
    except UnicodeDecodeError:
        out.append(Diagnostic(str(path), None, None, "file is not valid UTF-8"))
        return None


def check_hierarchy(path: Path) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    rows = _read_csv(path, HIERARCHY_COLUMNS, out)
    if rows is None:
        return out
    seen: dict[str, int] = {}
    for i, row in rows:
        for col in HIERARCHY_COLUMNS:
            if not row[col].strip():
                out.append(Diagnostic(str(path), i, col, "empty value"))
        if row["polarity"] not in POLARITIES:
            out.append(Diagnostic(str(path), i, "polarity",
                                  f"unknown polarity {row['polarity']!r}; expected one of {list(POLARITIES)}"))
        entry = row["entry"]
        if entry in seen:
            out.append(Diagnostic(str(path), i, "entry",
                                  f"duplicate entry {entry!r} (first seen on row {seen[entry]})"))
        else:
            seen[entry] = i
    if not rows:
        out.append(Diagnostic(str(path), None, None, "hierarchy has no entries"))
    return out


def check_panel(path: Path, interpolate: bool) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    rows = _read_csv(path, PANEL_COLUMNS, out)
    if rows is None:
        return out
    series: dict[tuple[str, str], list[tuple[date, int]]] = {}
    for i, row in rows:
        try:
            d = date.fromisoformat(row["date"])
        except ValueError:
            out.append(Diagnostic(str(path), i, "date", f"not a YYYY-MM-DD date: {row['date']!r}"))
            continue
        try:
            v = float(row["value"])
        except ValueError:
            out.append(Diagnostic(str(path), i, "value", f"not a number: {row['value']!r}"))
            continue
        if not v >= 0 or v == float("inf"):
            out.append(Diagnostic(str(path), i, "value", "value must be finite and non-negative"))
        if not row["keyword"].strip():
            out.append(Diagnostic(str(path), i, "keyword", "empty keyword"))
        if not row["region"].strip():
            out.append(Diagnostic(str(path), i, "region", "empty region"))
        series.setdefault((row["region"], row["keyword"]), []).append((d, i))
    if not rows:
        out.append(Diagnostic(str(path), None, None, "panel has no rows"))
    for (region, keyword), items in sorted(series.items()):
        for (d0, _), (d1, i1) in zip(items, items[1:]):
            step = (d1 - d0).days
            if step <= 0:
                out.append(Diagnostic(str(path), i1, "date",
                                      f"dates for ({region}, {keyword}) not strictly increasing"))
            elif step > 1 and (not interpolate or step - 1 > MAX_INTERPOLATED_GAP):
                out.append(Diagnostic(str(path), i1, "date",
                                      f"gap of {step - 1} missing day(s) for ({region}, {keyword})"))
    return out


def check_investment(path: Path) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    rows = _read_csv(path, INVESTMENT_COLUMNS, out)
    if rows is None:
        return out
    prev = None
    for i, row in rows:
        if not _MONTH.match(row["month"]):
            out.append(Diagnostic(str(path), i, "month", f"not a YYYY-MM month: {row['month']!r}"))
            continue
        try:
            float(row["value"])
        except ValueError:
            out.append(Diagnostic(str(path), i, "value", f"not a number: {row['value']!r}"))
        if prev is not None and row["month"] <= prev:
            out.append(Diagnostic(str(path), i, "month", "months must be strictly increasing"))
        prev = row["month"]
    return out


def check_finetune(path: Path) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    rows = _read_csv(path, ["tag", "word", "text"], out, delimiter="\t")
    if rows is None:
        return out
    tags = set()
    for i, row in rows:
        if row["tag"] not in ("0", "1"):
            out.append(Diagnostic(str(path), i, "tag", f"tag must be 0 or 1, got {row['tag']!r}"))
        else:
            tags.add(row["tag"])
        if not row["word"].strip():
            out.append(Diagnostic(str(path), i, "word", "empty word"))
    if rows and tags != {"0", "1"}:
        out.append(Diagnostic(str(path), None, "tag", "fine-tuning data needs both labels"))
    return out


def check_text(path: Path) -> list[Diagnostic]:
    try:
        path.read_text(encoding="utf-8")
    except UnicodeDecodeError:
        return [Diagnostic(str(path), None, None, "file is not valid UTF-8")]
    return []


def validate_inputs(config: RunConfig) -> list[Diagnostic]:
    """Empty list means the inputs are usable."""
    out = [Diagnostic("config", None, None, msg) for msg in config.knob_problems()]
    required = ["corpus", "lexicon", "stopwords", "finetune", "hierarchy", "investment"]
    optional = ["availability", "exclusions"]
    files = {}
    for name in required + optional:
        p = config.path(name)
        if p is None:
            if name in required:
                out.append(Diagnostic("config", None, f"paths.{name}", "missing path"))
            continue
        if not p.is_file():
            out.append(Diagnostic("config", None, f"paths.{name}", f"file not found: {p}"))
            continue
        files[name] = p
    panels = config.panel_paths()
    if not panels:
        out.append(Diagnostic("config", None, "paths.panel", "no panel files"))
    for p in panels:
        if not p.is_file():
            out.append(Diagnostic("config", None, "paths.panel", f"file not found: {p}"))
        else:
            out.extend(check_panel(p, config.pipeline.interpolate_gaps))
    for name in ("corpus", "lexicon", "stopwords", "availability", "exclusions"):
        if name in files:
            out.extend(check_text(files[name]))
    if "corpus" in files and not files["corpus"].read_text(encoding="utf-8", errors="replace").strip():
        out.append(Diagnostic(str(files["corpus"]), None, None, "empty corpus"))
    if "hierarchy" in files:
        out.extend(check_hierarchy(files["hierarchy"]))
    if "investment" in files:
        out.extend(check_investment(files["investment"]))
    if "finetune" in files:
        out.extend(check_finetune(files["finetune"]))
    for word, pol in config.polarity_overrides.items():
        if pol not in POLARITIES:
            out.append(Diagnostic("config", None, f"polarity_overrides.{word}", f"unknown polarity {pol!r}"))
    return out
