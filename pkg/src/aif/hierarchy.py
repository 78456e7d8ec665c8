"""Primary -> secondary -> entry indicator tree and its CSV form."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

POSITIVE, NEGATIVE, TWO_WAY = "positive", "negative", "two_way"
POLARITIES = (POSITIVE, NEGATIVE, TWO_WAY)
SEED, EXPANDED = "seed", "expanded"

HIERARCHY_COLUMNS = ["primary", "secondary", "entry", "polarity"]


class HierarchyError(ValueError):
    pass


@dataclass(frozen=True)
class Entry:
    name: str
    polarity: str = POSITIVE
    provenance: str = SEED
    score: float | None = None


@dataclass
class Secondary:
    name: str
    entries: list[Entry] = field(default_factory=list)


@dataclass
class Primary:
    name: str
    secondaries: list[Secondary] = field(default_factory=list)


@dataclass
class IndicatorHierarchy:
    primaries: list[Primary]

    def __post_init__(self):
        seen = {}
        for p, s, e in self.iter_entries():
            if e.polarity not in POLARITIES:
                raise HierarchyError(f"entry {e.name!r}: unknown polarity {e.polarity!r}")
            if e.name in seen:
                raise HierarchyError(f"entry {e.name!r} appears under both {seen[e.name]!r} and {s.name!r}")
            seen[e.name] = s.name
        for p in self.primaries:
            for s in p.secondaries:
                if not s.entries:
                    raise HierarchyError(f"secondary indicator {s.name!r} has no entries")

    def iter_entries(self) -> Iterator[tuple[Primary, Secondary, Entry]]:
        for p in self.primaries:
            for s in p.secondaries:
                for e in s.entries:
                    yield p, s, e

    @property
    def entry_names(self) -> list[str]:
        return [e.name for _, _, e in self.iter_entries()]

    @property
    def secondary_names(self) -> list[str]:
        return [s.name for p in self.primaries for s in p.secondaries]

    @property
    def primary_names(self) -> list[str]:
        return [p.name for p in self.primaries]

    def polarities(self) -> dict[str, str]:
        return {e.name: e.polarity for _, _, e in self.iter_entries()}

    def primary(self, name: str) -> Primary:
        for p in self.primaries:
            if p.name == name:
                return p
        raise HierarchyError(f"unknown primary indicator {name!r}")

    def secondary(self, name: str) -> Secondary:
        for p in self.primaries:
            for s in p.secondaries:
                if s.name == name:
                    return s
        raise HierarchyError(f"unknown secondary indicator {name!r}")

    def primary_entries(self, name: str) -> list[str]:
        return [e.name for s in self.primary(name).secondaries for e in s.entries]

    def seeds(self, secondary: str | None = None) -> list[str]:
        secs = [self.secondary(secondary)] if secondary else [s for p in self.primaries for s in p.secondaries]
        return [e.name for s in secs for e in s.entries if e.provenance == SEED]

    def restrict(self, keep: Iterable[str], drop_empty: bool = True) -> "IndicatorHierarchy":
        """Copy holding only the entries named in ``keep``."""
        keep = set(keep)
        primaries = []
        for p in self.primaries:
            secs = [Secondary(s.name, [e for e in s.entries if e.name in keep]) for s in p.secondaries]
            if drop_empty:
                secs = [s for s in secs if s.entries]
            if secs or not drop_empty:
                primaries.append(Primary(p.name, secs))
        return IndicatorHierarchy(primaries)

    def seeds_only(self) -> "IndicatorHierarchy":
        return self.restrict(e.name for _, _, e in self.iter_entries() if e.provenance == SEED)

    def rows(self) -> list[dict[str, str]]:
        return [dict(primary=p.name, secondary=s.name, entry=e.name, polarity=e.polarity)
                for p, s, e in self.iter_entries()]


def hierarchy_from_rows(rows: Iterable[dict[str, str]]) -> IndicatorHierarchy:
    primaries: dict[str, Primary] = {}
    secondaries: dict[tuple[str, str], Secondary] = {}
    for row in rows:
        p = primaries.setdefault(row["primary"], Primary(row["primary"]))
        key = (row["primary"], row["secondary"])
        if key not in secondaries:
            secondaries[key] = Secondary(row["secondary"])
            p.secondaries.append(secondaries[key])
        secondaries[key].entries.append(Entry(row["entry"], row.get("polarity") or POSITIVE))
    return IndicatorHierarchy(list(primaries.values()))


def read_hierarchy(path: str | Path) -> IndicatorHierarchy:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != HIERARCHY_COLUMNS:
            raise HierarchyError(f"{path}: expected columns {HIERARCHY_COLUMNS}, got {reader.fieldnames}")
        return hierarchy_from_rows(list(reader))


def hierarchy_csv(h: IndicatorHierarchy) -> str:
    from io import StringIO
    buf = StringIO()
    w = csv.DictWriter(buf, HIERARCHY_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(h.rows())
    return buf.getvalue()


def with_polarity(entry: Entry, polarity: str) -> Entry:
    return replace(entry, polarity=polarity)
