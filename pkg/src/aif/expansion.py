"""Similarity-based keyword expansion of the indicator hierarchy."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from io import StringIO
from typing import Iterable, Mapping, Sequence

import numpy as np

from .hierarchy import (EXPANDED, POSITIVE, SEED, Entry, IndicatorHierarchy, Primary, Secondary)

DEFAULT_TOP_K = 50
EXPANSION_COLUMNS = ["secondary_indicator", "word", "score", "provenance"]


class ExpansionError(ValueError):
    pass


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ExpansionError("degenerate embedding")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


@dataclass(frozen=True)
class SimilarityRanking:
    secondary_indicator: str
    entries: tuple[tuple[str, float], ...]

    @property
    def words(self) -> list[str]:
        return [w for w, _ in self.entries]


def rank_candidates(secondary_indicator: str, seed_vectors: Sequence, candidate_vectors: Mapping[str, object]) -> SimilarityRanking:
    """Score each candidate by its best cosine against the seeds; order by
    descending score, then by word."""
    if len(seed_vectors) == 0:
        raise ExpansionError(f"secondary indicator {secondary_indicator!r} has no seed vectors")
    scored = []
    for word, vec in candidate_vectors.items():
        scored.append((word, max(cosine(s, vec) for s in seed_vectors)))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return SimilarityRanking(secondary_indicator, tuple(scored))


def select_top(ranking: SimilarityRanking, k: int = DEFAULT_TOP_K) -> list[tuple[str, float]]:
    if k < 1:
        raise ExpansionError("k must be >= 1")
    return list(ranking.entries[:k])


def filter_expansion(selected: Sequence, availability: Iterable[str] | None,
                     exclusions: Iterable[str] = ()) -> list:
    """Keep entries whose word is available and not excluded; ``availability=None``
    means every word is available. Accepts bare words or (word, score) pairs."""
    avail = None if availability is None else set(availability)
    excl = set(exclusions)
    out = []
    for item in selected:
        word = item[0] if isinstance(item, tuple) else item
        if (avail is None or word in avail) and word not in excl:
            out.append(item)
    return out


def expand_hierarchy(hierarchy: IndicatorHierarchy, rankings: Mapping[str, SimilarityRanking],
                     availability: Iterable[str] | None, exclusions: Iterable[str] = (),
                     top_k: int = DEFAULT_TOP_K,
                     polarity_overrides: Mapping[str, str] | None = None) -> IndicatorHierarchy:
    """Append the filtered top-k words of each secondary indicator as expanded entries.

    A word selected under several secondary indicators is kept only under
    the one where it scores highest (earlier indicator on ties), so entry
    names stay unique. Words already in the hierarchy are never added.
    """
    availability = None if availability is None else set(availability)
    exclusions = set(exclusions)
    overrides = dict(polarity_overrides or {})
    existing = set(hierarchy.entry_names)
    order = hierarchy.secondary_names
    for name in order:
        if name not in rankings:
            raise ExpansionError(f"missing ranking for secondary indicator {name!r}")

    owner: dict[str, tuple[float, int]] = {}
    picks: dict[str, list[tuple[str, float]]] = {}
    for pos, name in enumerate(order):
        chosen = filter_expansion(select_top(rankings[name], top_k), availability, exclusions)
        chosen = [(w, s) for w, s in chosen if w not in existing]
        picks[name] = chosen
        for w, s in chosen:
            if w not in owner or s > owner[w][0]:
                owner[w] = (s, pos)

    primaries = []
    for p in hierarchy.primaries:
        secs = []
        for s in p.secondaries:
            pos = order.index(s.name)
            added = [Entry(w, overrides.get(w, POSITIVE), EXPANDED, score)
                     for w, score in picks[s.name] if owner[w][1] == pos]
            secs.append(Secondary(s.name, list(s.entries) + added))
        primaries.append(Primary(p.name, secs))
    return IndicatorHierarchy(primaries)


def rank_all(hierarchy: IndicatorHierarchy, vectors: Mapping[str, np.ndarray],
             candidates: Iterable[str]) -> dict[str, SimilarityRanking]:
    """Rankings for every secondary indicator against a shared candidate pool."""
    cand = {w: vectors[w] for w in sorted(candidates)}
    out = {}
    for name in hierarchy.secondary_names:
        seeds = [vectors[w] for w in hierarchy.seeds(name)]
        out[name] = rank_candidates(name, seeds, cand)
    return out


def expansion_rows(hierarchy: IndicatorHierarchy) -> list[dict[str, str]]:
    rows = []
    for _, s, e in hierarchy.iter_entries():
        score = "" if e.score is None else repr(float(e.score))
        rows.append(dict(secondary_indicator=s.name, word=e.name, score=score, provenance=e.provenance))
    return rows


def ranking_rows(rankings: Mapping[str, SimilarityRanking], limit: int | None = None) -> list[dict[str, str]]:
    rows = []
    for name, r in rankings.items():
        for word, score in r.entries[:limit]:
            rows.append(dict(secondary_indicator=name, word=word, score=repr(float(score)), provenance="candidate"))
    return rows


def rows_csv(rows: Sequence[dict], columns: Sequence[str] = EXPANSION_COLUMNS) -> str:
    buf = StringIO()
    w = csv.DictWriter(buf, list(columns), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def read_expansion_csv(text: str) -> list[dict[str, str]]:
    reader = csv.DictReader(StringIO(text))
    if reader.fieldnames != EXPANSION_COLUMNS:
        raise ExpansionError(f"expected columns {EXPANSION_COLUMNS}, got {reader.fieldnames}")
    rows = list(reader)
    for r in rows:
        if r["provenance"] not in (SEED, EXPANDED, "candidate"):
            raise ExpansionError(f"unknown provenance {r['provenance']!r}")
    return rows
