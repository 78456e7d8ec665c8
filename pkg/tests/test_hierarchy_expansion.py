import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aif.expansion import (ExpansionError, cosine, expand_hierarchy, expansion_rows, filter_expansion,
                           rank_all, rank_candidates, read_expansion_csv, rows_csv, select_top)
from aif.hierarchy import (EXPANDED, SEED, HierarchyError, IndicatorHierarchy, hierarchy_csv,
                           hierarchy_from_rows, read_hierarchy)

ROWS = [
    dict(primary="政府投资", secondary="基础设施投资", entry="铁路", polarity="positive"),
    dict(primary="政府投资", secondary="新型基础设施投资", entry="数据中心", polarity="positive"),
    dict(primary="民间投资", secondary="房地产投资", entry="房地产", polarity="two_way"),
]


def hierarchy() -> IndicatorHierarchy:
    return hierarchy_from_rows(ROWS)


def test_hierarchy_structure_and_csv_roundtrip(tmp_path):
    h = hierarchy()
    assert h.primary_names == ["政府投资", "民间投资"]
    assert h.secondary_names == ["基础设施投资", "新型基础设施投资", "房地产投资"]
    assert h.primary_entries("政府投资") == ["铁路", "数据中心"]
    assert h.polarities()["房地产"] == "two_way"
    (tmp_path / "h.csv").write_text(hierarchy_csv(h), encoding="utf-8")
    assert read_hierarchy(tmp_path / "h.csv").rows() == h.rows()


def test_hierarchy_rejects_duplicates_and_bad_polarity():
    with pytest.raises(HierarchyError):
        hierarchy_from_rows(ROWS + [dict(ROWS[0], secondary="新型基础设施投资")])
    with pytest.raises(HierarchyError):
        hierarchy_from_rows([dict(ROWS[0], polarity="sideways")])


def test_restrict_drops_empty_groups():
    h = hierarchy().restrict(["铁路"])
    assert h.entry_names == ["铁路"] and h.primary_names == ["政府投资"]


def test_cosine_properties():
    assert cosine([1, 0], [2, 0]) == pytest.approx(1.0)
    assert cosine([1, 0], [0, 3]) == pytest.approx(0.0)
    with pytest.raises(ExpansionError, match="degenerate"):
        cosine([0, 0], [1, 1])


vec = st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


@settings(max_examples=50, deadline=None)
@given(vec, vec)
def test_cosine_symmetric_and_bounded(u, v):
    c = cosine(u, v)
    assert -1.0 <= c <= 1.0 and c == pytest.approx(cosine(v, u))


def test_ranking_uses_best_seed_and_breaks_ties_by_word():
    seeds = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    cands = {"乙": np.array([0.0, 2.0]), "甲": np.array([3.0, 0.0]), "丙": np.array([1.0, 1.0])}
    r = rank_candidates("x", seeds, cands)
    assert r.words == sorted(["乙", "甲"]) + ["丙"]
    assert select_top(r, 1) == [(sorted(["乙", "甲"])[0], pytest.approx(1.0))]
    with pytest.raises(ExpansionError):
        select_top(r, 0)


def test_filter_expansion():
    sel = [("a", 0.9), ("b", 0.8), ("c", 0.7)]
    assert filter_expansion(sel, None, ["b"]) == [("a", 0.9), ("c", 0.7)]
    assert filter_expansion(sel, ["c"], []) == [("c", 0.7)]


def _vectors():
    return {"铁路": np.array([1.0, 0.0, 0.0]), "数据中心": np.array([0.0, 1.0, 0.0]),
            "房地产": np.array([0.0, 0.0, 1.0]),
            "公路": np.array([0.9, 0.1, 0.0]), "芯片": np.array([0.1, 0.9, 0.0]),
            "房价": np.array([0.0, 0.2, 0.9]), "桥梁": np.array([0.8, 0.0, 0.3])}


def test_expand_hierarchy_assigns_provenance_and_overrides():
    h = hierarchy()
    cands = ["公路", "芯片", "房价", "桥梁"]
    rankings = rank_all(h, _vectors(), cands)
    out = expand_hierarchy(h, rankings, availability=None, top_k=1, polarity_overrides={"房价": "two_way"})
    added = {(s.name, e.name, e.polarity) for _, s, e in out.iter_entries() if e.provenance == EXPANDED}
    assert added == {("基础设施投资", "公路", "positive"), ("新型基础设施投资", "芯片", "positive"),
                     ("房地产投资", "房价", "two_way")}
    assert all(e.provenance == SEED for _, _, e in out.iter_entries() if e.name in h.entry_names)


def test_expand_hierarchy_keeps_word_under_best_secondary():
    h = hierarchy()
    rankings = rank_all(h, _vectors(), ["桥梁"])
    out = expand_hierarchy(h, rankings, availability=None, top_k=5)
    owners = [s.name for _, s, e in out.iter_entries() if e.name == "桥梁"]
    assert owners == ["基础设施投资"]


def test_expand_hierarchy_respects_availability_and_missing_ranking():
    h = hierarchy()
    rankings = rank_all(h, _vectors(), ["公路", "芯片"])
    out = expand_hierarchy(h, rankings, availability=["芯片"], top_k=2)
    assert [e.name for _, _, e in out.iter_entries() if e.provenance == EXPANDED] == ["芯片"]
    del rankings["房地产投资"]
    with pytest.raises(ExpansionError):
        expand_hierarchy(h, rankings, availability=None)


def test_expansion_csv_roundtrip():
    h = hierarchy()
    out = expand_hierarchy(h, rank_all(h, _vectors(), ["公路"]), None, top_k=1)
    rows = expansion_rows(out)
    assert read_expansion_csv(rows_csv(rows)) == rows
