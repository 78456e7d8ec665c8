import numpy as np

from aif import synthetic
from aif.hierarchy import hierarchy_from_rows


def test_corpus_size_and_determinism():
    docs = synthetic.make_corpus(200, 4, seed=0)
    assert sum(d.count("。") for d in docs) == 200
    assert docs == synthetic.make_corpus(200, 4, seed=0)


def test_finetune_examples_are_separable_and_balanced():
    exs = synthetic.make_finetune_examples(200, seed=1)
    assert sum(e.tag for e in exs) == 100
    assert all((e.word in e.text) == bool(e.tag) for e in exs)


def test_hierarchy_rows_are_valid():
    h = hierarchy_from_rows(synthetic.hierarchy_rows())
    assert len(h.primary_names) == 5 and len(h.secondary_names) == 6


def test_investment_covers_every_panel_month():
    records, dates, activity = synthetic.make_panel_records(n_days=400, seed=2)
    first = records[0][0]
    inv = synthetic.make_investment(dates, activity, first_month=first[:7])
    panel_months = sorted({r[0][:7] for r in records})
    assert [m for m in panel_months if not m.endswith("-01")] == sorted(inv)
    assert np.isfinite(list(inv.values())).all()
