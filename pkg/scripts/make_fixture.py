"""Regenerate the bundled miniature fixture under fixtures/mini/.

    python3 scripts/make_fixture.py [--out fixtures/mini] [--seed 0]
"""
from __future__ import annotations

import argparse
import csv
import json
from pathlib import Path

from aif import synthetic
from aif.corpus import write_finetune_tsv
from aif.hierarchy import HIERARCHY_COLUMNS

CONFIG = {
    "paths": {
        "corpus": "corpus.txt",
        "lexicon": "lexicon.txt",
        "stopwords": "stopwords.txt",
        "finetune": "finetune.tsv",
        "hierarchy": "hierarchy.csv",
        "panel": ["panel.csv"],
        "investment": "investment.csv",
        "availability": "availability.txt",
        "exclusions": "exclusions.txt",
        "output_dir": "out",
    },
    "encoder": {"num_layers": 2, "num_heads": 2, "d_model": 64, "d_ff": 128, "max_seq_len": 64},
    "pretrain": {"steps": 200, "batch_size": 48, "lr": 5e-3},
    "finetune": {"batch_size": 16, "epochs": 3, "lr": 1e-3, "val_fraction": 0.2},
    "pipeline": {"top_k": 10, "screen_threshold": 0.1, "max_lag": 5},
    "polarity_overrides": {"房价": "two_way"},
    "rng_seed": 0,
}


def write_lines(path: Path, lines) -> None:
    path.write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="fixtures/mini")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    write_lines(out / "corpus.txt", synthetic.make_corpus(200, 4, args.seed))
    write_lines(out / "lexicon.txt", synthetic.lexicon_words())
    write_lines(out / "stopwords.txt", synthetic.STOPWORDS)
    write_finetune_tsv(out / "finetune.tsv", synthetic.make_finetune_examples(600, args.seed))
    with open(out / "hierarchy.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, HIERARCHY_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(synthetic.hierarchy_rows())

    records, dates, activity = synthetic.make_panel_records(n_days=730, seed=args.seed)
    with open(out / "panel.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["date", "keyword", "region", "value"])
        for region in sorted({r[2] for r in records}):
            for kw in synthetic.PANEL_KEYWORDS:
                w.writerows(r for r in records if r[2] == region and r[1] == kw)
    investment = synthetic.make_investment(dates, activity, seed=args.seed, first_month=records[0][0][:7])
    with open(out / "investment.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["month", "value"])
        w.writerows(investment.items())
    write_lines(out / "availability.txt", synthetic.PANEL_KEYWORDS)
    write_lines(out / "exclusions.txt", [])
    (out / "config.json").write_text(json.dumps(CONFIG, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    print(f"fixture written to {out}")


if __name__ == "__main__":
    main()
