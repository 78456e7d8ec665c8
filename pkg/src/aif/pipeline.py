"""Stage orchestration: pretrain -> finetune -> expand -> build-index -> analyze -> report.

Each stage reads its inputs and upstream artifacts from the output
directory, computes everything in memory and then writes its artifacts
atomically (temporary file + rename). ``manifest.json`` records digests of
every input and output.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from . import checkpoint
from .analytics import (AnalyticsError, group_factor_scores, lag_correlation,
                        ols_regress, screen_indicators, ScreenRow, ScreeningReport, SHORT_HISTORY)
from .config import RunConfig
from .corpus import (Lexicon, Vocab, build_candidates, read_corpus, read_finetune_tsv,
                     read_word_list)
from .encoder import EncoderConfig, init_params
from .expansion import (EXPANSION_COLUMNS, expand_hierarchy, expansion_rows, rank_all,
                        ranking_rows, read_expansion_csv, rows_csv)
from .hierarchy import (EXPANDED, SEED, Entry, IndicatorHierarchy, Primary, Secondary,
                        hierarchy_csv, read_hierarchy)
from .index import (ANNUAL, MONTHLY, ColumnStats, IndexSeries, aggregate, composite_index,
                    dimension_index, entropy_weights, normalize, region_indices)
from .panel import SeriesPanel, monthly_means, national_panel, panels_from_records
from .training import PretrainSettings, embed_words, fine_tune, train
from .validate import validate_inputs

log = logging.getLogger(__name__)

STAGES = ("pretrain", "finetune", "expand", "build-index", "analyze", "report")
DEPENDS = {"finetune": "pretrain", "expand": "finetune", "build-index": "expand",
           "analyze": "build-index", "report": "analyze"}
OUTPUTS = {
    "pretrain": ("vocab.txt", "encoder_pretrained.aifx", "pretrain_loss.csv"),
    "finetune": ("encoder_finetuned.aifx", "finetune_history.csv"),
    "expand": ("candidates.txt", "rankings.csv", "expansion.csv", "hierarchy_expanded.csv"),
    "build-index": ("screening.json", "weights.csv", "index_daily.csv", "index_monthly.csv",
                    "index_annual.csv", "dimensions_monthly.csv", "dimensions_annual.csv",
                    "regions_annual.csv"),
    "analyze": ("analysis.json", "factor_scores.csv", "lag_profile.csv"),
    "report": ("report.md",),
}
MANIFEST = "manifest.json"

EXIT_OK, EXIT_DEPENDENCY, EXIT_SCHEMA, EXIT_NUMERIC = 0, 2, 3, 4


class StageError(RuntimeError):
    exit_code = 1


class DependencyError(StageError):
    exit_code = EXIT_DEPENDENCY


class SchemaError(StageError):
    exit_code = EXIT_SCHEMA


class NumericError(StageError):
    exit_code = EXIT_NUMERIC


# --------------------------------------------------------------------------
# File helpers
# --------------------------------------------------------------------------

def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_outputs(out_dir: Path, files: dict[str, bytes | str]) -> None:
    for name, data in files.items():
        if isinstance(data, str):
            data = data.encode("utf-8")
        checkpoint.atomic_write_bytes(out_dir / name, data)


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def fmt(x) -> str:
    """Shortest round-trip float text; empty for NaN."""
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def json_text(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True, allow_nan=False) + "\n"


def read_csv_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


def read_investment(path: Path) -> dict[str, float]:
    header, rows = read_csv_rows(path)
    if header != ["month", "value"]:
        raise SchemaError(f"{path}: expected columns ['month', 'value'], got {header}")
    return {m: float(v) for m, v in rows}


def series_csv(series: dict[str, IndexSeries]) -> str:
    """period column then one column per series; series must share periods."""
    names = list(series)
    if not names:
        return csv_text(["period"], [])
    periods = series[names[0]].periods
    for s in series.values():
        if s.periods != periods:
            raise StageError("series to be written together must share periods")
    rows = [[p] + [fmt(series[n].values[i]) for n in names] for i, p in enumerate(periods)]
    return csv_text(["period"] + names, rows)


def read_series_csv(path: Path) -> dict[str, dict[str, float]]:
    header, rows = read_csv_rows(path)
    if not header or header[0] != "period":
        raise SchemaError(f"{path}: first column must be 'period'")
    return {name: {r[0]: float(r[j + 1]) for r in rows if r[j + 1] != ""}
            for j, name in enumerate(header[1:])}


# --------------------------------------------------------------------------
# Input loading
# --------------------------------------------------------------------------

@dataclass
class Inputs:
    corpus: list[str]
    lexicon: Lexicon
    stopwords: list[str]
    hierarchy: IndicatorHierarchy


def load_text_inputs(cfg: RunConfig) -> Inputs:
    return Inputs(read_corpus(cfg.path("corpus")), Lexicon.load(cfg.path("lexicon")),
                  read_word_list(cfg.path("stopwords")), read_hierarchy(cfg.path("hierarchy")))


def load_panels(cfg: RunConfig) -> dict[str, SeriesPanel]:
    records = []
    for p in cfg.panel_paths():
        header, rows = read_csv_rows(p)
        idx = {c: header.index(c) for c in ("date", "keyword", "region", "value")}
        records.extend((r[idx["date"]], r[idx["keyword"]], r[idx["region"]], float(r[idx["value"]])) for r in rows)
    return panels_from_records(records, cfg.pipeline.interpolate_gaps)


def encoder_config(cfg: RunConfig, vocab_size: int) -> EncoderConfig:
    e = cfg.encoder
    return EncoderConfig(num_layers=e.num_layers, num_heads=e.num_heads, d_model=e.d_model, d_ff=e.d_ff,
                         vocab_size=vocab_size, max_seq_len=e.max_seq_len, rng_seed=cfg.rng_seed)


def load_expanded(out: Path) -> IndicatorHierarchy:
    """Rebuild the expanded hierarchy with provenance and scores."""
    base = read_hierarchy(out / "hierarchy_expanded.csv")
    meta = {(r["secondary_indicator"], r["word"]): r
            for r in read_expansion_csv((out / "expansion.csv").read_text(encoding="utf-8"))}
    primaries = []
    for p in base.primaries:
        secs = []
        for s in p.secondaries:
            entries = []
            for e in s.entries:
                r = meta.get((s.name, e.name), {"provenance": SEED, "score": ""})
                score = float(r["score"]) if r["score"] else None
                entries.append(Entry(e.name, e.polarity, r["provenance"], score))
            secs.append(Secondary(s.name, entries))
        primaries.append(Primary(p.name, secs))
    return IndicatorHierarchy(primaries)


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------

def stage_pretrain(cfg: RunConfig, out: Path) -> dict[str, bytes | str]:
    inp = load_text_inputs(cfg)
    texts = list(inp.corpus) + inp.hierarchy.entry_names
    for ex in read_finetune_tsv(cfg.path("finetune")):
        texts += [ex.word, ex.text]
    if cfg.path("availability") is not None:
        texts += read_word_list(cfg.path("availability"))
    vocab = Vocab.build(texts)
    ecfg = encoder_config(cfg, len(vocab))
    p = cfg.pretrain
    settings = PretrainSettings(steps=p.steps, batch_size=p.batch_size, lr=p.lr, beta1=p.beta1,
                                beta2=p.beta2, mask_rate=cfg.pipeline.mask_rate,
                                delimiters=cfg.pipeline.sentence_delimiters)
    params, rows = train(inp.corpus, inp.lexicon, inp.stopwords, vocab, ecfg, init_params(ecfg), settings)
    log.info("pretrain: loss %.4f -> %.4f over %d steps", rows[0][-1], rows[-1][-1], len(rows))
    loss_csv = csv_text(["step", "mlm_loss", "nsp_loss", "span_loss", "total"],
                        [[r[0]] + [fmt(x) for x in r[1:]] for r in rows])
    return {"vocab.txt": "\n".join(vocab.tokens) + "\n",
            "encoder_pretrained.aifx": checkpoint.dumps(params, ecfg),
            "pretrain_loss.csv": loss_csv}


def stage_finetune(cfg: RunConfig, out: Path) -> dict[str, bytes | str]:
    params, ecfg = checkpoint.load(out / "encoder_pretrained.aifx")
    vocab = Vocab.load(out / "vocab.txt")
    lexicon = Lexicon.load(cfg.path("lexicon"))
    examples = read_finetune_tsv(cfg.path("finetune"))
    f = cfg.finetune
    res = fine_tune(examples, params, ecfg, vocab, lexicon, batch_size=f.batch_size, epochs=f.epochs,
                    lr=f.lr, val_fraction=f.val_fraction, rng_seed=cfg.rng_seed)
    hist = csv_text(["epoch", "train_loss", "train_accuracy", "val_accuracy"],
                    [[h.epoch, fmt(h.train_loss), fmt(h.train_accuracy), fmt(h.val_accuracy)]
                     for h in res.history])
    return {"encoder_finetuned.aifx": checkpoint.dumps(res.params, ecfg), "finetune_history.csv": hist}


def stage_expand(cfg: RunConfig, out: Path) -> dict[str, bytes | str]:
    params, ecfg = checkpoint.load(out / "encoder_finetuned.aifx")
    vocab = Vocab.load(out / "vocab.txt")
    inp = load_text_inputs(cfg)
    seeds = inp.hierarchy.entry_names
    candidates = build_candidates(inp.corpus, inp.lexicon, inp.stopwords, seeds)
    vectors = embed_words(sorted(candidates | set(seeds)), params, ecfg, vocab)
    rankings = rank_all(inp.hierarchy, vectors, candidates)
    availability = read_word_list(cfg.path("availability")) if cfg.path("availability") else None
    exclusions = read_word_list(cfg.path("exclusions")) if cfg.path("exclusions") else []
    expanded = expand_hierarchy(inp.hierarchy, rankings, availability, exclusions,
                                top_k=cfg.pipeline.top_k, polarity_overrides=cfg.polarity_overrides)
    n_added = sum(1 for _, _, e in expanded.iter_entries() if e.provenance == EXPANDED)
    log.info("expand: %d candidates, %d seeds, %d expansion entries", len(candidates), len(seeds), n_added)
    return {"candidates.txt": "".join(w + "\n" for w in sorted(candidates)),
            "rankings.csv": rows_csv(ranking_rows(rankings), EXPANSION_COLUMNS),
            "expansion.csv": rows_csv(expansion_rows(expanded), EXPANSION_COLUMNS),
            "hierarchy_expanded.csv": hierarchy_csv(expanded)}


@dataclass
class IndexState:
    hierarchy: IndicatorHierarchy     # expanded hierarchy restricted to kept indicators
    full: IndicatorHierarchy          # expanded hierarchy before screening
    screening: ScreeningReport
    national: SeriesPanel             # raw kept columns
    normalized: SeriesPanel
    regions: dict[str, SeriesPanel]
    investment: dict[str, float]


def build_index_state(cfg: RunConfig, out: Path) -> IndexState:
    full = load_expanded(out)
    panels = load_panels(cfg)
    national = national_panel(panels, cfg.pipeline.national_region)
    regions = {r: p for r, p in panels.items() if r != cfg.pipeline.national_region}
    investment = read_investment(cfg.path("investment"))
    entries = full.entry_names
    present = [e for e in entries if e in national.indicators]
    report = screen_indicators(national.select(present), investment, cfg.pipeline.screen_threshold)
    rows = {r.indicator: r for r in report.rows}
    ordered = [rows.get(e, ScreenRow(e, float("nan"), False, SHORT_HISTORY)) for e in entries]
    screening = ScreeningReport(report.threshold, ordered)
    kept = screening.kept
    if not kept:
        raise NumericError("no indicator survived screening")
    hierarchy = full.restrict(kept)
    raw = national.select(hierarchy.entry_names)
    normalized = normalize(raw, hierarchy.polarities())
    return IndexState(hierarchy, full, screening, raw, normalized, regions, investment)


def stage_build_index(cfg: RunConfig, out: Path) -> dict[str, bytes | str]:
    st = build_index_state(cfg, out)
    weights = entropy_weights(st.normalized)
    daily = composite_index(st.normalized, weights)
    monthly = aggregate(daily, MONTHLY)
    annual = aggregate(daily, ANNUAL)
    dims_daily = {p: dimension_index(st.normalized, st.hierarchy, p, weights) for p in st.hierarchy.primary_names}
    dims_monthly = {p: aggregate(s, MONTHLY) for p, s in dims_daily.items()}
    dims_annual = {p: aggregate(s, ANNUAL) for p, s in dims_daily.items()}
    stats = ColumnStats.of(st.national)
    regions = {r: p.select(list(stats.indicators)) for r, p in st.regions.items()}
    region_annual = region_indices(regions, weights, stats, st.hierarchy.polarities())
    partial = {"monthly": [p for p, f in zip(monthly.periods, monthly.partial) if f],
               "annual": [p for p, f in zip(annual.periods, annual.partial) if f]}
    screening = st.screening.as_dict()
    screening["kept_count"] = len(st.screening.kept)
    screening["partial_periods"] = partial
    return {
        "screening.json": json_text(screening),
        "weights.csv": csv_text(["indicator", "weight"], [[n, fmt(w)] for n, w in weights.as_dict().items()]),
        "index_daily.csv": series_csv({"index": daily}),
        "index_monthly.csv": series_csv({"index": monthly}),
        "index_annual.csv": series_csv({"index": annual}),
        "dimensions_monthly.csv": series_csv(dims_monthly),
        "dimensions_annual.csv": series_csv(dims_annual),
        "regions_annual.csv": series_csv(region_annual),
    }


def merge_january_rows(months: list[str], values: np.ndarray) -> tuple[list[str], np.ndarray]:
    """Replace each February row by the mean of January and February and drop Januaries."""
    keep, rows = [], []
    pos = {m: i for i, m in enumerate(months)}
    for i, m in enumerate(months):
        if m.endswith("-01"):
            continue
        row = values[i]
        jan = m[:5] + "01"
        if m.endswith("-02") and jan in pos:
            row = (values[pos[jan]] + row) / 2.0
        keep.append(m)
        rows.append(row)
    return keep, np.array(rows).reshape(len(rows), values.shape[1])


def _regression_block(hierarchy: IndicatorHierarchy, months, monthly, indicators, investment):
    rows = [i for i, m in enumerate(months) if m in investment]
    y = np.array([investment[months[i]] for i in rows])
    try:
        factors = group_factor_scores(monthly[rows], indicators, hierarchy)
        X = np.column_stack([f.scores for f in factors.values()])
        reg = ols_regress(y, X)
    except AnalyticsError as exc:
        return {"error": str(exc)}, None
    block = {"regression": reg.as_dict(),
             "factors": {p: dict(members=f.members, loadings=[float(x) for x in f.loadings],
                                 explained_variance_ratio=f.explained_variance_ratio)
                         for p, f in factors.items()}}
    scores = {p: f.scores for p, f in factors.items()}
    return block, ([months[i] for i in rows], scores)


def stage_analyze(cfg: RunConfig, out: Path) -> dict[str, bytes | str]:
    st = build_index_state(cfg, out)
    months, monthly = monthly_means(st.normalized)
    if cfg.pipeline.jan_adjust:
        months, monthly = merge_january_rows(months, monthly)
    indicators = st.normalized.indicators
    before_h = st.full.seeds_only().restrict(st.screening.kept)
    after_h = st.hierarchy
    before, before_scores = _regression_block(before_h, months, monthly, indicators, st.investment)
    after, after_scores = _regression_block(after_h, months, monthly, indicators, st.investment)

    index_monthly = read_series_csv(out / "index_monthly.csv")["index"]
    lag = lag_correlation(index_monthly, st.investment, cfg.pipeline.max_lag, cfg.pipeline.jan_adjust)
    analysis = {
        "screening": json.loads((out / "screening.json").read_text(encoding="utf-8")),
        "regression": {"before_expansion": before, "after_expansion": after},
        "lag_profile": lag.as_dict(),
        "indicator_counts": {"seeds": len(st.full.seeds()), "expanded_total": len(st.full.entry_names),
                             "kept": len(st.screening.kept)},
    }
    # factor scores side by side, one column per (variant, primary)
    columns, table_months = {}, None
    for label, sc in (("before", before_scores), ("after", after_scores)):
        if sc is None:
            continue
        table_months = sc[0]
        for p, s in sc[1].items():
            columns[f"{label}:{p}"] = s
    fs_rows = [[m] + [fmt(columns[c][i]) for c in columns] for i, m in enumerate(table_months or [])]
    return {
        "analysis.json": json_text(analysis),
        "factor_scores.csv": csv_text(["period"] + list(columns), fs_rows),
        "lag_profile.csv": csv_text(["lag", "r", "n_pairs"],
                                    [[l, fmt(r), n] for l, r, n in zip(lag.lags, lag.r, lag.n_pairs)]),
    }


def stage_report(cfg: RunConfig, out: Path) -> dict[str, bytes | str]:
    a = json.loads((out / "analysis.json").read_text(encoding="utf-8"))
    annual = read_series_csv(out / "index_annual.csv")["index"]
    dims = read_series_csv(out / "dimensions_annual.csv")
    regions = read_series_csv(out / "regions_annual.csv")
    partial = set(a["screening"]["partial_periods"]["annual"])
    lines = ["# Investment activity index report", ""]
    c = a["indicator_counts"]
    lines += [f"Indicators: {c['seeds']} seeds, {c['expanded_total']} after expansion, "
              f"{c['kept']} kept after screening (|r| >= {a['screening']['threshold']}).", ""]
    lines += ["## Regression on factor scores", "",
              "| | R^2 | adjusted R^2 | F | p |", "|---|---|---|---|---|"]
    for label, key in (("Before expansion", "before_expansion"), ("After expansion", "after_expansion")):
        block = a["regression"][key]
        if "error" in block:
            lines.append(f"| {label} | {block['error']} | | | |")
            continue
        r = block["regression"]
        F = "inf" if r["F"] is None else f"{r['F']:.3f}"
        lines.append(f"| {label} | {r['r2']:.3f} | {r['adj_r2']:.3f} | {F} | {r['p_value']:.3f} |")
    lag = a["lag_profile"]
    lines += ["", "## Lag correlation with fixed-asset investment", "",
              "| " + " | ".join(f"{l} month" for l in lag["lags"]) + " |",
              "|" + "---|" * len(lag["lags"]),
              "| " + " | ".join(f"{r:.4f}" for r in lag["r"]) + " |", "",
              f"Highest correlation at lag {lag['argmax_lag']}.", "", "## Annual index", "",
              "| year | index | " + " | ".join(dims) + " |", "|---|---|" + "---|" * len(dims)]
    for year, v in annual.items():
        mark = " (partial)" if year in partial else ""
        lines.append(f"| {year}{mark} | {v:.4f} | " + " | ".join(f"{dims[d].get(year, float('nan')):.4f}" for d in dims) + " |")
    if regions:
        years = sorted({y for s in regions.values() for y in s})
        lines += ["", "## Regions (annual)", "", "| region | " + " | ".join(years) + " |",
                  "|---|" + "---|" * len(years)]
        for name, s in regions.items():
            lines.append(f"| {name} | " + " | ".join(f"{s[y]:.4f}" if y in s else "" for y in years) + " |")
    return {"report.md": "\n".join(lines) + "\n"}


STAGE_FUNCS: dict[str, Callable[[RunConfig, Path], dict]] = {
    "pretrain": stage_pretrain, "finetune": stage_finetune, "expand": stage_expand,
    "build-index": stage_build_index, "analyze": stage_analyze, "report": stage_report,
}


def stage_inputs(cfg: RunConfig, stage: str) -> list[Path]:
    names = {"pretrain": ["corpus", "lexicon", "stopwords", "hierarchy", "finetune", "availability"],
             "finetune": ["lexicon", "finetune"],
             "expand": ["corpus", "lexicon", "stopwords", "hierarchy", "availability", "exclusions"],
             "build-index": ["investment"], "analyze": ["investment"], "report": []}[stage]
    paths = [cfg.path(n) for n in names if cfg.path(n) is not None]
    if stage in ("build-index", "analyze"):
        paths += cfg.panel_paths()
    return paths


# --------------------------------------------------------------------------
# Driver
# --------------------------------------------------------------------------

def _load_manifest(out: Path) -> dict:
    path = out / MANIFEST
    if path.exists():
        return json.loads(path.read_text(encoding="utf-8"))
    return {}


def check_dependency(stage: str, out: Path) -> None:
    dep = DEPENDS.get(stage)
    if dep is None:
        return
    missing = [n for n in OUTPUTS[dep] if not (out / n).exists()]
    if missing:
        raise DependencyError(f"stage {stage!r} needs the outputs of stage {dep!r}; missing {missing}")


def run_single(stage: str, cfg: RunConfig) -> dict:
    out = cfg.output_dir
    check_dependency(stage, out)
    t0 = time.perf_counter()
    inputs = {str(p): sha256_file(p) for p in stage_inputs(cfg, stage)}
    dep = DEPENDS.get(stage)
    if dep:
        inputs.update({n: sha256_file(out / n) for n in OUTPUTS[dep]})
    files = STAGE_FUNCS[stage](cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    write_outputs(out, files)
    record = {"inputs": inputs, "outputs": {n: sha256_file(out / n) for n in OUTPUTS[stage]},
              "seconds": round(time.perf_counter() - t0, 3)}
    manifest = _load_manifest(out)
    manifest.update({"tool_version": __version__, "config_hash": cfg.digest(), "seed": cfg.rng_seed})
    manifest.setdefault("stages", {})[stage] = record
    checkpoint.atomic_write_bytes(out / MANIFEST, json_text(manifest).encode("utf-8"))
    log.info("stage %s done in %.1fs", stage, record["seconds"])
    return record


def run_stage(stage: str, cfg: RunConfig) -> int:
    """Run one stage (or ``all``) and return the process exit code."""
    from .analytics import RankDeficiencyError
    from .checkpoint import CheckpointError
    from .config import ConfigError
    from .corpus import CorpusError
    from .encoder import EncoderError
    from .expansion import ExpansionError
    from .hierarchy import HierarchyError
    from .index import IndexEngineError
    from .panel import PanelError
    from .training import TrainingError

    if stage != "all" and stage not in STAGES:
        log.error("unknown stage %r", stage)
        return 1
    diagnostics = validate_inputs(cfg)
    if diagnostics:
        for d in diagnostics:
            log.error("%s", d)
        return EXIT_SCHEMA
    stages = STAGES if stage == "all" else (stage,)
    try:
        for s in stages:
            run_single(s, cfg)
    except StageError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except (TrainingError, RankDeficiencyError, AnalyticsError, EncoderError, FloatingPointError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (ConfigError, CorpusError, HierarchyError, PanelError, CheckpointError, ExpansionError,
            IndexEngineError) as exc:
        log.error("schema error: %s", exc)
        return EXIT_SCHEMA
    return EXIT_OK
