"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line; the lines are also repeated in
the pytest terminal summary.
"""
from __future__ import annotations

import json
import math
import shutil
import subprocess
import sys
import time

import numpy as np
import pytest

from aif import checkpoint, synthetic
from aif.analytics import f_pvalue, fit_statistics, january_adjust, lag_correlation
from aif.config import load_config
from aif.corpus import Lexicon, SentencePairSampler, Vocab, read_corpus
from aif.encoder import RelativePositionTable, attention_layer, init_params, pretrain_loss
from aif.expansion import expand_hierarchy, rank_all
from aif.hierarchy import EXPANDED, hierarchy_from_rows
from aif.index import entropy_weights, normalize_column
from aif.pipeline import OUTPUTS, STAGES, encoder_config
from aif.training import PretrainSettings, fine_tune, train

from _helpers import (attention_oracle, entropy_oracle, finite_difference, handmade_pretrain_batch,
                      rpe_direct, tensor_rel_error)
from conftest import ACCEPTANCE_LINES, FIXTURE, make_tiny


def report(number: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# 1 ---------------------------------------------------------------------------

def test_c01_relative_position_closed_form():
    t0 = time.perf_counter()
    worst, exact_zero = 0.0, True
    for d_z in (2, 8, 64):
        table = RelativePositionTable(129, d_z)
        for delta in range(-128, 129):
            worst = max(worst, float(np.max(np.abs(table.lookup(delta) - rpe_direct(delta, d_z)))))
        zero = table.lookup(0)
        exact_zero &= bool(np.all(zero[0::2] == 0.0) and np.all(zero[1::2] == 1.0))
    elapsed = time.perf_counter() - t0
    report(1, worst <= 1e-12 and exact_zero and elapsed < 1.0,
           f"RPE max abs error {worst:.2e} (<= 1e-12), alpha[0] exact={exact_zero}, {elapsed:.2f}s (< 1s)")


# 2 ---------------------------------------------------------------------------

def test_c02_attention_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 9))
        H = int(rng.choice([1, 2, 4]))
        d = H * int(rng.choice([1, 2, 4])) * 2
        d = min(d, 16)
        X = rng.normal(size=(n, d))
        Ws = [rng.normal(size=(d, d)) / math.sqrt(d) for _ in range(4)]
        got = attention_layer(X, *Ws, H, None)
        worst = max(worst, float(np.max(np.abs(got - attention_oracle(X, *Ws, H)))))
    elapsed = time.perf_counter() - t0
    report(2, worst <= 1e-9 and elapsed < 5.0,
           f"attention vs brute-force oracle max error {worst:.2e} (<= 1e-9) on 100 cases, {elapsed:.2f}s (< 5s)")


# 3 ---------------------------------------------------------------------------

def test_c03_gradient_check():
    t0 = time.perf_counter()
    vocab = Vocab.build("铁路公机场房地产价住宅数据中心芯片和了的")
    cfg, params = make_tiny(len(vocab), layers=1, heads=2, d_model=8, d_ff=16, std=0.5)
    rng = np.random.default_rng(3)
    params = {k: v + rng.normal(0, 0.5, v.shape) for k, v in params.items()}
    batch = handmade_pretrain_batch(vocab)
    analytic = pretrain_loss(batch, params, cfg).grads
    numeric = finite_difference(lambda p: pretrain_loss(batch, p, cfg, with_grads=False).total, params, 1e-4)
    errors = {name: tensor_rel_error(analytic[name], numeric[name]) for name in params}
    worst_name = max(errors, key=errors.get)
    elapsed = time.perf_counter() - t0
    report(3, errors[worst_name] < 1e-4 and elapsed < 60.0,
           f"{len(errors)} tensors, worst relative error {errors[worst_name]:.2e} ({worst_name}) (< 1e-4), "
           f"{elapsed:.1f}s (< 60s)")


# 4 and 5 share one pretraining run --------------------------------------------

@pytest.fixture(scope="module")
def pretrain_setup():
    cfg = load_config(FIXTURE / "config.json")
    corpus = read_corpus(cfg.path("corpus"))
    lexicon = Lexicon.load(cfg.path("lexicon"))
    vocab = Vocab.build(corpus + [e.word + e.text for e in synthetic.make_finetune_examples(800, seed=11)])
    ecfg = encoder_config(cfg, len(vocab))
    p = cfg.pretrain
    settings = PretrainSettings(steps=p.steps, batch_size=p.batch_size, lr=p.lr)
    return cfg, corpus, lexicon, vocab, ecfg, settings


@pytest.fixture(scope="module")
def pretrained(pretrain_setup):
    cfg, corpus, lexicon, vocab, ecfg, settings = pretrain_setup
    runs = []
    for _ in range(2):
        t0 = time.perf_counter()
        params, rows = train(corpus, lexicon, [], vocab, ecfg, init_params(ecfg), settings)
        runs.append((params, rows, time.perf_counter() - t0))
    return runs


def test_c04_toy_pretraining(pretrain_setup, pretrained):
    cfg, corpus, lexicon, vocab, ecfg, settings = pretrain_setup
    n_sentences = sum(len(d) for d in SentencePairSampler(corpus, lexicon).docs)
    eval_batch = SentencePairSampler(corpus, lexicon).batch(64, 987654, vocab=vocab, max_len=ecfg.max_seq_len)
    (p1, rows1, t1), (p2, rows2, t2) = pretrained
    initial = pretrain_loss(eval_batch, init_params(ecfg), ecfg, with_grads=False).total
    final = pretrain_loss(eval_batch, p1, ecfg, with_grads=False).total
    same = checkpoint.dumps(p1, ecfg) == checkpoint.dumps(p2, ecfg)
    ratio = final / initial
    ok = n_sentences == 200 and settings.steps == 200 and ratio <= 0.5 and same and max(t1, t2) < 120
    report(4, ok, f"{n_sentences} sentences, {settings.steps} steps: loss {initial:.3f} -> {final:.3f} "
                  f"(ratio {ratio:.3f} <= 0.5), byte-identical checkpoints={same}, "
                  f"{max(t1, t2):.1f}s per run (< 120s)")


def test_c05_fine_tuning(pretrain_setup, pretrained):
    cfg, corpus, lexicon, vocab, ecfg, settings = pretrain_setup
    params = pretrained[0][0]
    examples = synthetic.make_finetune_examples(800, seed=11)
    labels = [e.tag for e in examples]
    t0 = time.perf_counter()
    res = fine_tune(examples, params, ecfg, vocab, lexicon, batch_size=16, epochs=5, lr=1e-3, rng_seed=0)
    elapsed = time.perf_counter() - t0
    best = max(h.val_accuracy for h in res.history)
    ok = sum(labels) * 2 == len(labels) and len(res.history) <= 10 and best >= 0.90 and elapsed < 120
    report(5, ok, f"batch 16, {len(res.history)} epochs: best validation accuracy {best:.3f} (>= 0.90), "
                  f"{elapsed:.1f}s (< 120s)")


# 6 ---------------------------------------------------------------------------

def _planted_fixture(rng, dim=32):
    rows = [dict(primary="P1", secondary="s1", entry="铁路", polarity="positive"),
            dict(primary="P1", secondary="s2", entry="数据中心", polarity="positive"),
            dict(primary="P2", secondary="s3", entry="房地产", polarity="two_way")]
    h = hierarchy_from_rows(rows)
    basis = np.linalg.qr(rng.normal(size=(dim, dim)))[0]
    vectors, planted = {}, {}
    for i, (seed, syn) in enumerate([("铁路", "公路"), ("数据中心", "芯片"), ("房地产", "房价")]):
        vectors[seed] = 3.0 * basis[:, i]
        vectors[syn] = basis[:, i] + 0.05 * basis[:, 10 + i]            # cosine ~ 0.9988
        planted[f"s{i + 1}"] = syn
    # distractors lean weakly toward one seed: cosine ~ 0.29
    for j, word in enumerate(["机场", "桥梁", "住宅", "物业", "算力", "云计算", "港口", "楼盘"]):
        vectors[word] = 0.3 * basis[:, j % 3] + basis[:, 3 + j % 7] + 0.2 * basis[:, 16 + j]
    return h, vectors, planted


def _cos(u, v):
    return float(u @ v / np.linalg.norm(u) / np.linalg.norm(v))


def test_c06_planted_synonym_expansion():
    h, vectors, planted = _planted_fixture(np.random.default_rng(6))
    seeds = h.entry_names
    cands = [w for w in vectors if w not in seeds]
    syn_ok = all(_cos(vectors[w], vectors[s]) >= 0.99 for s, w in zip(seeds, planted.values()))
    other_max = max(_cos(vectors[w], vectors[s]) for w in cands if w not in planted.values() for s in seeds)
    out = expand_hierarchy(h, rank_all(h, vectors, cands), availability=None, top_k=1)
    chosen = {s.name: e.name for _, s, e in out.iter_entries() if e.provenance == EXPANDED}
    # a tie: two candidates share the planted vector; the lexicographically smaller word wins, every run
    tie_vectors = {w: v for w, v in vectors.items() if w != "公路"}
    tie_vectors["乙乙"] = vectors["公路"].copy()
    tie_vectors["甲甲"] = vectors["公路"].copy()
    tie_cands = [w for w in tie_vectors if w not in seeds]
    picks = set()
    for _ in range(3):
        res = expand_hierarchy(h, rank_all(h, tie_vectors, tie_cands), availability=None, top_k=1)
        picks.add(tuple(e.name for _, s, e in res.iter_entries() if s.name == "s1" and e.provenance == EXPANDED))
    tie_ok = picks == {(min("乙乙", "甲甲"),)}
    ok = syn_ok and other_max <= 0.5 and chosen == planted and tie_ok
    report(6, ok, f"planted words selected={chosen == planted} (planted cos >= 0.99: {syn_ok}, "
                  f"others max cos {other_max:.3f} <= 0.5), tie resolved to {sorted(picks)} over 3 runs")


# 7 ---------------------------------------------------------------------------

def test_c07_entropy_weights():
    rng = np.random.default_rng(7)
    worst, sum_err = 0.0, 0.0
    for _ in range(50):
        n, m = int(rng.integers(2, 21)), int(rng.integers(1, 7))
        X = rng.random((n, m))
        w = entropy_weights(X)
        worst = max(worst, float(np.max(np.abs(w - entropy_oracle(X)))))
        sum_err = max(sum_err, abs(float(w.sum()) - 1.0))
    base = rng.random((15, 3))
    dup = entropy_weights(np.column_stack([base, base[:, 0]]))
    dup_gap = abs(dup[0] - dup[3])
    const = entropy_weights(np.column_stack([base, np.full(15, 0.4), np.zeros(15)]))
    ok = worst <= 1e-10 and sum_err <= 1e-12 and dup_gap <= 1e-12 and const[3] == 0 and const[4] == 0
    report(7, ok, f"oracle max error {worst:.2e} (<= 1e-10) on 50 panels, |sum-1| {sum_err:.1e}, "
                  f"duplicate gap {dup_gap:.1e} (<= 1e-12), constant weights {const[3]}, {const[4]}")


# 8 ---------------------------------------------------------------------------

def test_c08_normalization():
    from aif.index import lower_median
    rng = np.random.default_rng(8)
    in_range, median_hit = True, True
    for _ in range(50):
        X = rng.normal(size=(int(rng.integers(2, 30)), 1)) * 10
        x = X[:, 0]
        lo, hi, med = x.min(), x.max(), lower_median(X)[0]
        for pol in ("positive", "negative", "two_way"):
            y = normalize_column(x, pol, lo, hi, med)
            in_range &= bool(np.all((y >= 0) & (y <= 1)))
        y = normalize_column(x, "two_way", lo, hi, med)
        median_hit &= bool(y[np.argmax(x == med)] == 1.0)
    pos = normalize_column(np.array([0.0, 5.0, 10.0]), "positive", 0.0, 10.0, 5.0).tolist()
    two = normalize_column(np.array([0.0, 4.0, 10.0]), "two_way", 0.0, 10.0, 4.0).tolist()
    ok = in_range and median_hit and pos == [0.0, 0.5, 1.0] and two == [0.0, 1.0, 0.0]
    report(8, ok, f"outputs in [0,1]={in_range}, two_way = 1 at median={median_hit}, "
                  f"[0,5,10] -> {pos}, [0,4,10] two_way -> {two}")


# 9 ---------------------------------------------------------------------------

def test_c09_regression_cross_check():
    t0 = time.perf_counter()
    adj_a, F_a, p_a = fit_statistics(0.204, 54, 5)
    adj_b, F_b, p_b = fit_statistics(0.148, 54, 5)
    elapsed = time.perf_counter() - t0
    ok = (abs(adj_a - 0.121) <= 0.001 and abs(F_a - 2.463) <= 0.02 and abs(p_a - 0.046) <= 0.005
          and abs(adj_b - 0.059) <= 0.001 and abs(F_b - 1.662) <= 0.02 and abs(p_b - 0.162) <= 0.01
          and abs(f_pvalue(2.463, 5, 54) - 0.046) <= 0.005 and elapsed < 1.0)
    report(9, ok, f"R2 0.204 -> adj {adj_a:.4f}, F {F_a:.4f}, p {p_a:.4f}; "
                  f"R2 0.148 -> adj {adj_b:.4f}, F {F_b:.4f}, p {p_b:.4f}; {elapsed * 1000:.1f}ms")


# 10 --------------------------------------------------------------------------

def _months(start_year, start_month, n):
    out = []
    y, m = start_year, start_month
    for _ in range(n):
        out.append(f"{y:04d}-{m:02d}")
        m += 1
        if m == 13:
            y, m = y + 1, 1
    return out


def test_c10_lag_analysis():
    rng = np.random.default_rng(10)
    months = _months(2015, 1, 72)
    walk = np.cumsum(rng.normal(size=72)) + 50
    index = dict(zip(months, walk))
    investment = {months[t]: float(walk[t - 3]) for t in range(3, 72)}
    prof = lag_correlation(index, investment, max_lag=5, jan_adjust=False)
    r3 = prof.r[prof.lags.index(3)]
    # hand-built 14-month fixture: Jan 2021 .. Feb 2022
    hand_months = _months(2021, 1, 14)
    hand_index = {m: float(i + 1) for i, m in enumerate(hand_months)}       # Jan21=1, Feb21=2, Jan22=13, Feb22=14
    hand_inv = {m: 100.0 + i for i, m in enumerate(hand_months)}
    adj_index, adj_inv = january_adjust(hand_index, hand_inv)
    expected = {m: v for m, v in hand_index.items() if not m.endswith("-01")}
    expected["2021-02"], expected["2022-02"] = 1.5, 13.5
    merged_ok = adj_index == expected and not any(m.endswith("-01") for m in adj_inv) and len(adj_index) == 12
    ok = prof.argmax_lag == 3 and r3 > 0.999 and merged_ok
    report(10, ok, f"planted lag 3 -> argmax {prof.argmax_lag}, r = {r3:.6f} (> 0.999); "
                   f"January merge on 14-month fixture={merged_ok}")


# 11 --------------------------------------------------------------------------

def test_c11_end_to_end(tmp_path):
    work = tmp_path / "mini"
    shutil.copytree(FIXTURE, work, ignore=shutil.ignore_patterns("out"))
    timings, manifests, codes = [], [], []
    for run in ("a", "b"):
        t0 = time.perf_counter()
        res = subprocess.run([sys.executable, "-m", "aif.cli", "all", "--config", str(work / "config.json"),
                              "--seed", "0", "--out", str(tmp_path / run)],
                             capture_output=True, text=True, env={"AIF_LOG": "WARNING", "PATH": ""})
        timings.append(time.perf_counter() - t0)
        codes.append(res.returncode)
        manifest = tmp_path / run / "manifest.json"
        manifests.append(json.loads(manifest.read_text(encoding="utf-8")) if manifest.exists() else {})
    outputs = [{s: rec["outputs"] for s, rec in m.get("stages", {}).items()} for m in manifests]
    complete = all(set(o) == set(STAGES) and all(set(o[s]) == set(OUTPUTS[s]) for s in STAGES) for o in outputs)
    golden = json.loads((FIXTURE / "golden_digests.json").read_text(encoding="utf-8"))
    same = complete and outputs[0] == outputs[1] == golden
    ok = codes == [0, 0] and complete and same and max(timings) < 60.0
    report(11, ok, f"aif all exit codes {codes}, {len(STAGES)} stages complete={complete}, "
                   f"both runs reproduce the golden digests={same}, {max(timings):.1f}s per run (< 60s)")
