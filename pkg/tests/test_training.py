import numpy as np
import pytest

from aif import synthetic
from aif.corpus import FineTuneExample, Lexicon, Vocab
from aif.training import (Adam, PretrainSettings, TrainingError, balance_labels, embed_word, fine_tune,
                          split_validation, step_seed, train)

from conftest import make_tiny


def test_adam_first_step_moves_by_lr():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    g = {"w": np.array([0.5, -4.0, 0.0])}
    Adam(lr=0.1).step(p, g)
    np.testing.assert_allclose(p["w"], [0.9, -1.9, 3.0], atol=1e-6)


def test_step_seed_is_stable_and_distinct():
    assert step_seed(0, 1) == step_seed(0, 1)
    assert len({step_seed(0, s) for s in range(50)}) == 50


@pytest.fixture(scope="module")
def small_world():
    corpus = synthetic.make_corpus(40, 4, seed=1)
    lex = Lexicon.from_words(synthetic.lexicon_words())
    vocab = Vocab.build(corpus)
    return corpus, lex, vocab


def test_train_is_deterministic_and_reduces_loss(small_world):
    corpus, lex, vocab = small_world
    cfg, params = make_tiny(len(vocab), d_model=16, d_ff=32, max_seq_len=64)
    settings = PretrainSettings(steps=30, batch_size=8, lr=5e-3)
    p1, rows1 = train(corpus, lex, [], vocab, cfg, params, settings)
    p2, rows2 = train(corpus, lex, [], vocab, cfg, params, settings)
    assert rows1 == rows2
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)
    assert not np.array_equal(p1["token_embed"], params["token_embed"])  # input untouched, copy trained
    first, last = np.mean([r[-1] for r in rows1[:5]]), np.mean([r[-1] for r in rows1[-5:]])
    assert last < first


def test_train_rejects_non_finite(small_world):
    corpus, lex, vocab = small_world
    cfg, params = make_tiny(len(vocab), max_seq_len=64)
    params["mlm_head"][:] = np.nan
    with pytest.raises(TrainingError):
        train(corpus, lex, [], vocab, cfg, params, PretrainSettings(steps=1, batch_size=2))


def test_balance_and_split_keep_ratio():
    rng = np.random.default_rng(0)
    exs = [FineTuneExample(int(i % 3 == 0), "铁路", "铁路") for i in range(90)]
    bal = balance_labels(exs, rng)
    assert sum(e.tag for e in bal) * 2 == len(bal) == 60
    tr, va = split_validation(bal, 0.2, rng)
    assert sum(e.tag for e in va) * 2 == len(va) == 12
    with pytest.raises(TrainingError):
        balance_labels([FineTuneExample(1, "a", "a")], rng)


def test_fine_tune_zero_epochs_returns_input(small_world):
    _, lex, vocab = small_world
    cfg, params = make_tiny(len(vocab), max_seq_len=64)
    exs = synthetic.make_finetune_examples(20, seed=0)
    res = fine_tune(exs, params, cfg, vocab, lex, epochs=0)
    assert res.history == [] and res.best_epoch is None
    assert all(np.array_equal(res.params[k], params[k]) for k in params)


def test_fine_tune_history_and_best_epoch(small_world):
    _, lex, vocab = small_world
    cfg, params = make_tiny(len(vocab), max_seq_len=64, d_model=16, d_ff=32)
    exs = synthetic.make_finetune_examples(80, seed=2)
    res = fine_tune(exs, params, cfg, vocab, lex, epochs=2, lr=1e-3)
    assert [h.epoch for h in res.history] == [1, 2]
    best = max(res.history, key=lambda h: h.val_accuracy)
    assert res.best_epoch == best.epoch


def test_embed_word_is_cls_vector(small_world):
    _, _, vocab = small_world
    cfg, params = make_tiny(len(vocab), max_seq_len=64)
    v = embed_word("铁路", params, cfg, vocab)
    assert v.shape == (cfg.d_model,)
    assert np.array_equal(v, embed_word("铁路", params, cfg, vocab))
