"""Pretraining, fine-tuning and word-vector extraction for the toy encoder."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import (SENTENCE_DELIMITERS, FineTuneExample, Lexicon, SentencePairSampler, Vocab,
                     finetune_sequence, word_sequence)
from .encoder import (Batch, EncoderConfig, EncoderError, classification_loss, encoder_forward,
                      pretrain_loss)

log = logging.getLogger(__name__)

FINETUNE_BATCH_SIZE = 16
FINETUNE_EPOCHS = 10


class TrainingError(RuntimeError):
    """Non-finite loss or unusable training data."""


@dataclass
class Adam:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in params:  # fixed iteration order keeps updates bit-reproducible
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def step_seed(rng_seed: int, step: int) -> int:
    return int(np.random.SeedSequence([rng_seed, step]).generate_state(1)[0])


@dataclass
class PretrainSettings:
    steps: int = 200
    batch_size: int = 8
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    mask_rate: float = 0.15
    delimiters: str = SENTENCE_DELIMITERS


def train(corpus: Sequence[str], lexicon: Lexicon, stopwords: Iterable[str], vocab: Vocab,
          config: EncoderConfig, params: dict[str, np.ndarray], settings: PretrainSettings):
    """Run ``settings.steps`` Adam updates on freshly sampled pretraining batches.

    Returns (params, loss_log) where loss_log rows are
    (step, mlm_loss, nsp_loss, span_loss, total). ``params`` is copied, not
    mutated.
    """
    if settings.steps < 1:
        raise TrainingError("steps must be >= 1")
    params = {k: v.copy() for k, v in params.items()}
    opt = Adam(settings.lr, settings.beta1, settings.beta2)
    sampler = SentencePairSampler(corpus, lexicon, settings.delimiters)
    rows = []
    for step in range(settings.steps):
        batch = sampler.batch(settings.batch_size, step_seed(config.rng_seed, step), vocab=vocab,
                              max_len=config.max_seq_len, mask_rate=settings.mask_rate)
        res = pretrain_loss(batch, params, config)
        if not np.isfinite(res.total):
            raise TrainingError(f"non-finite loss at step {step}: {res.parts}")
        rows.append((step, res.parts["mlm"], res.parts["nsp"], res.parts["span"], res.total))
        if step % 50 == 0:
            log.debug("pretrain step %d loss %.4f", step, res.total)
        opt.step(params, res.grads)
    return params, rows


# --------------------------------------------------------------------------
# Fine-tuning
# --------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_accuracy: float


@dataclass
class FineTuneResult:
    params: dict[str, np.ndarray]
    history: list[EpochRecord]
    best_epoch: int | None


def balance_labels(examples: Sequence[FineTuneExample], rng: np.random.Generator) -> list[FineTuneExample]:
    """Downsample the majority label to a 1:1 ratio, preserving input order."""
    pos = [i for i, ex in enumerate(examples) if ex.tag == 1]
    neg = [i for i, ex in enumerate(examples) if ex.tag == 0]
    if not pos or not neg:
        raise TrainingError("fine-tuning data must contain both labels")
    k = min(len(pos), len(neg))
    keep = set(rng.choice(pos, k, replace=False).tolist()) | set(rng.choice(neg, k, replace=False).tolist())
    return [ex for i, ex in enumerate(examples) if i in keep]


def split_validation(examples: Sequence[FineTuneExample], fraction: float,
                     rng: np.random.Generator) -> tuple[list, list]:
    """Stratified split so both parts keep the 1:1 label ratio."""
    train, val = [], []
    for tag in (0, 1):
        idx = [i for i, ex in enumerate(examples) if ex.tag == tag]
        idx = [idx[j] for j in rng.permutation(len(idx))]
        n_val = int(round(fraction * len(idx)))
        val.extend(idx[:n_val])
        train.extend(idx[n_val:])
    return [examples[i] for i in sorted(train)], [examples[i] for i in sorted(val)]


def _encode_examples(examples, vocab, lexicon, config):
    seqs = [finetune_sequence(ex.word, ex.text, vocab, lexicon, config.max_seq_len) for ex in examples]
    labels = np.array([ex.tag for ex in examples], dtype=np.int64)
    return seqs, labels


def _as_batch(seqs):
    return Batch.from_sequences([s.tokens for s in seqs], [s.segment_ids for s in seqs])


def predict(seqs, params, config, batch_size: int = 64) -> np.ndarray:
    """Class-1 probabilities for encoded sequences."""
    out = []
    dummy = None
    for start in range(0, len(seqs), batch_size):
        chunk = seqs[start:start + batch_size]
        dummy = np.zeros(len(chunk), dtype=np.int64)
        _, probs, _ = classification_loss(_as_batch(chunk), dummy, params, config, with_grads=False)
        out.append(probs[:, 1])
    return np.concatenate(out) if out else np.zeros(0)


def accuracy(seqs, labels, params, config) -> float:
    if not len(seqs):
        return float("nan")
    return float(np.mean((predict(seqs, params, config) >= 0.5).astype(int) == labels))


def fine_tune(examples: Sequence[FineTuneExample], params: dict[str, np.ndarray], config: EncoderConfig,
              vocab: Vocab, lexicon: Lexicon, *, batch_size: int = FINETUNE_BATCH_SIZE,
              epochs: int = FINETUNE_EPOCHS, lr: float = 5e-4,
              validation: Sequence[FineTuneExample] | None = None, val_fraction: float = 0.2,
              rng_seed: int = 0) -> FineTuneResult:
    """Train ``cls_head`` (and the encoder) to decide whether ``word`` is a
    keyword of ``text``. Returns the parameters of the best validation epoch.

    With ``validation=None`` a stratified ``val_fraction`` holdout is taken
    from the balanced examples.
    """
    rng = np.random.default_rng(rng_seed)
    data = balance_labels(examples, rng)
    if validation is None:
        train_set, val_set = split_validation(data, val_fraction, rng)
    else:
        train_set, val_set = data, balance_labels(validation, rng)
    start = {k: v.copy() for k, v in params.items()}
    if epochs <= 0:
        return FineTuneResult(start, [], None)
    train_seqs, train_labels = _encode_examples(train_set, vocab, lexicon, config)
    val_seqs, val_labels = _encode_examples(val_set, vocab, lexicon, config)

    current = {k: v.copy() for k, v in params.items()}
    opt = Adam(lr)
    best, best_acc, best_epoch = start, -1.0, None
    history = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_seqs))
        losses = []
        for s in range(0, len(order), batch_size):
            idx = order[s:s + batch_size]
            loss, _, grads = classification_loss(_as_batch([train_seqs[i] for i in idx]),
                                                 train_labels[idx], current, config)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite fine-tuning loss in epoch {epoch}")
            losses.append(loss)
            opt.step(current, grads)
        train_acc = accuracy(train_seqs, train_labels, current, config)
        val_acc = accuracy(val_seqs, val_labels, current, config)
        history.append(EpochRecord(epoch, float(np.mean(losses)), train_acc, val_acc))
        log.info("fine-tune epoch %d: loss %.4f train acc %.3f val acc %.3f",
                 epoch, np.mean(losses), train_acc, val_acc)
        score = val_acc if val_seqs else train_acc
        if score > best_acc:
            best_acc, best_epoch = score, epoch
            best = {k: v.copy() for k, v in current.items()}
    return FineTuneResult(best, history, best_epoch)


# --------------------------------------------------------------------------
# Word vectors
# --------------------------------------------------------------------------

def embed_word(word: str, params: dict[str, np.ndarray], config: EncoderConfig, vocab: Vocab) -> np.ndarray:
    """[CLS] vector of ``[CLS] word [SEP]``."""
    if not word:
        raise EncoderError("cannot embed an empty word")
    _, cls, _ = encoder_forward(word_sequence(word, vocab), params, config)
    return cls


def embed_words(words: Iterable[str], params, config, vocab) -> dict[str, np.ndarray]:
    return {w: embed_word(w, params, config, vocab) for w in words}
