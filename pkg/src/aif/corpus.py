"""Corpus handling: segmentation, candidate extraction, and pretraining examples.

Tokens are single characters (the usual granularity for Chinese encoders);
words come from a forward maximum-matching segmenter and are kept as
``word_spans`` so that masking can act on whole words.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)

SENTENCE_DELIMITERS = "。！？\n"

REPLACE_MASK, REPLACE_RANDOM, REPLACE_KEEP = "MASK", "RANDOM", "KEEP"
IS_NEXT, NOT_NEXT = 1, 0


class CorpusError(ValueError):
    pass


# --------------------------------------------------------------------------
# Word lists
# --------------------------------------------------------------------------

def read_word_list(path: str | Path) -> list[str]:
    """One word per line, ``#`` starts a comment line, blank lines ignored."""
    words = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                words.append(line)
    return words


def read_corpus(path: str | Path) -> list[str]:
    """One document per line; blank lines are skipped."""
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]


@dataclass(frozen=True)
class Lexicon:
    words: frozenset[str]
    max_word_len: int

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Lexicon":
        ws = frozenset(w for w in words if w)
        return cls(ws, max((len(w) for w in ws), default=0))

    @classmethod
    def load(cls, path: str | Path) -> "Lexicon":
        return cls.from_words(read_word_list(path))

    def __contains__(self, word: str) -> bool:
        return word in self.words


def segment(text: str, lexicon: Lexicon) -> list[str]:
    """Forward maximum matching; characters not covered by the lexicon become
    single-character words. ``"".join(segment(t, lex)) == t`` always holds."""
    words = []
    i, n = 0, len(text)
    while i < n:
        for size in range(min(lexicon.max_word_len, n - i), 1, -1):
            if text[i:i + size] in lexicon.words:
                break
        else:
            size = 1
        words.append(text[i:i + size])
        i += size
    return words


def is_content_word(word: str) -> bool:
    """Whitespace and punctuation runs are not words for modelling purposes."""
    return any(ch.isalnum() for ch in word)


def split_sentences(document: str, delimiters: str = SENTENCE_DELIMITERS) -> list[str]:
    if not delimiters:
        return [document.strip()] if document.strip() else []
    # keep the delimiter attached to the sentence it closes
    parts = re.split(f"(?<=[{re.escape(delimiters)}])", document)
    return [p.strip() for p in parts if p.strip()]


def build_candidates(corpus: Sequence[str], lexicon: Lexicon, stopwords: Iterable[str],
                     seeds: Iterable[str]) -> set[str]:
    if not corpus:
        raise CorpusError("empty corpus")
    excluded = set(stopwords) | set(seeds)
    found = set()
    for doc in corpus:
        for w in segment(doc, lexicon):
            w = w.strip()
            if w and is_content_word(w) and w not in excluded:
                found.add(w)
    return found


# --------------------------------------------------------------------------
# Vocabulary and token sequences
# --------------------------------------------------------------------------

@dataclass
class Vocab:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise CorpusError("vocabulary must start with the special tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise CorpusError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocab":
        chars = set()
        for t in texts:
            chars.update(ch for ch in t if not ch.isspace())
        return cls(list(SPECIAL_TOKENS) + sorted(chars))

    def __len__(self):
        return len(self.tokens)

    def encode_word(self, word: str) -> list[int]:
        return [self.index.get(ch, UNK_ID) for ch in word if not ch.isspace()]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())

    @property
    def first_regular_id(self) -> int:
        return len(SPECIAL_TOKENS)


@dataclass(frozen=True)
class TokenSequence:
    """Token ids grouped into words; ``word_spans`` hold inclusive (start, end)."""
    tokens: tuple[int, ...]
    word_spans: tuple[tuple[int, int], ...]
    segment_ids: tuple[int, ...]

    def __post_init__(self):
        n = len(self.tokens)
        if len(self.segment_ids) != n:
            raise CorpusError("segment_ids length differs from tokens")
        expected = 0
        for s, e in self.word_spans:
            if s != expected or e < s:
                raise CorpusError(f"word spans do not partition the sequence at {s}")
            expected = e + 1
        if expected != n:
            raise CorpusError("word spans do not cover the sequence")

    def __len__(self):
        return len(self.tokens)

    def is_special(self, pos: int) -> bool:
        return self.tokens[pos] in (CLS_ID, SEP_ID, PAD_ID)


def encode_words(groups: Sequence[Sequence[str]], vocab: Vocab,
                 max_len: int | None = None) -> TokenSequence:
    """Build ``[CLS] g0 [SEP] g1 [SEP] ...`` with segment id ``min(i, 1)`` for group i.

    Groups past the second all share segment 1. With ``max_len`` set, the
    longest group loses trailing words until the sequence fits.
    """
    groups = [[ids for ids in map(vocab.encode_word, g) if ids] for g in groups]
    if max_len is not None:
        budget = max_len - 1 - len(groups)
        if budget < 0:
            raise CorpusError("max_len too small for the special tokens")
        sizes = [sum(map(len, g)) for g in groups]
        while sum(sizes) > budget:
            longest = max(range(len(groups)), key=sizes.__getitem__)
            sizes[longest] -= len(groups[longest].pop())
    tokens, spans, segs = [CLS_ID], [(0, 0)], [0]
    for gi, g in enumerate(groups):
        seg = min(gi, 1)
        for ids in g:
            spans.append((len(tokens), len(tokens) + len(ids) - 1))
            tokens.extend(ids)
            segs.extend([seg] * len(ids))
        spans.append((len(tokens), len(tokens)))
        tokens.append(SEP_ID)
        segs.append(seg)
    return TokenSequence(tuple(tokens), tuple(spans), tuple(segs))


# --------------------------------------------------------------------------
# Whole word masking
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MaskingPlan:
    masked_positions: frozenset[int]
    replacement: dict[int, str]
    labels: dict[int, int]
    random_ids: dict[int, int]

    @classmethod
    def empty(cls) -> "MaskingPlan":
        return cls(frozenset(), {}, {}, {})


def _maskable_words(seq: TokenSequence) -> list[int]:
    return [i for i, (s, e) in enumerate(seq.word_spans)
            if not any(seq.is_special(p) for p in range(s, e + 1))]


def plan_whole_word_mask(seq: TokenSequence, mask_rate: float, rng_seed: int, *,
                         vocab_size: int | None = None, forced_words: Sequence[int] = (),
                         split: tuple[float, float, float] = (0.8, 0.1, 0.1)) -> MaskingPlan:
    """Choose whole words to mask until ``mask_rate`` of the maskable tokens are covered.

    ``forced_words`` (indices into ``seq.word_spans``) are taken first and
    count toward the rate. Each masked position independently becomes
    [MASK], a random regular token, or stays, with probabilities ``split``.
    """
    if not 0.0 <= mask_rate <= 1.0:
        raise CorpusError(f"mask_rate must lie in [0, 1], got {mask_rate}")
    rng = np.random.default_rng(rng_seed)
    words = _maskable_words(seq)
    n_maskable = sum(seq.word_spans[w][1] - seq.word_spans[w][0] + 1 for w in words)
    target = mask_rate * n_maskable

    forced = list(dict.fromkeys(forced_words))
    maskable = set(words)
    for w in forced:
        if w not in maskable:
            raise CorpusError(f"word {w} cannot be masked")
    forced_set = set(forced)
    rest = [w for w in words if w not in forced_set]
    order = forced + [rest[i] for i in rng.permutation(len(rest))]

    chosen, covered = [], 0
    for w in order:
        if covered >= target and w not in forced_set:
            break
        chosen.append(w)
        s, e = seq.word_spans[w]
        covered += e - s + 1

    positions = sorted(p for w in chosen for p in range(seq.word_spans[w][0], seq.word_spans[w][1] + 1))
    replacement, labels, random_ids = {}, {}, {}
    lo = len(SPECIAL_TOKENS)
    for p in positions:
        u = rng.random()
        labels[p] = seq.tokens[p]
        if u < split[0]:
            replacement[p] = REPLACE_MASK
        elif u < split[0] + split[1]:
            replacement[p] = REPLACE_RANDOM
            hi = vocab_size if vocab_size is not None else lo + 1
            random_ids[p] = int(rng.integers(lo, max(hi, lo + 1)))
        else:
            replacement[p] = REPLACE_KEEP
    return MaskingPlan(frozenset(positions), replacement, labels, random_ids)


def apply_mask(seq: TokenSequence, plan: MaskingPlan) -> list[int]:
    out = list(seq.tokens)
    for p in plan.masked_positions:
        kind = plan.replacement[p]
        if kind == REPLACE_MASK:
            out[p] = MASK_ID
        elif kind == REPLACE_RANDOM:
            out[p] = plan.random_ids[p]
    return out


# --------------------------------------------------------------------------
# Pretraining and fine-tuning examples
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PretrainExample:
    token_seq: TokenSequence
    masking: MaskingPlan
    nsp_label: int
    span_targets: tuple[int, int] | None  # inclusive token range

    def input_ids(self) -> list[int]:
        return apply_mask(self.token_seq, self.masking)


@dataclass(frozen=True)
class FineTuneExample:
    tag: int
    word: str
    text: str


def read_finetune_tsv(path: str | Path) -> list[FineTuneExample]:
    """TSV with header ``tag  word  text``."""
    out = []
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split("\t")
        if header != ["tag", "word", "text"]:
            raise CorpusError(f"{path}: expected header tag, word, text; got {header}")
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or parts[0] not in ("0", "1"):
                raise CorpusError(f"{path}:{lineno}: malformed row")
            out.append(FineTuneExample(int(parts[0]), parts[1], parts[2]))
    return out


def write_finetune_tsv(path: str | Path, examples: Iterable[FineTuneExample]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("tag\tword\ttext\n")
        for ex in examples:
            f.write(f"{ex.tag}\t{ex.word}\t{ex.text}\n")


def sentence_table(corpus: Sequence[str], delimiters: str = SENTENCE_DELIMITERS) -> list[list[str]]:
    """Sentences grouped by document, empty documents dropped."""
    return [s for s in (split_sentences(d, delimiters) for d in corpus) if s]


def _content_words(sentence: str, lexicon: Lexicon) -> list[str]:
    return [w for w in segment(sentence, lexicon) if is_content_word(w)]


def make_pretrain_example(sent_a: list[str], sent_b: list[str], nsp_label: int, vocab: Vocab,
                          rng: np.random.Generator, *, max_len: int, mask_rate: float = 0.15,
                          span_lengths: Sequence[int] = (2, 3)) -> PretrainExample:
    seq = encode_words([sent_a, sent_b], vocab, max_len=max_len)
    words = _maskable_words(seq)
    # one contiguous span of whole words inside a single segment
    span_len = int(rng.choice(span_lengths))
    runs = []
    for i in range(len(words)):
        run = words[i:i + span_len]
        if len(run) == span_len and run[-1] - run[0] == span_len - 1:
            runs.append(run)
    span_targets = None
    forced: list[int] = []
    if runs:
        run = runs[int(rng.integers(len(runs)))]
        forced = run
        span_targets = (seq.word_spans[run[0]][0], seq.word_spans[run[-1]][1])
    plan = plan_whole_word_mask(seq, mask_rate, int(rng.integers(2**31)),
                                vocab_size=len(vocab), forced_words=forced)
    return PretrainExample(seq, plan, nsp_label, span_targets)


class SentencePairSampler:
    """Segments a corpus once and draws NSP sentence pairs from it.

    Stopwords stay in the token stream; they matter only for candidate
    extraction.
    """

    def __init__(self, corpus: Sequence[str], lexicon: Lexicon,
                 delimiters: str = SENTENCE_DELIMITERS):
        self.docs = [[_content_words(s, lexicon) for s in d] for d in sentence_table(corpus, delimiters)]
        self.flat = [s for d in self.docs for s in d]
        if len(corpus) < 2 or len(self.flat) < 2:
            raise CorpusError("corpus too small: need at least 2 documents and 2 sentences")
        # anchors are sentences that have a successor in the same document
        self.anchors = [(di, si) for di, d in enumerate(self.docs) for si in range(len(d) - 1)]
        self.offsets = np.cumsum([0] + [len(d) for d in self.docs])

    def batch(self, batch_size: int, rng_seed: int, *, vocab: Vocab, max_len: int = 64,
              mask_rate: float = 0.15, force_nsp: int | None = None) -> list[PretrainExample]:
        """Sentence A with its successor (is-next) or a random other sentence
        (not-next), each with probability one half."""
        if not self.anchors and force_nsp != NOT_NEXT:
            raise CorpusError("corpus too small: no document has two sentences")
        rng = np.random.default_rng(rng_seed)
        out = []
        for _ in range(batch_size):
            label = force_nsp if force_nsp is not None else int(rng.random() < 0.5)
            di, si = self.anchors[int(rng.integers(len(self.anchors)))] if self.anchors else (0, 0)
            a = self.docs[di][si]
            if label == IS_NEXT:
                b = self.docs[di][si + 1]
            else:
                own = self.offsets[di] + si
                succ = own + 1 if si + 1 < len(self.docs[di]) else -1
                k = int(rng.integers(len(self.flat) - (2 if succ >= 0 else 1)))
                # skip over the anchor and its successor without building a list
                for taken in sorted(x for x in (own, succ) if x >= 0):
                    if k >= taken:
                        k += 1
                b = self.flat[k]
            out.append(make_pretrain_example(a, b, label, vocab, rng, max_len=max_len,
                                             mask_rate=mask_rate))
        return out


def make_pretrain_batch(corpus: Sequence[str], lexicon: Lexicon, stopwords: Iterable[str],
                        batch_size: int, rng_seed: int, *, vocab: Vocab, max_len: int = 64,
                        mask_rate: float = 0.15, delimiters: str = SENTENCE_DELIMITERS,
                        force_nsp: int | None = None) -> list[PretrainExample]:
    return SentencePairSampler(corpus, lexicon, delimiters).batch(
        batch_size, rng_seed, vocab=vocab, max_len=max_len, mask_rate=mask_rate, force_nsp=force_nsp)


def finetune_sequence(word: str, text: str, vocab: Vocab, lexicon: Lexicon,
                      max_len: int) -> TokenSequence:
    """``[CLS] word [SEP] text [SEP]`` with segment ids 0 and 1."""
    return encode_words([[word], _content_words(text, lexicon)], vocab, max_len=max_len)


def word_sequence(word: str, vocab: Vocab) -> TokenSequence:
    if not word or not vocab.encode_word(word):
        raise CorpusError("cannot embed an empty word")
    return encode_words([[word]], vocab)
