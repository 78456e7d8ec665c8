from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from aif.corpus import Lexicon, Vocab
from aif.encoder import EncoderConfig, init_params

ROOT = Path(__file__).resolve().parents[1]
FIXTURE = ROOT / "fixtures" / "mini"

# lines collected by the acceptance tests, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return FIXTURE


@pytest.fixture
def tiny_vocab() -> Vocab:
    return Vocab.build(["铁路公路机场桥梁房地产房价住宅数据中心芯片和与了的。"])


@pytest.fixture
def tiny_lexicon() -> Lexicon:
    return Lexicon.from_words(["铁路", "公路", "机场", "桥梁", "房地产", "房价", "住宅", "数据中心", "芯片"])


def make_tiny(vocab_size: int, *, layers: int = 1, heads: int = 2, d_model: int = 8, d_ff: int = 16,
              max_seq_len: int = 32, std: float = 0.02, seed: int = 0):
    cfg = EncoderConfig(num_layers=layers, num_heads=heads, d_model=d_model, d_ff=d_ff,
                        vocab_size=vocab_size, max_seq_len=max_seq_len, rng_seed=seed)
    return cfg, init_params(cfg, std)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
