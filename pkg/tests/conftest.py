import numpy as np
import pytest

from catsnet.data import TokenizedPair, collate
from catsnet.model import CATsNet, ModelConfig

TINY = dict(d_model=8, n_heads=2, n_blocks=1, head_hidden=8, max_len=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_model(seed=0, vocab_size=9, **overrides) -> CATsNet:
    cfg = ModelConfig(**{**TINY, **overrides})
    return CATsNet(cfg, vocab_size, seed=seed)


def tiny_batch():
    return collate([
        TokenizedPair([2, 3, 4], [5, 6, 2], 1),
        TokenizedPair([3, 3, 6], [4, 2, 5], 0),
    ])


def ragged_batch():
    return collate([
        TokenizedPair([2, 3, 4, 5], [6, 2], 1),
        TokenizedPair([7], [4, 8, 5, 3, 2], 0),
        TokenizedPair([2, 8], [3, 3, 3], 1),
    ])


# one PASS/FAIL line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
