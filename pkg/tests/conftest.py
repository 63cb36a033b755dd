import numpy as np
import pytest

from attrinf.core import Dataset

_ACCEPTANCE_LINES: list[str] = []


class MemberOracle:
    """Scores 1.0 on rows of ``D`` and 0.0 everywhere else."""

    def __init__(self, D: Dataset):
        self.D = D

    def max_confidence(self, X):
        from attrinf.core import pack_bits

        return self.D.contains_rows(pack_bits(np.atleast_2d(X))).astype(float)


class ConstantModel:
    def __init__(self, value=0.5):
        self.value = value

    def max_confidence(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.value)


class HashModel:
    """Pseudo-random confidence that is a fixed function of the input row."""

    def __init__(self, seed=0):
        self.seed = seed

    def max_confidence(self, X):
        X = np.atleast_2d(X).astype(np.uint64)
        w = np.random.default_rng(self.seed).integers(1, 2**61, size=X.shape[1], dtype=np.uint64)
        h = (X * w).sum(axis=1, dtype=np.uint64)
        h ^= h >> np.uint64(29)
        h *= np.uint64(0xBF58476D1CE4E5B9)
        h ^= h >> np.uint64(32)
        return (h >> np.uint64(11)).astype(np.float64) / 2.0**53


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
