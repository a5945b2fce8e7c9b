import numpy as np
import pytest

from learnpool.pooling import PoolingWeights
from learnpool.training import ClassifierParams, LabeledDataset, ModelParams


def random_problem(rng, gh=3, gw=3, K=3, L=2, C=2, n=5):
    """Interior random model plus dataset, small enough for brute-force oracles."""
    data = LabeledDataset(rng.uniform(0, 1, (n, gh * gw, K)), rng.integers(0, C, n), gh, gw, C)
    W = PoolingWeights(rng.uniform(0.05, 0.95, (L, gh * gw, K)), gh, gw)
    clf = ClassifierParams(rng.normal(0, 0.1, (C, L * K)), rng.normal(0, 0.1, C))
    return ModelParams(W, clf), data


def separable_problem(n=40, seed=0):
    """Two classes whose codes live in opposite halves of a 2x2 grid (M=4, K=2)."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    codes = rng.uniform(0, 0.1, (n, 4, 2))
    codes[labels == 0, :2, 0] += 1.0
    codes[labels == 1, 2:, 1] += 1.0
    return LabeledDataset(codes, labels, 2, 2, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, collected by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {text}")
