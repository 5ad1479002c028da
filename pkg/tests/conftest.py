import sys

import numpy as np
import pytest

from npsa.models import onecomp_predict
from npsa.types import Subject


def onecomp_subjects(thetas, times=(0.2, 0.4, 0.6, 0.8, 1.0), noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    times = np.asarray(times, dtype=float)
    out = []
    for i, (K, V) in enumerate(thetas):
        y = onecomp_predict(K, V, times) + noise * rng.standard_normal(times.size)
        out.append(Subject(f"s{i}", times, y))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def wang_subjects(n=20, beta=0.97, seed=0):
    """Binomial counts from a two-point random intercept, one row per subject."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        mu = -3.0 if rng.random() < 0.4 else 0.9
        x = float(rng.integers(0, 4))
        trials = int(rng.integers(5, 30))
        p = 1.0 / (1.0 + np.exp(-(mu + beta * x)))
        y = int(rng.binomial(trials, p))
        out.append(Subject(f"w{i}", [1.0], [y], aux={"n_trials": [trials], "x": [x]}))
    return out


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[number])
