import numpy as np
import pytest

from prefopt import PolicyTable, PreferenceTuple


def random_pair(rng, num_queries=3, num_responses=5, scale=1.0):
    """Random trainable policy and frozen reference sharing an augmentation map."""
    aug = np.arange(num_queries, 2 * num_queries)
    ref = PolicyTable(rng.normal(0, scale, (2 * num_queries, num_responses)), aug, trainable=False)
    pi = PolicyTable(rng.normal(0, scale, (2 * num_queries, num_responses)), aug)
    return pi, ref


def random_batch(rng, num_queries, num_responses, size):
    out = []
    for _ in range(size):
        x = int(rng.integers(num_queries))
        a, b = rng.choice(num_responses, size=2, replace=False)
        out.append(PreferenceTuple(x, int(a), int(b)))
    return out


def central_difference(f, logits, h=1e-5):
    grad = np.zeros_like(logits)
    for idx in np.ndindex(*logits.shape):
        old = logits[idx]
        logits[idx] = old + h
        up = f()
        logits[idx] = old - h
        down = f()
        logits[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def relative_error(approx, exact):
    denom = max(np.linalg.norm(exact), 1e-300)
    return np.linalg.norm(approx - exact) / denom


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
