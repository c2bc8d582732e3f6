import sys

import numpy as np
import pytest

from debiasbench.data import Dataset, FeedbackKind, Interactions, Source, make_split


def tiny_explicit(num_users=6, num_items=5, n_biased=18, n_random=24, seed=0):
    """Small explicit-feedback pair of logs with distinct (user, item) pairs per source."""
    rng = np.random.default_rng(seed)
    pairs = np.array([(u, i) for u in range(num_users) for i in range(num_items)])

    def draw(n, source):
        idx = rng.choice(len(pairs), size=n, replace=False)
        u, i = pairs[idx].T
        r = rng.integers(1, 6, size=n).astype(float)
        return Interactions(u, i, r, source)

    biased = Dataset("tiny", num_users, num_items, FeedbackKind.EXPLICIT, 1.0, 5.0, draw(n_biased, Source.BIASED))
    randomized = Dataset("tiny", num_users, num_items, FeedbackKind.EXPLICIT, 1.0, 5.0, draw(n_random, Source.RANDOMIZED))
    return biased, randomized


@pytest.fixture
def explicit_pair():
    return tiny_explicit()


@pytest.fixture
def explicit_split(explicit_pair):
    biased, randomized = explicit_pair
    return make_split(biased, randomized, (0.25, 0.25, 0.5), seed=1)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines, key=acceptance.criterion_order):
        terminalreporter.write_line(lines[key])
