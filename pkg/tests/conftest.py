from __future__ import annotations

import numpy as np
import pytest

from warpbench.ingest import RawInteraction, build_dataset


def dataset_from_pairs(pairs, ratings=None, timestamps=None, **kw):
    """Dataset from (user, item) pairs given as ints or raw strings."""
    recs = []
    for k, (u, i) in enumerate(pairs):
        r = 1.0 if ratings is None else float(ratings[k])
        t = None if timestamps is None else int(timestamps[k])
        recs.append(RawInteraction(f"u{u}" if not isinstance(u, str) else u, f"i{i}" if not isinstance(i, str) else i, r, t))
    return build_dataset(recs, **kw)


def random_dataset(rng: np.random.Generator, n_users: int, n_items: int, density: float, timestamps: bool = True):
    X = rng.random((n_users, n_items)) < density
    # register every user/item in index order so internal index == position
    pairs = [(u, i) for u in range(n_users) for i in range(n_items) if X[u, i]]
    if not pairs:
        pairs = [(0, 0)]
    order = rng.permutation(len(pairs))
    pairs = [pairs[j] for j in order]
    ratings = rng.integers(1, 6, size=len(pairs))
    ts = rng.integers(0, 10_000, size=len(pairs)) if timestamps else None
    return dataset_from_pairs(
        pairs, ratings, ts,
        user_catalog=[f"u{u}" for u in range(n_users)], item_catalog=[f"i{i}" for i in range(n_items)],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_data():
    rng = np.random.default_rng(7)
    return random_dataset(rng, 40, 30, 0.25)


def pytest_configure(config):
    from verdicts import VERDICTS

    config.stash[VERDICTS] = {}


def pytest_terminal_summary(terminalreporter, config):
    from verdicts import VERDICTS

    verdicts = config.stash.get(VERDICTS, {})
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for n in sorted(verdicts):
            terminalreporter.write_line(verdicts[n])
