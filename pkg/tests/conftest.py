import os
from pathlib import Path

import numpy as np
import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
LASTFM_PATH = Path(os.environ.get(
    "BUSGCL_LASTFM", REPO_ROOT / "data" / "lastfm" / "user_artists.dat"
))


def lastfm_available():
    return LASTFM_PATH.exists()


@pytest.fixture(scope="session")
def lastfm_path():
    if not lastfm_available():
        pytest.skip(
            f"Last.FM interaction dump not found at {LASTFM_PATH}; "
            "set BUSGCL_LASTFM or see README (data section)"
        )
    return LASTFM_PATH


def write_tsv(path, pairs, header=None):
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(header + "\n")
        for u, v in pairs:
            fh.write(f"{u}\t{v}\n")
    return path


def random_dataset(rng, num_users=8, num_items=10, extra=25):
    """Random interaction pair list covering every user and item index."""
    pairs = set()
    for u in range(num_users):
        pairs.add((u, int(rng.integers(0, num_items))))
    for v in range(num_items):
        pairs.add((int(rng.integers(0, num_users)), v))
    for _ in range(extra):
        pairs.add((int(rng.integers(0, num_users)), int(rng.integers(0, num_items))))
    return sorted(pairs)


def split_from_pairs(pairs, num_users, num_items):
    """All-train SplitDataset over explicit pairs."""
    from busgcl.data import SplitDataset

    train = [[] for _ in range(num_users)]
    for u, v in pairs:
        train[u].append(v)
    return SplitDataset(
        num_users=num_users, num_items=num_items, train=train,
        validation=[[] for _ in range(num_users)],
        test=[[] for _ in range(num_users)], seed=0,
    )
