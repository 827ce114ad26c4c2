"""Interaction ingestion, splitting, graph normalization, triplet sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DataFormatError, GraphError, SamplingError
from .seeding import stream

NEGATIVE_REJECTION_CAP = 100


@dataclass
class InteractionDataset:
    """Deduplicated user-item pairs with contiguous first-appearance indices."""

    num_users: int
    num_items: int
    pairs: list
    user_id_map: dict
    item_id_map: dict
    user_ids: list
    item_ids: list


@dataclass
class SplitDataset:
    """Per-user train/validation/test item lists."""

    num_users: int
    num_items: int
    train: list
    validation: list
    test: list
    seed: int
    _train_pairs: np.ndarray = field(default=None, repr=False)
    _train_sets: list = field(default=None, repr=False)

    @property
    def train_pairs(self):
        if self._train_pairs is None:
            pairs = [(u, v) for u, items in enumerate(self.train) for v in items]
            self._train_pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        return self._train_pairs

    @property
    def train_sets(self):
        if self._train_sets is None:
            self._train_sets = [set(items) for items in self.train]
        return self._train_sets


class NormalizedBipartiteGraph:
    """Sparse symmetric-normalized interaction matrix plus degree vectors.

    Entries are 1/sqrt(deg(u) * deg(v)) for every training interaction;
    the transpose is cached because propagation alternates directions.
    """

    def __init__(self, a_norm: sp.csr_matrix, user_degrees, item_degrees):
        self.a_norm = a_norm
        self.user_degrees = np.asarray(user_degrees, dtype=np.int64)
        self.item_degrees = np.asarray(item_degrees, dtype=np.int64)
        self.mat = a_norm
        self.mat_t = a_norm.T.tocsr()

    @property
    def num_users(self):
        return self.a_norm.shape[0]

    @property
    def num_items(self):
        return self.a_norm.shape[1]


@dataclass
class TripletBatch:
    """(user, positive, negative) triples plus the deduplicated node sets."""

    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray
    user_set: np.ndarray
    item_set: np.ndarray

    def __len__(self):
        return len(self.users)


def load_interactions(path, skip_header=False) -> InteractionDataset:
    """Parse a tab-separated interaction file into contiguous indices.

    Each non-empty line must be `raw_user<TAB>raw_item[<TAB>extra...]`;
    extra columns are ignored, duplicate pairs collapse to one, and IDs
    are remapped in first-appearance order.
    """
    user_map, item_map = {}, {}
    user_ids, item_ids = [], []
    pairs = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if skip_header and lineno == 1:
                continue
            line = line.rstrip("\r\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) < 2 or not cols[0] or not cols[1]:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected `user<TAB>item`, got {line!r}"
                )
            raw_u, raw_v = cols[0], cols[1]
            if raw_u not in user_map:
                user_map[raw_u] = len(user_ids)
                user_ids.append(raw_u)
            if raw_v not in item_map:
                item_map[raw_v] = len(item_ids)
                item_ids.append(raw_v)
            key = (user_map[raw_u], item_map[raw_v])
            if key not in seen:
                seen.add(key)
                pairs.append(key)
    if not pairs:
        raise DataFormatError(f"{path}: no interactions found")
    return InteractionDataset(
        num_users=len(user_ids),
        num_items=len(item_ids),
        pairs=pairs,
        user_id_map=user_map,
        item_id_map=item_map,
        user_ids=user_ids,
        item_ids=item_ids,
    )


def split_dataset(ds: InteractionDataset, train_frac, valid_frac, seed) -> SplitDataset:
    """Seeded per-user proportional split.

    Users with fewer than 3 interactions keep everything in train, which
    guarantees every test user still has a training interaction to rank
    from.
    """
    if train_frac <= 0 or valid_frac < 0 or train_frac + valid_frac > 1:
        raise ValueError("need train_frac > 0, valid_frac >= 0, sum <= 1")
    rng = stream(seed, "split")
    per_user = [[] for _ in range(ds.num_users)]
    for u, v in ds.pairs:
        per_user[u].append(v)
    train, valid, test = [], [], []
    for items in per_user:
        items = np.asarray(items, dtype=np.int64)
        rng.shuffle(items)
        n = len(items)
        if n < 3:
            train.append(items.tolist())
            valid.append([])
            test.append([])
            continue
        n_train = max(1, int(n * train_frac + 1e-9))
        n_valid = min(int(n * valid_frac + 1e-9), n - n_train)
        train.append(items[:n_train].tolist())
        valid.append(items[n_train:n_train + n_valid].tolist())
        test.append(items[n_train + n_valid:].tolist())
    return SplitDataset(
        num_users=ds.num_users,
        num_items=ds.num_items,
        train=train,
        validation=valid,
        test=test,
        seed=seed,
    )


def build_normalized_adjacency(split: SplitDataset) -> NormalizedBipartiteGraph:
    """D_u^{-1/2} * A * D_v^{-1/2} over the training interactions."""
    pairs = split.train_pairs
    if len(pairs) == 0:
        raise GraphError("training split is empty")
    rows, cols = pairs[:, 0], pairs[:, 1]
    user_deg = np.bincount(rows, minlength=split.num_users)
    item_deg = np.bincount(cols, minlength=split.num_items)
    du = user_deg[rows]
    dv = item_deg[cols]
    if np.any(du == 0) or np.any(dv == 0):
        raise GraphError("training interaction references a zero-degree node")
    vals = 1.0 / np.sqrt(du.astype(np.float64) * dv.astype(np.float64))
    a_norm = sp.csr_matrix(
        (vals, (rows, cols)), shape=(split.num_users, split.num_items)
    )
    return NormalizedBipartiteGraph(a_norm, user_deg, item_deg)


def sample_bpr_batch(split: SplitDataset, batch_size, rng) -> TripletBatch:
    """Uniform interaction draw -> user; uniform positive from that user's
    training items; negative by rejection against the user's training set."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    pairs = split.train_pairs
    train_sets = split.train_sets
    picks = rng.integers(0, len(pairs), size=batch_size)
    users = pairs[picks, 0]
    pos = np.empty(batch_size, dtype=np.int64)
    neg = np.empty(batch_size, dtype=np.int64)
    for k, u in enumerate(users):
        items = split.train[u]
        pos[k] = items[rng.integers(0, len(items))]
        owned = train_sets[u]
        for _ in range(NEGATIVE_REJECTION_CAP):
            cand = int(rng.integers(0, split.num_items))
            if cand not in owned:
                neg[k] = cand
                break
        else:
            raise SamplingError(
                f"user {u} rejected {NEGATIVE_REJECTION_CAP} negative candidates; "
                "the dataset is too dense to sample from"
            )
    return TripletBatch(
        users=users,
        pos_items=pos,
        neg_items=neg,
        user_set=np.unique(users),
        item_set=np.unique(np.concatenate([pos, neg])),
    )


def write_id_maps(ds: InteractionDataset, user_path, item_path):
    """Persist raw-ID <-> index maps as two-column TSV."""
    with open(user_path, "w", encoding="utf-8") as fh:
        for idx, raw in enumerate(ds.user_ids):
            fh.write(f"{raw}\t{idx}\n")
    with open(item_path, "w", encoding="utf-8") as fh:
        for idx, raw in enumerate(ds.item_ids):
            fh.write(f"{raw}\t{idx}\n")


def write_split(split: SplitDataset, path):
    """Persist the split as `user<TAB>item<TAB>{train,valid,test}` rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# users={split.num_users} items={split.num_items} seed={split.seed}\n")
        for name, lists in (("train", split.train), ("valid", split.validation), ("test", split.test)):
            for u, items in enumerate(lists):
                for v in items:
                    fh.write(f"{u}\t{v}\t{name}\n")


def read_split(path) -> SplitDataset:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise DataFormatError(f"{path}: missing split header line")
        meta = dict(tok.split("=") for tok in header[1:].split())
        num_users, num_items = int(meta["users"]), int(meta["items"])
        seed = int(meta.get("seed", 0))
        train = [[] for _ in range(num_users)]
        valid = [[] for _ in range(num_users)]
        test = [[] for _ in range(num_users)]
        buckets = {"train": train, "valid": valid, "test": test}
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            u, v, name = line.split("\t")
            buckets[name][int(u)].append(int(v))
    return SplitDataset(
        num_users=num_users,
        num_items=num_items,
        train=train,
        validation=valid,
        test=test,
        seed=seed,
    )
