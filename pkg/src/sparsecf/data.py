"""Implicit-feedback interaction data: loading, splitting, batch sampling."""

from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMATS = ("pair-lines", "per-user-adjacency")

_HEADER_RE = re.compile(r"#\s*users\s*=\s*(\d+)\s+items\s*=\s*(\d+)\s*$")


class DataFormatError(ValueError):
    """An interaction file could not be parsed or violates its declared sizes."""


class NoValidNegativeError(RuntimeError):
    """A sampled user has interacted with every item; no negative exists."""


@dataclass
class InteractionDataset:
    """Bipartite implicit-feedback interactions with a train/test split.

    Edges are (user, item) index pairs stored as int64 arrays of shape
    (n, 2); users occupy indices [0, num_users), items [0, num_items).
    Instances are treated as immutable after construction and may be
    shared across concurrent readers.
    """

    num_users: int
    num_items: int
    train_edges: np.ndarray
    test_edges: np.ndarray
    user_pos_sets: list = field(repr=False)
    # sorted u*num_items+i keys of the train edges, for O(log n) membership
    _train_keys: np.ndarray = field(repr=False)

    @property
    def num_train(self) -> int:
        return len(self.train_edges)

    @property
    def num_test(self) -> int:
        return len(self.test_edges)

    def train_degrees(self, side: str = "users") -> np.ndarray:
        """Per-user or per-item interaction counts in the train split."""
        if side == "users":
            return np.bincount(self.train_edges[:, 0], minlength=self.num_users)
        if side == "items":
            return np.bincount(self.train_edges[:, 1], minlength=self.num_items)
        raise ValueError(f"side must be 'users' or 'items', got {side!r}")

    def has_train_edge(self, u: int, i: int) -> bool:
        key = np.int64(u) * self.num_items + i
        pos = np.searchsorted(self._train_keys, key)
        return pos < len(self._train_keys) and self._train_keys[pos] == key


@dataclass
class TrainBatch:
    """A batch of (user, positive item, negative item) training triples."""

    triples: np.ndarray  # (batch, 3) int64

    @property
    def users(self) -> np.ndarray:
        return self.triples[:, 0]

    @property
    def pos_items(self) -> np.ndarray:
        return self.triples[:, 1]

    @property
    def neg_items(self) -> np.ndarray:
        return self.triples[:, 2]

    def __len__(self) -> int:
        return len(self.triples)


def _as_edge_array(edges) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"edges must have shape (n, 2), got {arr.shape}")
    return arr


def make_dataset(num_users, num_items, train_edges, test_edges=()) -> InteractionDataset:
    """Build a validated dataset from raw edge lists.

    Checks index ranges, rejects duplicate pairs within a split and any
    overlap between splits.
    """
    train = _as_edge_array(train_edges)
    test = _as_edge_array(test_edges)
    for name, arr in (("train", train), ("test", test)):
        if arr.size == 0:
            continue
        if arr[:, 0].min() < 0 or arr[:, 0].max() >= num_users:
            raise ValueError(f"{name} user index out of range [0, {num_users})")
        if arr[:, 1].min() < 0 or arr[:, 1].max() >= num_items:
            raise ValueError(f"{name} item index out of range [0, {num_items})")
    train_keys = train[:, 0] * np.int64(num_items) + train[:, 1]
    test_keys = test[:, 0] * np.int64(num_items) + test[:, 1]
    if len(np.unique(train_keys)) != len(train_keys):
        raise ValueError("duplicate (user, item) pair in train split")
    if len(np.unique(test_keys)) != len(test_keys):
        raise ValueError("duplicate (user, item) pair in test split")
    if np.intersect1d(train_keys, test_keys).size:
        raise ValueError("train and test splits overlap")
    pos_sets = [set() for _ in range(num_users)]
    for u, i in train:
        pos_sets[u].add(int(i))
    return InteractionDataset(
        num_users=int(num_users),
        num_items=int(num_items),
        train_edges=train,
        test_edges=test,
        user_pos_sets=pos_sets,
        _train_keys=np.sort(train_keys),
    )


def _parse_index(token: str, line_no: int, what: str) -> int:
    try:
        value = int(token)
    except ValueError:
        raise DataFormatError(f"line {line_no}: cannot parse {what} index {token!r}") from None
    if value < 0:
        raise DataFormatError(f"line {line_no}: negative {what} index {value}")
    return value


def load_interactions(path, format: str = "pair-lines") -> InteractionDataset:
    """Read an interaction file into a dataset with all edges in train.

    ``pair-lines`` holds one "user item" pair per line (space, tab or
    comma separated); ``per-user-adjacency`` holds "user item1 item2 ..."
    lines. Lines starting with '#' are ignored, except an optional
    "# users=N items=M" header that declares the index spaces. Without a
    header, sizes are max index + 1 per side. Duplicate pairs are dropped
    with a warning.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}, expected one of {FORMATS}")
    text = Path(path).read_text(encoding="utf-8")
    declared = None
    edges: list[tuple[int, int]] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _HEADER_RE.match(line)
            if m:
                declared = (int(m.group(1)), int(m.group(2)))
            continue
        tokens = re.split(r"[,\s]+", line)
        if format == "pair-lines":
            if len(tokens) != 2:
                raise DataFormatError(
                    f"line {line_no}: expected 'user item', got {len(tokens)} fields"
                )
            u = _parse_index(tokens[0], line_no, "user")
            i = _parse_index(tokens[1], line_no, "item")
            edges.append((u, i))
        else:
            u = _parse_index(tokens[0], line_no, "user")
            for tok in tokens[1:]:
                edges.append((u, _parse_index(tok, line_no, "item")))
    if not edges:
        raise DataFormatError(f"{path}: no interactions found")
    arr = np.asarray(edges, dtype=np.int64)
    if declared is not None:
        num_users, num_items = declared
        if arr[:, 0].max() >= num_users:
            raise DataFormatError(
                f"user index {arr[:, 0].max()} outside declared range [0, {num_users})"
            )
        if arr[:, 1].max() >= num_items:
            raise DataFormatError(
                f"item index {arr[:, 1].max()} outside declared range [0, {num_items})"
            )
    else:
        num_users = int(arr[:, 0].max()) + 1
        num_items = int(arr[:, 1].max()) + 1
    keys = arr[:, 0] * np.int64(num_items) + arr[:, 1]
    _, first_idx = np.unique(keys, return_index=True)
    if len(first_idx) != len(arr):
        warnings.warn(
            f"{path}: dropped {len(arr) - len(first_idx)} duplicate interaction(s)",
            stacklevel=2,
        )
        arr = arr[np.sort(first_idx)]
    return make_dataset(num_users, num_items, arr)


def split_holdout(ds: InteractionDataset, ratio: float, seed: int) -> InteractionDataset:
    """Move a per-user random holdout of train edges into the test split.

    For each user, ceil(ratio * degree) edges move to test, capped at
    degree - 1 so every user keeps at least one train edge; single-edge
    users keep theirs. Deterministic given the seed.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    if ds.num_test:
        raise ValueError("dataset already has a test split")
    degrees = ds.train_degrees("users")
    if (degrees == 0).any():
        raise ValueError("every user must have at least one interaction before splitting")
    rng = np.random.default_rng(seed)
    by_user = np.argsort(ds.train_edges[:, 0], kind="stable")
    offsets = np.concatenate([[0], np.cumsum(degrees)])
    to_test = np.zeros(ds.num_train, dtype=bool)
    for u in range(ds.num_users):
        deg = int(degrees[u])
        n_test = min(math.ceil(ratio * deg), deg - 1)
        if n_test <= 0:
            continue
        rows = by_user[offsets[u] : offsets[u + 1]]
        picked = rng.choice(deg, size=n_test, replace=False)
        to_test[rows[picked]] = True
    return make_dataset(
        ds.num_users,
        ds.num_items,
        ds.train_edges[~to_test],
        ds.train_edges[to_test],
    )


_MAX_REJECTION_ROUNDS = 100


def sample_batch(ds: InteractionDataset, batch_size: int, rng: np.random.Generator) -> TrainBatch:
    """Draw (u, i, j) triples: (u, i) uniform over train edges, j a uniform
    random item the user has not interacted with.

    Negatives are rejection-sampled with a bounded number of rounds, then
    resolved by a linear scan. Concurrent samplers must each own their rng.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if ds.num_train == 0:
        raise ValueError("cannot sample from a dataset with no train edges")
    eidx = rng.integers(0, ds.num_train, size=batch_size)
    users = ds.train_edges[eidx, 0]
    pos = ds.train_edges[eidx, 1]
    neg = np.empty(batch_size, dtype=np.int64)
    unresolved = np.arange(batch_size)
    for _ in range(_MAX_REJECTION_ROUNDS):
        if unresolved.size == 0:
            break
        cand = rng.integers(0, ds.num_items, size=unresolved.size)
        neg[unresolved] = cand
        keys = users[unresolved] * np.int64(ds.num_items) + cand
        pos_at = np.searchsorted(ds._train_keys, keys)
        pos_at = np.minimum(pos_at, len(ds._train_keys) - 1)
        still_bad = ds._train_keys[pos_at] == keys
        unresolved = unresolved[still_bad]
    for b in unresolved:
        u = int(users[b])
        pos_set = ds.user_pos_sets[u]
        if len(pos_set) >= ds.num_items:
            raise NoValidNegativeError(f"user {u} has interacted with all {ds.num_items} items")
        neg[b] = next(j for j in range(ds.num_items) if j not in pos_set)
    return TrainBatch(np.stack([users, pos, neg], axis=1))


def save_dataset(ds: InteractionDataset, out_dir, manifest_extra: dict | None = None) -> None:
    """Write train.txt/test.txt in pair-lines format plus a JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = f"# users={ds.num_users} items={ds.num_items}\n"
    for name, edges in (("train.txt", ds.train_edges), ("test.txt", ds.test_edges)):
        lines = [header]
        lines.extend(f"{u} {i}\n" for u, i in edges)
        (out / name).write_text("".join(lines), encoding="utf-8")
    manifest = {
        "num_users": ds.num_users,
        "num_items": ds.num_items,
        "train_edges": ds.num_train,
        "test_edges": ds.num_test,
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    (out / "split_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_dataset(data_dir) -> InteractionDataset:
    """Load a dataset directory written by save_dataset."""
    data_dir = Path(data_dir)
    train = load_interactions(data_dir / "train.txt")
    test_path = data_dir / "test.txt"
    test_edges: np.ndarray
    if test_path.exists():
        try:
            test_edges = load_interactions(test_path).train_edges
        except DataFormatError:
            test_edges = np.empty((0, 2), dtype=np.int64)
    else:
        test_edges = np.empty((0, 2), dtype=np.int64)
    num_users = train.num_users
    num_items = train.num_items
    if test_edges.size:
        num_users = max(num_users, int(test_edges[:, 0].max()) + 1)
        num_items = max(num_items, int(test_edges[:, 1].max()) + 1)
    return make_dataset(num_users, num_items, train.train_edges, test_edges)
