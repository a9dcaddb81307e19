"""Interaction ingestion, time discretization, tensor/matrix indexing and splits.

A purchase log is turned into three sets of positive indices:

* ``A``: distinct ``(user, item, interval)`` triples (the binary tensor),
* ``B``: distinct ``(user, item)`` pairs,
* ``C``: distinct ``(interval, item)`` pairs.

``B`` and ``C`` are always projections of ``A``.
"""
from __future__ import annotations

import hashlib
import io
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import EmptyInput, MalformedLine, RatioError, TimestampOutOfGrid

logger = logging.getLogger(__name__)

WEEK_SECONDS = 604800


@dataclass(frozen=True)
class Interaction:
    user_raw: str
    item_raw: str
    timestamp: int

    def __post_init__(self):
        if not self.user_raw or not self.item_raw:
            raise ValueError("user and item ids must be non-empty")
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")


@dataclass(frozen=True)
class TimeGrid:
    origin: int
    interval_seconds: int = WEEK_SECONDS
    num_intervals: int = 1

    def __post_init__(self):
        if self.interval_seconds <= 0:
            raise ValueError("interval_seconds must be positive")
        if self.num_intervals <= 0:
            raise ValueError("num_intervals must be positive")

    def index(self, timestamp):
        """Interval index of ``timestamp`` (scalar or array), unchecked."""
        ts = np.asarray(timestamp, dtype=np.int64)
        idx = (ts - self.origin) // self.interval_seconds
        return int(idx) if idx.ndim == 0 else idx

    def contains(self, timestamp) -> bool:
        idx = self.index(timestamp)
        return 0 <= idx < self.num_intervals


class Vocab:
    """Bidirectional raw-id <-> dense-index map, indices in insertion order."""

    def __init__(self, ids: Iterable[str] = ()):
        self._ids: list[str] = []
        self._index: dict[str, int] = {}
        for raw in ids:
            self.add(raw)

    def add(self, raw: str) -> int:
        idx = self._index.get(raw)
        if idx is None:
            idx = len(self._ids)
            self._ids.append(raw)
            self._index[raw] = idx
        return idx

    def index(self, raw: str) -> int:
        return self._index[raw]

    def get(self, raw: str, default=None):
        return self._index.get(raw, default)

    def raw(self, idx: int) -> str:
        return self._ids[idx]

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self._ids)

    def __contains__(self, raw) -> bool:
        return raw in self._index

    def __len__(self) -> int:
        return len(self._ids)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._ids == other._ids

    def __repr__(self) -> str:
        return f"Vocab(size={len(self)})"


def _unique_rows(arr: np.ndarray) -> np.ndarray:
    if len(arr) == 0:
        return arr.reshape(0, arr.shape[1] if arr.ndim == 2 else 0)
    return np.unique(arr, axis=0)


@dataclass(eq=False)
class Dataset:
    """Indexed positive sets of one interaction log.

    ``triples`` holds the distinct ``(p, q, r)`` index triples, sorted
    lexicographically. The coupled user-item and time-item pairs are derived
    on construction.
    """

    n_users: int
    n_items: int
    n_intervals: int
    triples: np.ndarray
    user_vocab: Vocab = field(default_factory=Vocab)
    item_vocab: Vocab = field(default_factory=Vocab)
    grid: TimeGrid | None = None

    def __post_init__(self):
        t = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        t = _unique_rows(t)
        if len(t):
            if t.min() < 0 or (t.max(axis=0) >= (self.n_users, self.n_items, self.n_intervals)).any():
                raise ValueError("triple index out of range for dataset dimensions")
        t.setflags(write=False)
        self.triples = t
        self.user_items = _unique_rows(t[:, [0, 1]])
        self.time_items = _unique_rows(t[:, [2, 1]])
        self.user_items.setflags(write=False)
        self.time_items.setflags(write=False)
        Q = self.n_items
        self._ui_keys = np.sort(self.user_items[:, 0] * Q + self.user_items[:, 1])
        self._ti_keys = np.sort(self.time_items[:, 0] * Q + self.time_items[:, 1])
        self._user_items_sets: tuple[frozenset, ...] | None = None
        self._time_items_sets: tuple[frozenset, ...] | None = None

    # short aliases
    @property
    def P(self) -> int:
        return self.n_users

    @property
    def Q(self) -> int:
        return self.n_items

    @property
    def R(self) -> int:
        return self.n_intervals

    @property
    def positives_A(self) -> set[tuple[int, int, int]]:
        return {tuple(int(x) for x in row) for row in self.triples}

    @property
    def positives_B(self) -> set[tuple[int, int]]:
        return {(int(p), int(q)) for p, q in self.user_items}

    @property
    def positives_C(self) -> set[tuple[int, int]]:
        return {(int(r), int(q)) for r, q in self.time_items}

    @property
    def per_user_items(self) -> tuple[frozenset, ...]:
        if self._user_items_sets is None:
            self._user_items_sets = _group_sets(self.user_items, self.n_users)
        return self._user_items_sets

    @property
    def per_time_items(self) -> tuple[frozenset, ...]:
        if self._time_items_sets is None:
            self._time_items_sets = _group_sets(self.time_items, self.n_intervals)
        return self._time_items_sets

    def has_user_item(self, p, q) -> np.ndarray:
        """Vectorized membership test ``(p, q) in B``."""
        return _member(self._ui_keys, np.asarray(p) * self.n_items + np.asarray(q))

    def has_time_item(self, r, q) -> np.ndarray:
        """Vectorized membership test ``(r, q) in C``."""
        return _member(self._ti_keys, np.asarray(r) * self.n_items + np.asarray(q))

    def item_popularity(self) -> np.ndarray:
        """Number of distinct ``(user, interval)`` purchases per item."""
        return np.bincount(self.triples[:, 1], minlength=self.n_items).astype(np.int64)

    def vocab_digest(self) -> bytes:
        return vocab_digest(self.user_vocab, self.item_vocab)

    def __len__(self) -> int:
        return len(self.triples)

    def __repr__(self) -> str:
        return (f"Dataset(P={self.n_users}, Q={self.n_items}, R={self.n_intervals}, "
                f"|A|={len(self.triples)}, |B|={len(self.user_items)}, |C|={len(self.time_items)})")


def _group_sets(pairs: np.ndarray, n_rows: int) -> tuple[frozenset, ...]:
    rows: list[list[int]] = [[] for _ in range(n_rows)]
    for a, b in pairs:
        rows[int(a)].append(int(b))
    return tuple(frozenset(r) for r in rows)


def _member(sorted_keys: np.ndarray, keys) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    if len(sorted_keys) == 0:
        return np.zeros(keys.shape, dtype=bool)
    pos = np.searchsorted(sorted_keys, keys)
    pos = np.minimum(pos, len(sorted_keys) - 1)
    return sorted_keys[pos] == keys


def vocab_digest(user_vocab: Vocab, item_vocab: Vocab) -> bytes:
    h = hashlib.sha256()
    for name, vocab in (("users", user_vocab), ("items", item_vocab)):
        h.update(name.encode())
        for raw in vocab.ids:
            h.update(b"\x00" + raw.encode("utf-8"))
    return h.digest()


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def parse_interactions(stream) -> list[Interaction]:
    """Parse ``user<TAB>item<TAB>epoch_seconds`` lines.

    Blank lines and lines starting with ``#`` are skipped. ``stream`` may be a
    text file object, a string, or any iterable of lines.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    out = []
    for line_no, line in enumerate(stream, start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise MalformedLine(line_no, f"expected 3 tab-separated fields, got {len(parts)}")
        user, item, ts = parts
        try:
            ts_int = int(ts)
        except ValueError:
            raise MalformedLine(line_no, f"bad timestamp {ts!r}") from None
        try:
            out.append(Interaction(user, item, ts_int))
        except ValueError as exc:
            raise MalformedLine(line_no, str(exc)) from None
    if not out:
        raise EmptyInput("no interactions in input")
    return out


def read_interactions(path) -> list[Interaction]:
    with open(path, encoding="utf-8") as fh:
        return parse_interactions(fh)


def write_interactions(interactions: Iterable[Interaction], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for it in interactions:
            fh.write(f"{it.user_raw}\t{it.item_raw}\t{it.timestamp}\n")


def filter_min_timestamp(interactions: Sequence[Interaction], min_timestamp: int | None):
    if min_timestamp is None:
        return list(interactions)
    return [it for it in interactions if it.timestamp >= min_timestamp]


def kcore_filter(interactions: Sequence[Interaction], k: int) -> list[Interaction]:
    """Drop users/items with fewer than ``k`` records until a fixed point.

    Records are counted per interaction (duplicates included). Survivors keep
    their original order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    current = list(interactions)
    if k == 1:
        return current
    while True:
        users = Counter(it.user_raw for it in current)
        items = Counter(it.item_raw for it in current)
        kept = [it for it in current if users[it.user_raw] >= k and items[it.item_raw] >= k]
        if len(kept) == len(current):
            return kept
        current = kept


def build_time_grid(interactions: Sequence[Interaction], interval_seconds: int = WEEK_SECONDS) -> TimeGrid:
    """Epoch-anchored grid covering every timestamp in ``interactions``."""
    if not interactions:
        raise EmptyInput("cannot build a time grid from no interactions")
    if interval_seconds <= 0:
        raise ValueError("interval_seconds must be positive")
    ts = [it.timestamp for it in interactions]
    origin = (min(ts) // interval_seconds) * interval_seconds
    n = (max(ts) - origin) // interval_seconds + 1
    return TimeGrid(origin=origin, interval_seconds=interval_seconds, num_intervals=n)


def build_dataset(interactions: Sequence[Interaction], grid: TimeGrid) -> Dataset:
    users, items = Vocab(), Vocab()
    rows = np.empty((len(interactions), 3), dtype=np.int64)
    for i, it in enumerate(interactions):
        r = grid.index(it.timestamp)
        if not 0 <= r < grid.num_intervals:
            raise TimestampOutOfGrid(
                f"timestamp {it.timestamp} falls in interval {r}, outside [0, {grid.num_intervals})")
        rows[i] = (users.add(it.user_raw), items.add(it.item_raw), r)
    return Dataset(len(users), len(items), grid.num_intervals, rows, users, items, grid)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Holdout:
    """Held-out ``(p, q, r)`` triples; ``cold`` marks user or item unseen in train."""

    triples: np.ndarray
    cold: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        c = np.zeros(len(t), dtype=bool) if self.cold is None else np.asarray(self.cold, dtype=bool).reshape(-1)
        if len(t) != len(c):
            raise ValueError("triples and cold flags differ in length")
        object.__setattr__(self, "triples", t)
        object.__setattr__(self, "cold", c)

    def __len__(self) -> int:
        return len(self.triples)

    def warm(self) -> "Holdout":
        keep = ~self.cold
        return Holdout(self.triples[keep], self.cold[keep])

    def __eq__(self, other) -> bool:
        return (isinstance(other, Holdout) and np.array_equal(self.triples, other.triples)
                and np.array_equal(self.cold, other.cold))

    @classmethod
    def empty(cls) -> "Holdout":
        return cls(np.empty((0, 3), dtype=np.int64), np.empty(0, dtype=bool))


@dataclass(frozen=True, eq=False)
class Split:
    train: Dataset
    validation: Holdout
    test: Holdout
    seed: int
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Split)
                and np.array_equal(self.train.triples, other.train.triples)
                and self.validation == other.validation and self.test == other.test
                and self.seed == other.seed)


def _check_ratios(ratios) -> tuple[float, float, float]:
    if len(ratios) != 3:
        raise RatioError("ratios must have three entries (train, validation, test)")
    tr, va, te = (float(x) for x in ratios)
    if min(tr, va, te) < 0 or tr <= 0:
        raise RatioError(f"ratios must be non-negative with a positive train share, got {ratios}")
    if abs(tr + va + te - 1.0) > 1e-9:
        raise RatioError(f"ratios must sum to 1, got {tr + va + te}")
    return tr, va, te


def split_dataset(dataset: Dataset, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> Split:
    """Seeded random split of the distinct triples.

    Holdout triples keep the full-dataset indices; a triple is flagged cold if
    its user or its item has no triple in the train part.
    """
    tr, va, _ = _check_ratios(ratios)
    triples = dataset.triples
    n = len(triples)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * tr))
    n_trval = max(n_train, int(round(n * (tr + va))))
    train_t = triples[np.sort(perm[:n_train])]
    val_t = triples[np.sort(perm[n_train:n_trval])]
    test_t = triples[np.sort(perm[n_trval:])]

    train = Dataset(dataset.n_users, dataset.n_items, dataset.n_intervals, train_t,
                    dataset.user_vocab, dataset.item_vocab, dataset.grid)
    seen_u = np.zeros(dataset.n_users, dtype=bool)
    seen_i = np.zeros(dataset.n_items, dtype=bool)
    seen_u[train_t[:, 0]] = True
    seen_i[train_t[:, 1]] = True

    def holdout(t):
        return Holdout(t, ~(seen_u[t[:, 0]] & seen_i[t[:, 1]]))

    return Split(train, holdout(val_t), holdout(test_t), seed, (float(ratios[0]), float(ratios[1]), float(ratios[2])))


# ---------------------------------------------------------------------------
# on-disk split directory
# ---------------------------------------------------------------------------

SPLIT_FILES = ("train.tsv", "validation.tsv", "test.tsv")


def manifest_dict(split: Split, **extra) -> dict[str, str]:
    ds = split.train
    grid = ds.grid
    info = {
        "P": ds.n_users,
        "Q": ds.n_items,
        "R": ds.n_intervals,
        "n_train": len(ds.triples),
        "n_validation": len(split.validation),
        "n_test": len(split.test),
        "n_validation_cold": int(split.validation.cold.sum()),
        "n_test_cold": int(split.test.cold.sum()),
        "origin": grid.origin if grid else 0,
        "interval_seconds": grid.interval_seconds if grid else WEEK_SECONDS,
        "seed": split.seed,
        "ratios": ",".join(repr(r) for r in split.ratios),
        "vocab_sha256": ds.vocab_digest().hex(),
    }
    info.update(extra)
    return {k: str(v) for k, v in info.items()}


def write_manifest(info: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in info.items():
            fh.write(f"{key}={value}\n")


def read_manifest(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _write_vocab(vocab: Vocab, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for raw in vocab.ids:
            fh.write(raw + "\n")


def _read_vocab(path) -> Vocab:
    with open(path, encoding="utf-8") as fh:
        return Vocab(line.rstrip("\n") for line in fh if line.rstrip("\n"))


def save_split(split: Split, directory, **manifest_extra) -> None:
    """Write vocabularies, the three triple files and ``manifest.txt``."""
    os.makedirs(directory, exist_ok=True)
    ds = split.train
    _write_vocab(ds.user_vocab, os.path.join(directory, "users.txt"))
    _write_vocab(ds.item_vocab, os.path.join(directory, "items.txt"))
    parts = (
        (ds.triples, np.zeros(len(ds.triples), dtype=bool)),
        (split.validation.triples, split.validation.cold),
        (split.test.triples, split.test.cold),
    )
    for name, (triples, cold) in zip(SPLIT_FILES, parts):
        with open(os.path.join(directory, name), "w", encoding="utf-8", newline="\n") as fh:
            for (p, q, r), c in zip(triples, cold):
                fh.write(f"{ds.user_vocab.raw(p)}\t{ds.item_vocab.raw(q)}\t{r}\t{int(c)}\n")
    write_manifest(manifest_dict(split, **manifest_extra), os.path.join(directory, "manifest.txt"))


def load_split(directory) -> Split:
    manifest = read_manifest(os.path.join(directory, "manifest.txt"))
    users = _read_vocab(os.path.join(directory, "users.txt"))
    items = _read_vocab(os.path.join(directory, "items.txt"))
    R = int(manifest["R"])
    grid = TimeGrid(int(manifest["origin"]), int(manifest["interval_seconds"]), R)

    def read(name):
        rows, cold = [], []
        with open(os.path.join(directory, name), encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 4:
                    raise MalformedLine(line_no, f"{name}: expected 4 fields")
                u, i, r, c = parts
                rows.append((users.index(u), items.index(i), int(r)))
                cold.append(c == "1")
        return np.array(rows, dtype=np.int64).reshape(-1, 3), np.array(cold, dtype=bool)

    train_t, _ = read(SPLIT_FILES[0])
    train = Dataset(len(users), len(items), R, train_t, users, items, grid)
    ratios = tuple(float(x) for x in manifest.get("ratios", "0.8,0.1,0.1").split(","))
    return Split(train, Holdout(*read(SPLIT_FILES[1])), Holdout(*read(SPLIT_FILES[2])),
                 int(manifest.get("seed", 0)), ratios)
