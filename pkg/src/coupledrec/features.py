"""Per-item dense side features (one column per item).

Binary feature file layout (little-endian)::

    b"TRECFEA1" | u32 K | u32 Q_file | Q_file x (u16 id_len | id utf-8 | K x float32)

A TSV fallback holds ``raw_id`` followed by ``K`` decimal floats per line.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import HeaderMismatch, MissingItem, NonFiniteEntry

MAGIC = b"TRECFEA1"
NORMALIZE_MODES = ("none", "per_dim_standardize", "unit_l2_column")


@dataclass(eq=False)
class FeatureMatrix:
    """``K x Q`` feature matrix; column ``q`` belongs to item ``q``."""

    data: np.ndarray
    block_dims: list[tuple[str, int]] = field(default_factory=list)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("feature data must be a K x Q matrix")
        if not np.isfinite(data).all():
            raise NonFiniteEntry("feature matrix contains NaN or infinite entries")
        self.data = data
        if not self.block_dims:
            self.block_dims = [("features", data.shape[0])]
        self.block_dims = [(str(n), int(d)) for n, d in self.block_dims]
        if sum(d for _, d in self.block_dims) != data.shape[0]:
            raise ValueError("block lengths must sum to the feature dimension")

    @property
    def K(self) -> int:
        return self.data.shape[0]

    @property
    def Q(self) -> int:
        return self.data.shape[1]

    def block(self, name: str) -> np.ndarray:
        start = 0
        for n, d in self.block_dims:
            if n == name:
                return self.data[start:start + d]
            start += d
        raise KeyError(name)

    def select_blocks(self, names) -> "FeatureMatrix":
        names = list(names)
        rows = [self.block(n) for n in names]
        dims = [(n, len(r)) for n, r in zip(names, rows)]
        return FeatureMatrix(np.vstack(rows), dims)

    def copy(self) -> "FeatureMatrix":
        return FeatureMatrix(self.data.copy(), list(self.block_dims))

    def __eq__(self, other) -> bool:
        return (isinstance(other, FeatureMatrix) and self.block_dims == other.block_dims
                and np.array_equal(self.data, other.data))


def concat_blocks(blocks: dict[str, np.ndarray]) -> FeatureMatrix:
    """Stack named ``k_i x Q`` blocks (e.g. CNN then aesthetic) into one matrix."""
    names = list(blocks)
    return FeatureMatrix(np.vstack([blocks[n] for n in names]),
                         [(n, np.asarray(blocks[n]).shape[0]) for n in names])


def _ordered_ids(item_vocab) -> list[str]:
    return list(item_vocab.ids) if hasattr(item_vocab, "ids") else list(item_vocab)


def _assemble(rows: dict[str, np.ndarray], K: int, item_vocab, block_dims) -> FeatureMatrix:
    ids = _ordered_ids(item_vocab)
    data = np.empty((K, len(ids)), dtype=np.float64)
    for q, raw in enumerate(ids):
        vec = rows.get(raw)
        if vec is None:
            raise MissingItem(raw)
        data[:, q] = vec
    if not np.isfinite(data).all():
        raise NonFiniteEntry("feature file contains NaN or infinite entries")
    return FeatureMatrix(data, block_dims or [])


def load_features(stream, item_vocab, block_dims=None) -> FeatureMatrix:
    """Read the binary feature format, reordering columns to ``item_vocab``.

    Extra items in the file are ignored; every vocabulary item must be present.
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    header = stream.read(16)
    if len(header) < 16 or header[:8] != MAGIC:
        raise HeaderMismatch("not a feature file (bad magic)")
    K, n = struct.unpack("<II", header[8:])
    rec = struct.Struct(f"<{K}f")
    rows: dict[str, np.ndarray] = {}
    for _ in range(n):
        raw_len = stream.read(2)
        if len(raw_len) < 2:
            raise HeaderMismatch(f"file truncated: header announces {n} records")
        (id_len,) = struct.unpack("<H", raw_len)
        raw_id = stream.read(id_len).decode("utf-8")
        buf = stream.read(rec.size)
        if len(buf) < rec.size:
            raise HeaderMismatch(f"file truncated inside record {raw_id!r}")
        rows[raw_id] = np.frombuffer(buf, dtype="<f4").astype(np.float64)
    if stream.read(1):
        raise HeaderMismatch(f"trailing bytes after {n} records")
    if block_dims and sum(d for _, d in block_dims) != K:
        raise HeaderMismatch(f"block dims sum to {sum(d for _, d in block_dims)}, file has K={K}")
    return _assemble(rows, K, item_vocab, block_dims)


def save_features(F: FeatureMatrix, stream, item_ids) -> None:
    """Write ``F`` in the binary format; column ``q`` is stored under ``item_ids[q]``."""
    ids = _ordered_ids(item_ids)
    if len(ids) != F.Q:
        raise ValueError("need one raw id per feature column")
    stream.write(MAGIC + struct.pack("<II", F.K, F.Q))
    cols = np.ascontiguousarray(F.data.T, dtype="<f4")
    for raw, col in zip(ids, cols):
        enc = raw.encode("utf-8")
        stream.write(struct.pack("<H", len(enc)) + enc + col.tobytes())


def read_features_file(path, item_vocab, block_dims=None) -> FeatureMatrix:
    """Load by path; ``.tsv``/``.txt`` files go through the text loader."""
    if str(path).endswith((".tsv", ".txt")):
        with open(path, encoding="utf-8") as fh:
            return load_features_tsv(fh, item_vocab, block_dims)
    with open(path, "rb") as fh:
        return load_features(fh, item_vocab, block_dims)


def write_features_file(F: FeatureMatrix, path, item_ids) -> None:
    with open(path, "wb") as fh:
        save_features(F, fh, item_ids)


def load_features_tsv(stream, item_vocab, block_dims=None) -> FeatureMatrix:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows: dict[str, np.ndarray] = {}
    K = None
    for line_no, line in enumerate(stream, start=1):
        line = line.rstrip("\r\n")
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
        if K is None:
            K = len(vec)
        elif len(vec) != K:
            raise HeaderMismatch(f"line {line_no}: expected {K} values, got {len(vec)}")
        rows[parts[0]] = vec
    if K is None:
        raise HeaderMismatch("empty feature file")
    return _assemble(rows, K, item_vocab, block_dims)


def normalize_features(F: FeatureMatrix, mode: str = "per_dim_standardize") -> FeatureMatrix:
    """Return a normalized copy of ``F``.

    ``per_dim_standardize`` gives every feature row mean 0 and population
    variance 1 (constant rows become zero); ``unit_l2_column`` scales every
    nonzero item column to unit Euclidean norm.
    """
    if mode not in NORMALIZE_MODES:
        raise ValueError(f"unknown normalization mode {mode!r}")
    X = F.data.copy()
    if mode == "per_dim_standardize":
        # exact test: a constant row can still get a rounding-size std
        const = np.ptp(X, axis=1) == 0
        # standardizing is scale-free; rescaling first keeps tiny rows from underflowing
        peak = np.abs(X).max(axis=1, keepdims=True)
        X = X / np.where(peak > 0, peak, 1.0)
        mean = X.mean(axis=1, keepdims=True)
        std = X.std(axis=1, keepdims=True)
        X = (X - mean) / np.where(const[:, None], 1.0, std)
        X[const] = 0.0
    elif mode == "unit_l2_column":
        X = _unit_l2_columns(X)
    return FeatureMatrix(X, list(F.block_dims))


def _unit_l2_columns(X: np.ndarray) -> np.ndarray:
    # divide by the column peak first so squares of tiny entries do not underflow
    peak = np.abs(X).max(axis=0)
    nz = peak > 0
    X = X.copy()
    X[:, nz] /= peak[nz]
    X[:, nz] /= np.linalg.norm(X[:, nz], axis=0)
    return X


class FeatureNormalizer(TransformerMixin, BaseEstimator):
    """Learn normalization statistics on one item set, apply to another.

    Works on ``FeatureMatrix`` objects or raw ``K x Q`` arrays.
    """

    def __init__(self, mode="per_dim_standardize"):
        self.mode = mode

    def fit(self, X, y=None):
        if self.mode not in NORMALIZE_MODES:
            raise ValueError(f"unknown normalization mode {self.mode!r}")
        data = X.data if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=float)
        self.mean_ = data.mean(axis=1, keepdims=True)
        self.scale_ = np.where(np.ptp(data, axis=1, keepdims=True) == 0, 0.0,
                               data.std(axis=1, keepdims=True))
        return self

    def transform(self, X):
        if not hasattr(self, "mean_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("FeatureNormalizer is not fitted")
        is_fm = isinstance(X, FeatureMatrix)
        data = (X.data if is_fm else np.asarray(X, dtype=float)).copy()
        if self.mode == "per_dim_standardize":
            const = (self.scale_ == 0).ravel()
            data = (data - self.mean_) / np.where(self.scale_ == 0, 1.0, self.scale_)
            data[const] = 0.0
        elif self.mode == "unit_l2_column":
            data = _unit_l2_columns(data)
        return FeatureMatrix(data, list(X.block_dims)) if is_fm else data


@dataclass
class PlantedGroups:
    """Group-structured feature generation: column = centroid + noise * eps."""

    n_groups: int = 4
    noise: float = 0.5
    labels: np.ndarray | None = None


def synth_features(n_items: int, dim: int = 32, planted: PlantedGroups | None = None,
                   seed: int = 0, return_labels: bool = False):
    """Seeded synthetic features.

    Without ``planted`` the entries are i.i.d. standard normal. With it, each
    item gets a style group (uniform at random unless ``planted.labels`` is
    given) and its column is the group centroid plus scaled Gaussian noise.
    """
    if n_items < 1 or dim < 1:
        raise ValueError("n_items and dim must be >= 1")
    rng = np.random.default_rng(seed)
    if planted is None:
        F = FeatureMatrix(rng.standard_normal((dim, n_items)))
        return (F, None) if return_labels else F
    if planted.labels is not None:
        labels = np.asarray(planted.labels, dtype=np.int64)
        if len(labels) != n_items:
            raise ValueError("planted labels must have one entry per item")
        n_groups = max(planted.n_groups, int(labels.max()) + 1)
    else:
        n_groups = planted.n_groups
        labels = rng.integers(0, n_groups, size=n_items)
    centroids = rng.standard_normal((dim, n_groups))
    data = centroids[:, labels] + planted.noise * rng.standard_normal((dim, n_items))
    F = FeatureMatrix(data)
    return (F, labels) if return_labels else F
