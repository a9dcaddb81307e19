"""Input validation helpers used by the estimators."""
from __future__ import annotations

import numpy as np

from .data import Dataset, Split
from .exceptions import FeatureDimMismatch, IndexOutOfRange, VariantMismatch
from .features import FeatureMatrix


def check_dataset(X) -> Dataset:
    """Accept a ``Dataset`` or a ``Split`` (its train part)."""
    if isinstance(X, Split):
        X = X.train
    if not isinstance(X, Dataset):
        raise TypeError(f"expected a Dataset or Split, got {type(X).__name__}")
    if len(X) == 0:
        raise ValueError("dataset has no positive triples")
    return X


def check_features(F, n_items: int, required: bool = True) -> np.ndarray | None:
    """Return the ``K x Q`` feature array, validating its item count."""
    if F is None:
        if required:
            raise VariantMismatch("this model needs item features")
        return None
    data = F.data if isinstance(F, FeatureMatrix) else np.asarray(F, dtype=np.float64)
    if data.ndim != 2:
        raise FeatureDimMismatch("features must be a K x Q matrix")
    if data.shape[1] != n_items:
        raise FeatureDimMismatch(f"features cover {data.shape[1]} items, dataset has {n_items}")
    if not np.isfinite(data).all():
        raise ValueError("features contain non-finite values")
    return data


def check_triples(X, shape) -> np.ndarray:
    """Validate an ``(n, 3)`` array of ``(user, item, interval)`` indices."""
    arr = np.asarray(X)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array of index triples, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError("triple indices must be integers")
    arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or (arr.max(axis=0) >= np.asarray(shape)).any()):
        raise IndexOutOfRange(f"triple index out of range for shape {tuple(shape)}")
    return arr
