"""Scoring functions for the coupled tensor models and the baselines.

Factor matrices are stored column-per-entity: ``U`` is ``K1 x P`` and
``U[:, p]`` is user ``p``'s latent vector, matching the item feature matrix
layout (``F[:, q]``).

DCF score::

    A_hat[p, q, r] = (U[:, p] . V[:, q]) * (T[:, r] . W[:, q])

DCFA adds feature-preference terms to both factors::

    A_hat[p, q, r] = (U[:, p] . V[:, q] + M[:, p] . F[:, q]) * (T[:, r] . W[:, q] + N[:, r] . F[:, q])

The two factors are the coupled user-item and time-item predictions
``B_hat[p, q]`` and ``C_hat[r, q]``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FeatureDimMismatch, HeaderMismatch, IndexOutOfRange, VariantMismatch

# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

PARAM_NAMES = ("U", "V", "T", "W", "M", "N")


@dataclass(eq=False)
class DcfaParams:
    """Factor matrices of DCF (``M``/``N`` absent) or DCFA."""

    U: np.ndarray
    V: np.ndarray
    T: np.ndarray
    W: np.ndarray
    M: np.ndarray | None = None
    N: np.ndarray | None = None

    def __post_init__(self):
        for name in PARAM_NAMES:
            arr = getattr(self, name)
            if arr is not None:
                setattr(self, name, np.asarray(arr, dtype=np.float64))
        if (self.M is None) != (self.N is None):
            raise ValueError("M and N must both be present or both absent")
        K1, P = self.U.shape
        K2, R = self.T.shape
        Q = self.V.shape[1]
        if self.V.shape != (K1, Q) or self.W.shape != (K2, Q):
            raise ValueError("inconsistent factor matrix shapes")
        if self.M is not None:
            K = self.M.shape[0]
            if self.M.shape != (K, P) or self.N.shape != (K, R):
                raise ValueError("inconsistent feature-preference matrix shapes")

    @property
    def has_features(self) -> bool:
        return self.M is not None

    @property
    def variant(self) -> str:
        return "dcfa" if self.has_features else "dcf"

    @property
    def K1(self) -> int:
        return self.U.shape[0]

    @property
    def K2(self) -> int:
        return self.T.shape[0]

    @property
    def K(self) -> int:
        return self.M.shape[0] if self.M is not None else 0

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.U.shape[1], self.V.shape[1], self.T.shape[1]

    def names(self) -> tuple[str, ...]:
        return PARAM_NAMES if self.has_features else PARAM_NAMES[:4]

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.names()}

    def copy(self) -> "DcfaParams":
        return DcfaParams(**{n: a.copy() for n, a in self.arrays().items()})

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays().values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, DcfaParams) or other.names() != self.names():
            return False
        return all(np.array_equal(a, getattr(other, n)) for n, a in self.arrays().items())


BASELINE_VARIANTS = ("rand", "mp", "mf", "vbpr", "cp", "pitf", "tucker", "cmtf")
PITF_NAMES = ("UV", "VU", "UT", "TU", "VT", "TV")


@dataclass(eq=False)
class BaselineParams:
    """Parameters of a baseline scorer.

    ``factors`` holds the variant's matrices: ``mf`` U, V; ``vbpr`` U, V, M;
    ``cp``/``cmtf`` U, V, T; ``pitf`` UV, VU, UT, TU, VT, TV (``UV`` is the
    user matrix paired with items, etc.); ``tucker`` core, U, V, T.
    """

    variant: str
    factors: dict[str, np.ndarray] = field(default_factory=dict)
    popularity: np.ndarray | None = None
    seed: int = 0
    shape: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        if self.variant not in BASELINE_VARIANTS:
            raise VariantMismatch(f"unknown baseline variant {self.variant!r}")
        self.factors = {k: np.asarray(v, dtype=np.float64) for k, v in self.factors.items()}
        if self.popularity is not None:
            self.popularity = np.asarray(self.popularity, dtype=np.float64)
        required = _BASELINE_REQUIRED[self.variant]
        missing = [n for n in required if n not in self.factors]
        if missing:
            raise VariantMismatch(f"{self.variant} parameters missing {missing}")
        if self.variant == "mp" and self.popularity is None:
            raise VariantMismatch("mp needs popularity counts")

    def copy(self) -> "BaselineParams":
        return BaselineParams(self.variant, {k: v.copy() for k, v in self.factors.items()},
                              None if self.popularity is None else self.popularity.copy(),
                              self.seed, self.shape)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BaselineParams) or other.variant != self.variant:
            return False
        if self.factors.keys() != other.factors.keys():
            return False
        same_pop = (self.popularity is None and other.popularity is None) or (
            self.popularity is not None and other.popularity is not None
            and np.array_equal(self.popularity, other.popularity))
        return same_pop and self.seed == other.seed and all(
            np.array_equal(v, other.factors[k]) for k, v in self.factors.items())


_BASELINE_REQUIRED = {
    "rand": (),
    "mp": (),
    "mf": ("U", "V"),
    "vbpr": ("U", "V", "M"),
    "cp": ("U", "V", "T"),
    "cmtf": ("U", "V", "T"),
    "pitf": PITF_NAMES,
    "tucker": ("core", "U", "V", "T"),
}


# ---------------------------------------------------------------------------
# single-entry predictors
# ---------------------------------------------------------------------------

def _check_index(name: str, idx, size: int) -> int:
    if isinstance(idx, (bool, np.bool_)) or not isinstance(idx, (int, np.integer)):
        raise IndexOutOfRange(f"{name} index must be an integer, got {idx!r}")
    if not 0 <= idx < size:
        raise IndexOutOfRange(f"{name} index {idx} out of range [0, {size})")
    return int(idx)


def feature_array(F):
    """``K x Q`` array behind a ``FeatureMatrix`` or array-like (``None`` passes through)."""
    if F is None:
        return None
    data = F.data if hasattr(F, "block_dims") else F
    return np.asarray(data, dtype=np.float64)


def _check_features(params: DcfaParams, F) -> np.ndarray:
    if not params.has_features:
        raise VariantMismatch("parameters have no feature-preference matrices")
    if F is None:
        raise VariantMismatch("feature matrix required")
    data = feature_array(F)
    if data.shape[0] != params.K:
        raise FeatureDimMismatch(f"feature dim {data.shape[0]} != preference dim {params.K}")
    if data.shape[1] != params.V.shape[1]:
        raise FeatureDimMismatch(f"feature matrix has {data.shape[1]} items, model has {params.V.shape[1]}")
    return data


def predict_dcf(params: DcfaParams, p, q, r) -> float:
    P, Q, R = params.shape
    p, q, r = _check_index("user", p, P), _check_index("item", q, Q), _check_index("interval", r, R)
    return float((params.U[:, p] @ params.V[:, q]) * (params.T[:, r] @ params.W[:, q]))


def predict_dcfa(params: DcfaParams, F, p, q, r) -> float:
    data = _check_features(params, F)
    P, Q, R = params.shape
    p, q, r = _check_index("user", p, P), _check_index("item", q, Q), _check_index("interval", r, R)
    s1 = params.U[:, p] @ params.V[:, q] + params.M[:, p] @ data[:, q]
    s2 = params.T[:, r] @ params.W[:, q] + params.N[:, r] @ data[:, q]
    return float(s1 * s2)


def predict_B(params: DcfaParams, F, p, q) -> float:
    """Coupled user-item prediction; feature term used when ``params`` has ``M``."""
    P, Q, _ = params.shape
    p, q = _check_index("user", p, P), _check_index("item", q, Q)
    val = params.U[:, p] @ params.V[:, q]
    if params.has_features:
        val += params.M[:, p] @ _check_features(params, F)[:, q]
    return float(val)


def predict_C(params: DcfaParams, F, r, q) -> float:
    """Coupled time-item prediction; feature term used when ``params`` has ``N``."""
    _, Q, R = params.shape
    r, q = _check_index("interval", r, R), _check_index("item", q, Q)
    val = params.T[:, r] @ params.W[:, q]
    if params.has_features:
        val += params.N[:, r] @ _check_features(params, F)[:, q]
    return float(val)


def predict(params: DcfaParams, F, p, q, r) -> float:
    return predict_dcfa(params, F, p, q, r) if params.has_features else predict_dcf(params, p, q, r)


# ---------------------------------------------------------------------------
# vectorized scoring
# ---------------------------------------------------------------------------

def coupled_scores(params: DcfaParams, F, p, q, r):
    """Vectorized ``(B_hat[p, q], C_hat[r, q])`` for index arrays."""
    b = np.einsum("kn,kn->n", params.U[:, p], params.V[:, q])
    c = np.einsum("kn,kn->n", params.T[:, r], params.W[:, q])
    if params.has_features:
        data = _check_features(params, F)
        fq = data[:, q]
        b = b + np.einsum("kn,kn->n", params.M[:, p], fq)
        c = c + np.einsum("kn,kn->n", params.N[:, r], fq)
    return b, c


def score_triples(params: DcfaParams, F, triples) -> np.ndarray:
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    b, c = coupled_scores(params, F, t[:, 0], t[:, 1], t[:, 2])
    return b * c


def score_items(params: DcfaParams, F, p: int, r: int) -> np.ndarray:
    """Scores of every item for the ``(p, r)`` context."""
    s1 = params.U[:, p] @ params.V
    s2 = params.T[:, r] @ params.W
    if params.has_features:
        data = _check_features(params, F)
        s1 = s1 + params.M[:, p] @ data
        s2 = s2 + params.N[:, r] @ data
    return s1 * s2


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
        x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
        x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
        return x ^ (x >> np.uint64(31))


def hash_scores(seed: int, p, q, r) -> np.ndarray:
    """Deterministic pseudorandom scores in ``[0, 1)`` keyed by ``(seed, p, q, r)``."""
    h = _splitmix64(np.full(np.shape(q), seed & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64))
    for part in (p, q, r):
        h = _splitmix64(h ^ np.asarray(part, dtype=np.int64).astype(np.uint64))
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _baseline_shape(bp: BaselineParams) -> tuple[int, int, int]:
    f = bp.factors
    v = bp.variant
    if v in ("mf", "vbpr"):
        return f["U"].shape[1], f["V"].shape[1], bp.shape[2] or 1
    if v in ("cp", "cmtf", "tucker"):
        return f["U"].shape[1], f["V"].shape[1], f["T"].shape[1]
    if v == "pitf":
        return f["UV"].shape[1], f["VU"].shape[1], f["TU"].shape[1]
    if v == "mp":
        return bp.shape[0] or 1, len(bp.popularity), bp.shape[2] or 1
    return bp.shape


def predict_baseline(bp: BaselineParams, F, p, q, r) -> float:
    P, Q, R = _baseline_shape(bp)
    v = bp.variant
    if v == "rand":
        # any non-negative index is accepted when no shape is recorded
        p, q, r = (_check_index(n, i, s if s else np.iinfo(np.int64).max)
                   for n, i, s in (("user", p, P), ("item", q, Q), ("interval", r, R)))
        return float(hash_scores(bp.seed, p, q, r))
    q = _check_index("item", q, Q)
    if v == "mp":
        return float(bp.popularity[q])
    p = _check_index("user", p, P)
    f = bp.factors
    if v == "mf":
        return float(f["U"][:, p] @ f["V"][:, q])
    if v == "vbpr":
        data = _baseline_features(bp, F)
        return float(f["U"][:, p] @ f["V"][:, q] + f["M"][:, p] @ data[:, q])
    r = _check_index("interval", r, R)
    if v in ("cp", "cmtf"):
        return float(np.sum(f["U"][:, p] * f["V"][:, q] * f["T"][:, r]))
    if v == "pitf":
        return float(f["UV"][:, p] @ f["VU"][:, q] + f["UT"][:, p] @ f["TU"][:, r]
                     + f["VT"][:, q] @ f["TV"][:, r])
    if v == "tucker":
        return float(np.einsum("ijk,i,j,k->", f["core"], f["U"][:, p], f["V"][:, q], f["T"][:, r]))
    raise VariantMismatch(v)


def _baseline_features(bp: BaselineParams, F) -> np.ndarray:
    if F is None:
        raise VariantMismatch(f"{bp.variant} needs a feature matrix")
    data = feature_array(F)
    if data.shape[0] != bp.factors["M"].shape[0]:
        raise FeatureDimMismatch(f"feature dim {data.shape[0]} != {bp.factors['M'].shape[0]}")
    return data


def score_items_baseline(bp: BaselineParams, F, p: int, r: int) -> np.ndarray:
    _, Q, _ = _baseline_shape(bp)
    v = bp.variant
    f = bp.factors
    if v == "rand":
        return hash_scores(bp.seed, p, np.arange(Q), r)
    if v == "mp":
        return bp.popularity.copy()
    if v == "mf":
        return f["U"][:, p] @ f["V"]
    if v == "vbpr":
        return f["U"][:, p] @ f["V"] + f["M"][:, p] @ _baseline_features(bp, F)
    if v in ("cp", "cmtf"):
        return (f["U"][:, p] * f["T"][:, r]) @ f["V"]
    if v == "pitf":
        return (f["UV"][:, p] @ f["VU"] + f["UT"][:, p] @ f["TU"][:, r]
                + f["TV"][:, r] @ f["VT"])
    if v == "tucker":
        return np.einsum("ijk,i,jq,k->q", f["core"], f["U"][:, p], f["V"], f["T"][:, r])
    raise VariantMismatch(v)


# ---------------------------------------------------------------------------
# ranking
# ---------------------------------------------------------------------------

def rank_scores(scores: np.ndarray, n: int, exclude=()) -> list[int]:
    """Indices of the ``n`` largest scores, ties by ascending index."""
    if n < 1:
        raise ValueError("n must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    candidates = np.arange(len(scores))
    if len(exclude):
        keep = np.ones(len(scores), dtype=bool)
        keep[np.fromiter(exclude, dtype=np.int64)] = False
        candidates = candidates[keep]
    order = np.argsort(-scores[candidates], kind="stable")
    return [int(i) for i in candidates[order[:n]]]


def top_n(scorer, dataset, p: int, r: int, n: int, exclude_train: bool = True) -> list[int]:
    """Top-``n`` items for user ``p`` at interval ``r``.

    ``scorer(p, r)`` must return one score per item. With ``exclude_train``
    the user's training items are skipped.
    """
    p = _check_index("user", p, dataset.n_users)
    r = _check_index("interval", r, dataset.n_intervals)
    scores = np.asarray(scorer(p, r), dtype=np.float64)
    if scores.shape != (dataset.n_items,):
        raise ValueError(f"scorer returned shape {scores.shape}, expected ({dataset.n_items},)")
    exclude = dataset.per_user_items[p] if exclude_train else ()
    return rank_scores(scores, n, exclude)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"TRECMDL1"
VARIANT_TAGS = {"dcf": 0, "dcfa": 1, "rand": 2, "mp": 3, "mf": 4, "vbpr": 5,
                "cp": 6, "pitf": 7, "tucker": 8, "cmtf": 9}
_TAG_VARIANTS = {v: k for k, v in VARIANT_TAGS.items()}


def _layout(variant: str, K1: int, K2: int, K: int, P: int, Q: int, R: int):
    """Ordered ``(name, shape)`` list of the matrices stored for ``variant``."""
    if variant == "dcf":
        return [("U", (K1, P)), ("V", (K1, Q)), ("T", (K2, R)), ("W", (K2, Q))]
    if variant == "dcfa":
        return _layout("dcf", K1, K2, K, P, Q, R) + [("M", (K, P)), ("N", (K, R))]
    if variant == "mf":
        return [("U", (K1, P)), ("V", (K1, Q))]
    if variant == "vbpr":
        return [("U", (K1, P)), ("V", (K1, Q)), ("M", (K, P))]
    if variant in ("cp", "cmtf"):
        return [("U", (K1, P)), ("V", (K1, Q)), ("T", (K1, R))]
    if variant == "pitf":
        sizes = {"U": P, "V": Q, "T": R}
        return [(n, (K1, sizes[n[0]])) for n in PITF_NAMES]
    if variant == "tucker":
        return [("core", (K1, K2, K)), ("U", (K1, P)), ("V", (K2, Q)), ("T", (K, R))]
    if variant == "mp":
        return [("popularity", (1, Q))]
    if variant == "rand":
        return [("seed", (1, 1))]
    raise VariantMismatch(variant)


def _checkpoint_dims(params, shape) -> tuple[int, int, int]:
    if isinstance(params, DcfaParams):
        return params.K1, params.K2, params.K
    f = params.factors
    v = params.variant
    if v == "tucker":
        return f["core"].shape
    if v == "pitf":
        return f["UV"].shape[0], 0, 0
    if v in ("mf", "vbpr", "cp", "cmtf"):
        return f["U"].shape[0], 0, f["M"].shape[0] if "M" in f else 0
    return 0, 0, 0


def save_checkpoint(stream, params, shape: tuple[int, int, int], vocab_digest: bytes = b"") -> None:
    """Write ``params`` with the dataset shape ``(P, Q, R)`` and a 32-byte vocabulary digest."""
    variant = params.variant
    K1, K2, K = _checkpoint_dims(params, shape)
    P, Q, R = shape
    digest = (vocab_digest or b"").ljust(32, b"\0")[:32]
    stream.write(CKPT_MAGIC + struct.pack("<B6I", VARIANT_TAGS[variant], K1, K2, K, P, Q, R) + digest)
    for name, shp in _layout(variant, K1, K2, K, P, Q, R):
        if isinstance(params, DcfaParams):
            arr = getattr(params, name)
        elif name == "popularity":
            arr = params.popularity.reshape(1, -1)
        elif name == "seed":
            arr = np.array([[params.seed]], dtype=np.float64)
        else:
            arr = params.factors[name]
        arr = np.asarray(arr, dtype="<f8")
        if arr.shape != shp:
            raise ValueError(f"{variant} matrix {name} has shape {arr.shape}, expected {shp}")
        stream.write(np.ascontiguousarray(arr).tobytes())


@dataclass
class Checkpoint:
    params: object
    shape: tuple[int, int, int]
    vocab_digest: bytes

    @property
    def variant(self) -> str:
        return self.params.variant


def load_checkpoint(stream) -> Checkpoint:
    head = stream.read(8 + 25 + 32)
    if len(head) < 65 or head[:8] != CKPT_MAGIC:
        raise HeaderMismatch("not a model checkpoint (bad magic)")
    tag, K1, K2, K, P, Q, R = struct.unpack("<B6I", head[8:33])
    digest = head[33:65]
    if tag not in _TAG_VARIANTS:
        raise HeaderMismatch(f"unknown variant tag {tag}")
    variant = _TAG_VARIANTS[tag]
    mats = {}
    for name, shp in _layout(variant, K1, K2, K, P, Q, R):
        count = int(np.prod(shp))
        buf = stream.read(8 * count)
        if len(buf) < 8 * count:
            raise HeaderMismatch(f"checkpoint truncated in matrix {name}")
        mats[name] = np.frombuffer(buf, dtype="<f8").reshape(shp).astype(np.float64)
    if stream.read(1):
        raise HeaderMismatch("trailing bytes in checkpoint")
    if variant in ("dcf", "dcfa"):
        params = DcfaParams(**mats)
    elif variant == "mp":
        params = BaselineParams("mp", popularity=mats["popularity"].ravel(), shape=(P, Q, R))
    elif variant == "rand":
        params = BaselineParams("rand", seed=int(mats["seed"][0, 0]), shape=(P, Q, R))
    else:
        params = BaselineParams(variant, mats, shape=(P, Q, R))
    return Checkpoint(params, (P, Q, R), digest)


def write_checkpoint_file(path, params, shape, vocab_digest=b"") -> None:
    with open(path, "wb") as fh:
        save_checkpoint(fh, params, shape, vocab_digest)


def read_checkpoint_file(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return load_checkpoint(fh)
