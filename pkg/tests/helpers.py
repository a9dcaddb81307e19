"""Builders for small datasets, parameters and pair sets."""
import numpy as np

from coupledrec.data import Dataset, build_dataset, build_time_grid, split_dataset
from coupledrec.features import normalize_features
from coupledrec.models import DcfaParams
from coupledrec.synth import align_features, make_planted_corpus


def make_dataset(triples, P=None, Q=None, R=None) -> Dataset:
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    P = P if P is not None else int(t[:, 0].max()) + 1
    Q = Q if Q is not None else int(t[:, 1].max()) + 1
    R = R if R is not None else int(t[:, 2].max()) + 1
    return Dataset(P, Q, R, t)


def random_dataset(rng, P, Q, R, density=0.3) -> Dataset:
    mask = rng.random((P, Q, R)) < density
    mask[0, 0, 0] = True
    return Dataset(P, Q, R, np.argwhere(mask))


def random_params(rng, P, Q, R, K1=3, K2=3, K=0, scale=0.5) -> DcfaParams:
    kw = dict(U=rng.normal(0, scale, (K1, P)), V=rng.normal(0, scale, (K1, Q)),
              T=rng.normal(0, scale, (K2, R)), W=rng.normal(0, scale, (K2, Q)))
    if K:
        kw.update(M=rng.normal(0, scale, (K, P)), N=rng.normal(0, scale, (K, R)))
    return DcfaParams(**kw)


def random_pairs(rng, dataset, n):
    """Valid ``(p, q, q', r)`` rows: q observed for (p, r), q' outside Q+_p | Q+_r."""
    rows = []
    while len(rows) < n:
        p, q, r = dataset.triples[rng.integers(len(dataset.triples))]
        excluded = dataset.per_user_items[p] | dataset.per_time_items[r]
        allowed = [x for x in range(dataset.n_items) if x not in excluded]
        if allowed:
            rows.append((int(p), int(q), int(rng.choice(allowed)), int(r)))
    return np.array(rows, dtype=np.int64)


def planted_split(seed=0, **corpus_kw):
    """Planted corpus, its dataset and split, and unit-norm aligned features."""
    corpus = make_planted_corpus(seed=seed, **corpus_kw)
    ds = build_dataset(corpus.interactions, build_time_grid(corpus.interactions))
    F = normalize_features(align_features(corpus, ds.item_vocab), "unit_l2_column")
    return corpus, ds, split_dataset(ds, (0.8, 0.1, 0.1), seed), F
