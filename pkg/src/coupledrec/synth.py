"""Planted-structure synthetic purchase corpus.

Users and items each belong to one of ``G`` latent style groups. Purchases
are much more likely on matching groups, item activity is modulated over the
intervals (each group peaks at its own phase), and item features are drawn
around group centroids, so features carry information about both taste and
season.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import WEEK_SECONDS, Interaction
from .features import FeatureMatrix, PlantedGroups, synth_features


@dataclass
class SyntheticCorpus:
    interactions: list[Interaction]
    features: FeatureMatrix          # columns follow ``item_ids``
    item_ids: list[str]
    user_groups: np.ndarray
    item_groups: np.ndarray


def make_planted_corpus(n_users: int = 200, n_items: int = 300, n_intervals: int = 8,
                        n_groups: int = 4, density: float = 0.005, n_features: int = 32,
                        feature_noise: float = 0.5, off_group: float = 0.05,
                        seasonality: float = 2.0, origin: int = 2088 * WEEK_SECONDS,
                        interval_seconds: int = WEEK_SECONDS, seed: int = 0) -> SyntheticCorpus:
    """Sample a corpus with about ``P * Q * R * density`` purchases.

    ``off_group`` is the purchase-rate multiplier for non-matching user/item
    groups; ``seasonality`` is the amplitude of the per-group activity cycle.
    ``origin`` must lie on an interval boundary for interval ``r`` to map back
    to index ``r`` after ingestion.
    """
    if min(n_users, n_items, n_intervals, n_groups) < 1:
        raise ValueError("sizes must be positive")
    if not 0 < density <= 1:
        raise ValueError("density must be in (0, 1]")
    if origin % interval_seconds:
        raise ValueError("origin must be a multiple of interval_seconds")
    rng = np.random.default_rng(seed)
    user_groups = rng.integers(0, n_groups, size=n_users)
    item_groups = rng.integers(0, n_groups, size=n_items)

    match = np.where(user_groups[:, None] == item_groups[None, :], 1.0, off_group)
    popularity = rng.lognormal(0.0, 0.5, size=n_items)
    group_phase = rng.uniform(0, n_intervals, size=n_groups)
    phase = group_phase[item_groups] + rng.normal(0, 0.5, size=n_items)
    r = np.arange(n_intervals)
    season = np.exp(seasonality * np.cos(2 * np.pi * (r[None, :] - phase[:, None]) / n_intervals))

    weight = match[:, :, None] * (popularity[:, None] * season)[None, :, :]
    prob = np.minimum(weight * (n_users * n_items * n_intervals * density / weight.sum()), 1.0)
    hits = np.argwhere(rng.random(prob.shape) < prob)

    offsets = rng.integers(0, interval_seconds, size=len(hits))
    ts = origin + hits[:, 2] * interval_seconds + offsets
    order = np.lexsort((hits[:, 1], hits[:, 0], ts))
    interactions = [Interaction(f"u{p:04d}", f"i{q:04d}", int(t))
                    for (p, q, _), t in zip(hits[order], ts[order])]

    feat_seed = int(rng.integers(0, 2 ** 31))
    features = synth_features(n_items, n_features,
                              PlantedGroups(n_groups, feature_noise, labels=item_groups), seed=feat_seed)
    return SyntheticCorpus(interactions, features, [f"i{q:04d}" for q in range(n_items)],
                           user_groups, item_groups)


def align_features(corpus: SyntheticCorpus, item_vocab) -> FeatureMatrix:
    """Reorder the corpus features to a dataset's item vocabulary."""
    pos = {raw: i for i, raw in enumerate(corpus.item_ids)}
    cols = [pos[raw] for raw in item_vocab.ids]
    return FeatureMatrix(corpus.features.data[:, cols], list(corpus.features.block_dims))


# Hyperparameters that train every variant stably on the default planted
# corpus. The per-touch decay on T and N is applied about 60 times per batch
# (only R columns), so their coefficients stay small; CP's three-way product
# collapses under the shared setting and gets its own.
_PLANTED_COMMON = dict(K1=10, K2=10, init_scale=0.5, eta=0.05, lambda1=0.1, lambda2=0.1,
                       lambda3=0.1, lambda4=0.1, lambda5=0.01, lambda6=0.1, lambda7=0.1,
                       lambda8=0.01, mse_eta=0.01, mse_zeros_per_positive=5)
_PLANTED_OVERRIDES = {"cp": dict(lambda3=0.01, lambda4=0.01, lambda5=0.01)}


def planted_hyperparams(variant: str) -> dict:
    """Training settings for ``variant`` on :func:`make_planted_corpus` data."""
    return {**_PLANTED_COMMON, **_PLANTED_OVERRIDES.get(variant, {})}
