"""scikit-learn style recommenders.

Every estimator is fit on a :class:`~coupledrec.data.Dataset` (or a
:class:`~coupledrec.data.Split`, whose train part is used) and exposes

* ``score_items(user, interval)``: one score per item,
* ``predict(X)``: scores of an ``(n, 3)`` array of ``(user, item, interval)`` triples,
* ``recommend(user, interval, n)``: top-n item indices,
* ``evaluate(holdout)``: a :class:`~coupledrec.evaluation.MetricsReport`.

Hyperparameters are constructor arguments, so ``get_params``/``set_params``
and ``sklearn.base.clone`` work as usual.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import models, training
from .evaluation import DEFAULT_CUTOFFS, evaluate_model
from .models import BaselineParams, DcfaParams
from .training import TrainConfig
from .validation import check_dataset, check_features, check_triples


class BaseRecommender(BaseEstimator):
    """Shared scoring/ranking surface; subclasses implement ``fit``."""

    uses_features = False

    def _config(self) -> TrainConfig:
        names = TrainConfig.field_names()
        params = {k: v for k, v in self.get_params(deep=False).items() if k in names}
        if "random_state" in self.get_params(deep=False):
            params["seed"] = self.random_state
        return TrainConfig(**params)

    def _set_fit_state(self, dataset, features):
        self.train_ = dataset
        self.features_ = check_features(features, dataset.n_items, required=self.uses_features)
        self.shape_ = (dataset.n_users, dataset.n_items, dataset.n_intervals)

    def _score_items(self, p, r):  # pragma: no cover - abstract
        raise NotImplementedError

    def score_items(self, user: int, interval: int) -> np.ndarray:
        check_is_fitted(self, "params_")
        P, _, R = self.shape_
        models._check_index("user", user, P)
        models._check_index("interval", interval, R)
        return self._score_items(int(user), int(interval))

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        triples = check_triples(X, self.shape_)
        return np.array([self._score_items(int(p), int(r))[q] for p, q, r in triples], dtype=np.float64)

    def scorer(self):
        """``(p, r) -> scores`` callable for :func:`~coupledrec.evaluation.evaluate_model`."""
        check_is_fitted(self, "params_")
        return self._score_items

    def recommend(self, user: int, interval: int, n: int = 10, exclude_train: bool = True) -> list[int]:
        check_is_fitted(self, "params_")
        return models.top_n(self._score_items, self.train_, user, interval, n, exclude_train)

    def evaluate(self, holdout, cutoffs=DEFAULT_CUTOFFS, exclude_train=True, include_cold=False):
        check_is_fitted(self, "params_")
        return evaluate_model(self._score_items, self.train_, holdout, cutoffs, exclude_train, include_cold)

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        models.write_checkpoint_file(path, self.params_, self.shape_, self.train_.vocab_digest())


class DCFARecommender(BaseRecommender):
    """Coupled product-form tensor model with item features, trained by mini-batch BPR.

    Scores ``(U_p.V_q + M_p.F_q) * (T_r.W_q + N_r.F_q)``. ``lambda1`` and
    ``lambda2`` weight the coupled user-item and time-item ranking terms,
    ``lambda3``..``lambda8`` regularize ``U, V, T, W, M, N``.
    """

    uses_features = True

    def __init__(self, K1=10, K2=10, lambda1=0.1, lambda2=0.1, lambda3=0.3, lambda4=0.3,
                 lambda5=0.5, lambda6=0.2, lambda7=0.5, lambda8=0.5, eta=0.05, batch_size=100,
                 negatives_per_positive=5, iter_max=200, tol=1e-5, patience=3, init_scale=0.1,
                 eval_cutoff=10, eval_every=1, eval_sample=None, random_state=0):
        self.K1 = K1
        self.K2 = K2
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.lambda4 = lambda4
        self.lambda5 = lambda5
        self.lambda6 = lambda6
        self.lambda7 = lambda7
        self.lambda8 = lambda8
        self.eta = eta
        self.batch_size = batch_size
        self.negatives_per_positive = negatives_per_positive
        self.iter_max = iter_max
        self.tol = tol
        self.patience = patience
        self.init_scale = init_scale
        self.eval_cutoff = eval_cutoff
        self.eval_every = eval_every
        self.eval_sample = eval_sample
        self.random_state = random_state

    def fit(self, X, features=None, validation=None):
        dataset = check_dataset(X)
        self._set_fit_state(dataset, features)
        self.params_, self.trace_ = training.train_bpr(
            dataset, self.features_ if self.uses_features else None, self._config(), validation)
        return self

    def _score_items(self, p, r):
        return models.score_items(self.params_, self.features_ if self.uses_features else None, p, r)


class DCFRecommender(DCFARecommender):
    """Feature-free variant: ``(U_p.V_q) * (T_r.W_q)``."""

    uses_features = False


class FactorBaselineRecommender(BaseRecommender):
    """BPR-trained factor baselines: ``mf``, ``vbpr``, ``cp`` or ``pitf``.

    ``mf`` and ``vbpr`` learn from the user-item slice and ignore the interval;
    ``cp`` and ``pitf`` learn from the full triples. ``K1`` is the shared rank.
    """

    variant = "mf"

    def __init__(self, K1=10, lambda3=0.3, lambda4=0.3, lambda5=0.5, lambda7=0.5, eta=0.05,
                 batch_size=100, negatives_per_positive=5, iter_max=200, tol=1e-5, patience=3,
                 init_scale=0.1, eval_cutoff=10, eval_every=1, eval_sample=None, random_state=0):
        self.K1 = K1
        self.lambda3 = lambda3
        self.lambda4 = lambda4
        self.lambda5 = lambda5
        self.lambda7 = lambda7
        self.eta = eta
        self.batch_size = batch_size
        self.negatives_per_positive = negatives_per_positive
        self.iter_max = iter_max
        self.tol = tol
        self.patience = patience
        self.init_scale = init_scale
        self.eval_cutoff = eval_cutoff
        self.eval_every = eval_every
        self.eval_sample = eval_sample
        self.random_state = random_state

    def fit(self, X, features=None, validation=None):
        dataset = check_dataset(X)
        self.uses_features = self.variant == "vbpr"
        self._set_fit_state(dataset, features)
        self.params_, self.trace_ = training.train_baseline_bpr(
            self.variant, dataset, self.features_, self._config(), validation)
        return self

    def _score_items(self, p, r):
        return models.score_items_baseline(self.params_, self.features_, p, r)


class MFRecommender(FactorBaselineRecommender):
    variant = "mf"


class VBPRRecommender(FactorBaselineRecommender):
    variant = "vbpr"
    uses_features = True


class CPRecommender(FactorBaselineRecommender):
    variant = "cp"


class PITFRecommender(FactorBaselineRecommender):
    variant = "pitf"


class CMTFRecommender(BaseRecommender):
    """CP tensor factorization coupled with the user-item and time-item matrices.

    Trained by gradient descent on the squared reconstruction error of the
    tensor and both matrices (the item factors are shared).
    """

    def __init__(self, K1=10, lambda1=0.1, lambda2=0.1, lambda3=0.3, lambda4=0.3, lambda5=0.5,
                 mse_eta=0.01, mse_zeros_per_positive=5, iter_max=200, tol=1e-5, patience=3,
                 init_scale=0.1, eval_cutoff=10, eval_every=1, eval_sample=None, random_state=0):
        self.K1 = K1
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.lambda4 = lambda4
        self.lambda5 = lambda5
        self.mse_eta = mse_eta
        self.mse_zeros_per_positive = mse_zeros_per_positive
        self.iter_max = iter_max
        self.tol = tol
        self.patience = patience
        self.init_scale = init_scale
        self.eval_cutoff = eval_cutoff
        self.eval_every = eval_every
        self.eval_sample = eval_sample
        self.random_state = random_state

    def fit(self, X, features=None, validation=None):
        dataset = check_dataset(X)
        self._set_fit_state(dataset, None)
        self.params_, self.trace_ = training.train_mse_cmtf(dataset, self._config(), validation, form="cp")
        return self

    def _score_items(self, p, r):
        return models.score_items_baseline(self.params_, None, p, r)


class PopularityRecommender(BaseRecommender):
    """Ranks items by training purchase count, identically for every context."""

    def fit(self, X, features=None, validation=None):
        dataset = check_dataset(X)
        self._set_fit_state(dataset, None)
        self.params_ = training.fit_popularity(dataset)
        self.trace_ = training.TrainTrace()
        return self

    def _score_items(self, p, r):
        return self.params_.popularity.copy()


class RandomRecommender(BaseRecommender):
    """Deterministic pseudorandom scores keyed by ``(random_state, p, q, r)``."""

    def __init__(self, random_state=0):
        self.random_state = random_state

    def fit(self, X, features=None, validation=None):
        dataset = check_dataset(X)
        self._set_fit_state(dataset, None)
        self.params_ = BaselineParams("rand", seed=int(self.random_state), shape=self.shape_)
        self.trace_ = training.TrainTrace()
        return self

    def _score_items(self, p, r):
        return models.hash_scores(self.params_.seed, p, np.arange(self.shape_[1]), r)


ESTIMATORS = {
    "dcf": DCFRecommender,
    "dcfa": DCFARecommender,
    "mf": MFRecommender,
    "vbpr": VBPRRecommender,
    "cp": CPRecommender,
    "pitf": PITFRecommender,
    "cmtf": CMTFRecommender,
    "mp": PopularityRecommender,
    "rand": RandomRecommender,
}

FEATURE_VARIANTS = ("dcfa", "vbpr")


def make_recommender(variant: str, **params) -> BaseRecommender:
    """Build the estimator for ``variant``, ignoring parameters it does not take."""
    try:
        cls = ESTIMATORS[variant]
    except KeyError:
        raise ValueError(f"unknown model variant {variant!r}; choose from {sorted(ESTIMATORS)}") from None
    accepted = cls._get_param_names()
    if "seed" in params and "random_state" in accepted:
        params.setdefault("random_state", params["seed"])
    return cls(**{k: v for k, v in params.items() if k in accepted})


def from_checkpoint(checkpoint, train, features=None) -> BaseRecommender:
    """Wrap loaded checkpoint parameters in a fitted estimator."""
    params = checkpoint.params
    est = ESTIMATORS[checkpoint.variant]()
    est.uses_features = checkpoint.variant in FEATURE_VARIANTS
    est._set_fit_state(train, features)
    if isinstance(est, RandomRecommender):
        est.random_state = params.seed
    est.params_ = params
    est.trace_ = training.TrainTrace()
    return est


__all__ = [
    "BaseRecommender", "DCFARecommender", "DCFRecommender", "FactorBaselineRecommender",
    "MFRecommender", "VBPRRecommender", "CPRecommender", "PITFRecommender", "CMTFRecommender",
    "PopularityRecommender", "RandomRecommender", "make_recommender", "from_checkpoint",
    "ESTIMATORS", "FEATURE_VARIANTS", "DcfaParams",
]
