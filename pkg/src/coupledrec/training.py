"""Parameter learning: pairwise BPR with coupled terms, baselines, and MSE/CMTF.

Sign conventions. The BPR objective is *maximized*::

    sum_pairs [ ln s(A_pq r - A_q'r) + lambda1 ln s(B_pq - B_pq') + lambda2 ln s(C_rq - C_rq') ]
        - sum_theta lambda_theta / 2 * ||theta||_F^2

so that its gradient carries the ``-lambda_theta * theta`` decay term. The
MSE objective is *minimized*. Every sampled ``(p, q, q', r)`` contributes its
tensor term and both coupled-matrix terms: ``q'`` is drawn outside
``Q+_p | Q+_r`` so it is a valid negative for all three.
"""
from __future__ import annotations

import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy.special import expit

from .data import Dataset, Holdout
from .exceptions import DivergedError, IndexOutOfRange, NoNegativesAvailable, VariantMismatch
from .models import PITF_NAMES, BaselineParams, DcfaParams, coupled_scores, feature_array

logger = logging.getLogger(__name__)

# Test builds set this (or COUPLEDREC_CHECK_PAIRS=1) to assert every sampled
# pair inside the training loop.
CHECK_PAIRS = os.environ.get("COUPLEDREC_CHECK_PAIRS") == "1"


@dataclass
class TrainConfig:
    K1: int = 10
    K2: int = 10
    lambda1: float = 0.1
    lambda2: float = 0.1
    lambda3: float = 0.3
    lambda4: float = 0.3
    lambda5: float = 0.5
    lambda6: float = 0.2
    lambda7: float = 0.5
    lambda8: float = 0.5
    eta: float = 0.05
    batch_size: int = 100
    negatives_per_positive: int = 5
    iter_max: int = 200
    tol: float = 1e-5
    patience: int = 3
    seed: int = 0
    init_scale: float = 0.1
    # mse/cmtf trainer
    mse_eta: float = 0.01
    mse_zeros_per_positive: int | None = 5
    # validation during training
    eval_cutoff: int = 10
    eval_every: int = 1
    eval_sample: int | None = None

    def __post_init__(self):
        lambdas = [getattr(self, f"lambda{i}") for i in range(1, 9)]
        if min(lambdas) < 0:
            raise ValueError("regularization and coupling weights must be >= 0")
        if self.eta <= 0 or self.mse_eta <= 0:
            raise ValueError("learning rates must be > 0")
        if self.batch_size < 1 or self.negatives_per_positive < 1:
            raise ValueError("batch_size and negatives_per_positive must be >= 1")
        if self.iter_max < 0 or self.K1 < 1 or self.K2 < 1:
            raise ValueError("iter_max must be >= 0 and latent dims >= 1")
        if self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")

    def reg(self) -> dict[str, float]:
        """Regularization coefficient per DCFA matrix."""
        return {"U": self.lambda3, "V": self.lambda4, "T": self.lambda5,
                "W": self.lambda6, "M": self.lambda7, "N": self.lambda8}

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class TraceRecord:
    iteration: int
    objective: float
    recall: float | None = None
    ndcg: float | None = None
    seconds: float = 0.0


@dataclass
class TrainTrace:
    records: list[TraceRecord] = field(default_factory=list)
    cutoff: int = 10
    converged: bool = False

    def append(self, rec: TraceRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("trace iterations must be strictly increasing")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def to_tsv(self) -> str:
        n = self.cutoff
        lines = [f"iteration\tobjective\trecall@{n}\tndcg@{n}\tseconds"]
        for r in self.records:
            rec = "" if r.recall is None else f"{r.recall:.6f}"
            ndcg = "" if r.ndcg is None else f"{r.ndcg:.6f}"
            lines.append(f"{r.iteration}\t{r.objective:.10g}\t{rec}\t{ndcg}\t{r.seconds:.3f}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# initialization and sampling
# ---------------------------------------------------------------------------

def init_params(config: TrainConfig, dims, seed: int | None = None) -> DcfaParams:
    """Uniform ``[-init_scale, init_scale]`` factors.

    ``dims`` is ``(P, Q, R)`` for DCF or ``(P, Q, R, K)`` for DCFA.
    """
    P, Q, R, *rest = dims
    K = rest[0] if rest else 0
    if min(P, Q, R) < 1 or K < 0:
        raise ValueError(f"invalid dims {dims}")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    s = config.init_scale
    shapes = {"U": (config.K1, P), "V": (config.K1, Q), "T": (config.K2, R), "W": (config.K2, Q)}
    if K:
        shapes.update(M=(K, P), N=(K, R))
    return DcfaParams(**{n: rng.uniform(-s, s, size=shp) for n, shp in shapes.items()})


def sample_negatives(dataset: Dataset, p: int, r: int, count: int, rng) -> list[int]:
    """``count`` items drawn uniformly, with replacement, from ``Q \\ (Q+_p | Q+_r)``."""
    if not (0 <= p < dataset.n_users and 0 <= r < dataset.n_intervals):
        raise IndexOutOfRange(f"context ({p}, {r}) out of range")
    excluded = dataset.per_user_items[p] | dataset.per_time_items[r]
    allowed = np.setdiff1d(np.arange(dataset.n_items), np.fromiter(excluded, dtype=np.int64))
    if len(allowed) == 0:
        raise NoNegativesAvailable(f"user {p} and interval {r} cover every item")
    return [int(x) for x in rng.choice(allowed, size=count, replace=True)]


def _excluded(dataset: Dataset, p, r, q, use_time: bool) -> np.ndarray:
    bad = dataset.has_user_item(p, q)
    if use_time:
        bad |= dataset.has_time_item(r, q)
    return bad


def sample_negatives_batch(dataset: Dataset, p, r, count: int, rng, use_time: bool = True) -> np.ndarray:
    """Vectorized negative sampling, one row of ``count`` items per ``(p, r)``.

    Rejection sampling keeps every draw uniform over the allowed set. With
    ``use_time=False`` only ``Q+_p`` is excluded.
    """
    p = np.asarray(p, dtype=np.int64)
    r = np.asarray(r, dtype=np.int64)
    Q = dataset.n_items
    pp = np.repeat(p[:, None], count, axis=1)
    rr = np.repeat(r[:, None], count, axis=1)
    out = rng.integers(0, Q, size=pp.shape)
    bad = _excluded(dataset, pp, rr, out, use_time)
    for _ in range(64):
        if not bad.any():
            return out
        out[bad] = rng.integers(0, Q, size=int(bad.sum()))
        bad[bad] = _excluded(dataset, pp[bad], rr[bad], out[bad], use_time)
    # dense contexts: fall back to exact enumeration of the allowed set
    for i in np.unique(np.nonzero(bad)[0]):
        excl = set(dataset.per_user_items[p[i]])
        if use_time:
            excl |= dataset.per_time_items[r[i]]
        allowed = np.setdiff1d(np.arange(Q), np.fromiter(excl, dtype=np.int64))
        if len(allowed) == 0:
            raise NoNegativesAvailable(f"user {p[i]} and interval {r[i]} cover every item")
        cols = bad[i]
        out[i, cols] = rng.choice(allowed, size=int(cols.sum()))
    return out


def make_pairs(records: np.ndarray, negatives: np.ndarray) -> np.ndarray:
    """``(p, q, r)`` records x negatives -> ``(p, q, q', r)`` rows."""
    npp = negatives.shape[1]
    rep = np.repeat(records, npp, axis=0)
    return np.column_stack([rep[:, 0], rep[:, 1], negatives.reshape(-1), rep[:, 2]])


def assert_pairs_sound(dataset: Dataset, pairs, use_time: bool = True) -> None:
    """Positives are observed for ``(p, r)``; negatives avoid ``Q+_p | Q+_r``."""
    p, q, qn, r = np.asarray(pairs, dtype=np.int64).T
    assert dataset.has_user_item(p, q).all(), "positive item outside Q+_p"
    assert not dataset.has_user_item(p, qn).any(), "negative item inside Q+_p"
    if use_time:
        assert dataset.has_time_item(r, q).all(), "positive item outside Q+_r"
        assert not dataset.has_time_item(r, qn).any(), "negative item inside Q+_r"


def _check_pairs(pairs, shape) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 4)
    P, Q, R = shape
    if len(pairs) and (pairs.min() < 0 or pairs[:, 0].max() >= P or pairs[:, 1:3].max() >= Q
                       or pairs[:, 3].max() >= R):
        raise IndexOutOfRange("pair index out of range")
    return pairs


def log_sigmoid(x):
    """``ln s(x)`` without overflow for large ``|x|``."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# DCF / DCFA BPR objective and gradient
# ---------------------------------------------------------------------------

def _feature_data(params: DcfaParams, F):
    if not params.has_features:
        return None
    if F is None:
        raise VariantMismatch("DCFA parameters need a feature matrix")
    return feature_array(F)


def _reg_term(arrays: dict[str, np.ndarray], reg: dict[str, float]) -> float:
    return sum(0.5 * reg[n] * float(np.sum(a * a)) for n, a in arrays.items())


def bpr_pair_objective(params: DcfaParams, F, dataset, pairs, config: TrainConfig) -> float:
    """BPR objective restricted to ``pairs`` (rows ``p, q, q', r``).

    ``dataset`` is only used for index validation and may be ``None``.
    """
    pairs = _check_pairs(pairs, params.shape if dataset is None else
                         (dataset.n_users, dataset.n_items, dataset.n_intervals))
    p, q, qn, r = pairs.T
    b_pos, c_pos = coupled_scores(params, F, p, q, r)
    b_neg, c_neg = coupled_scores(params, F, p, qn, r)
    total = (log_sigmoid(b_pos * c_pos - b_neg * c_neg).sum()
             + config.lambda1 * log_sigmoid(b_pos - b_neg).sum()
             + config.lambda2 * log_sigmoid(c_pos - c_neg).sum())
    return float(total) - _reg_term(params.arrays(), config.reg())


def _scatter(shape, idx, vals) -> np.ndarray:
    """Sum ``vals`` (``k x n``) into columns ``idx`` of a zero ``shape`` matrix."""
    out = np.zeros(shape)
    np.add.at(out.T, idx, vals.T)
    return out


def bpr_gradient(params: DcfaParams, F, dataset, pairs, config: TrainConfig,
                 regularization: str = "full") -> DcfaParams:
    """Analytic gradient of :func:`bpr_pair_objective` over ``pairs``.

    ``regularization`` selects the decay term: ``"full"`` (exact gradient of
    the objective), ``"touched"`` (``-lambda * theta`` once per pair touching a
    column, the stochastic-step form), or ``"none"``.
    """
    if regularization not in ("full", "touched", "none"):
        raise ValueError(f"unknown regularization mode {regularization!r}")
    pairs = _check_pairs(pairs, params.shape if dataset is None else
                         (dataset.n_users, dataset.n_items, dataset.n_intervals))
    if len(pairs) == 0:
        raise ValueError("empty batch")
    p, q, qn, r = pairs.T
    b_pos, c_pos = coupled_scores(params, F, p, q, r)
    b_neg, c_neg = coupled_scores(params, F, p, qn, r)
    g_a = expit(-(b_pos * c_pos - b_neg * c_neg))
    g_b = config.lambda1 * expit(-(b_pos - b_neg))
    g_c = config.lambda2 * expit(-(c_pos - c_neg))

    U, V, T, W = params.U, params.V, params.T, params.W
    Up, Tr = U[:, p], T[:, r]
    Vq, Vn, Wq, Wn = V[:, q], V[:, qn], W[:, q], W[:, qn]

    dU = _scatter(U.shape, p, g_a * (c_pos * Vq - c_neg * Vn) + g_b * (Vq - Vn))
    dV = _scatter(V.shape, q, (g_a * c_pos + g_b) * Up) - _scatter(V.shape, qn, (g_a * c_neg + g_b) * Up)
    dT = _scatter(T.shape, r, g_a * (b_pos * Wq - b_neg * Wn) + g_c * (Wq - Wn))
    dW = _scatter(W.shape, q, (g_a * b_pos + g_c) * Tr) - _scatter(W.shape, qn, (g_a * b_neg + g_c) * Tr)
    grads = {"U": dU, "V": dV, "T": dT, "W": dW}

    data = _feature_data(params, F)
    if data is not None:
        Fq, Fn = data[:, q], data[:, qn]
        grads["M"] = _scatter(params.M.shape, p, g_a * (c_pos * Fq - c_neg * Fn) + g_b * (Fq - Fn))
        grads["N"] = _scatter(params.N.shape, r, g_a * (b_pos * Fq - b_neg * Fn) + g_c * (Fq - Fn))

    _apply_reg(grads, params.arrays(), config.reg(), regularization,
               {"U": (p,), "V": (q, qn), "T": (r,), "W": (q, qn), "M": (p,), "N": (r,)})
    return DcfaParams(**grads)


def _apply_reg(grads, arrays, reg, mode, touched_idx) -> None:
    if mode == "none":
        return
    for name, g in grads.items():
        lam = reg[name]
        if lam == 0:
            continue
        theta = arrays[name]
        if mode == "full":
            g -= lam * theta
        else:
            n_cols = theta.shape[1]
            counts = sum(np.bincount(ix, minlength=n_cols) for ix in touched_idx[name])
            g -= lam * theta * counts[None, :]


# ---------------------------------------------------------------------------
# baseline BPR objectives (mf, vbpr, cp, pitf)
# ---------------------------------------------------------------------------

def baseline_reg(variant: str, config: TrainConfig) -> dict[str, float]:
    """Regularization coefficients of each baseline matrix."""
    if variant == "mf":
        return {"U": config.lambda3, "V": config.lambda4}
    if variant == "vbpr":
        return {"U": config.lambda3, "V": config.lambda4, "M": config.lambda7}
    if variant in ("cp", "cmtf"):
        return {"U": config.lambda3, "V": config.lambda4, "T": config.lambda5}
    if variant == "pitf":
        lam = {"U": config.lambda3, "V": config.lambda4, "T": config.lambda5}
        return {n: lam[n[0]] for n in PITF_NAMES}
    raise VariantMismatch(f"{variant} has no trainable factors")


def _baseline_diff(bp: BaselineParams, F, p, q, qn, r):
    """Score differences and the per-pair partial derivatives wrt touched columns.

    Returns ``x`` and a list of ``(name, column_index, d x / d column)``.
    """
    f = bp.factors
    v = bp.variant
    if v in ("mf", "vbpr"):
        Up, dq = f["U"][:, p], f["V"][:, q] - f["V"][:, qn]
        x = np.einsum("kn,kn->n", Up, dq)
        parts = [("U", p, dq), ("V", q, Up), ("V", qn, -Up)]
        if v == "vbpr":
            if F is None:
                raise VariantMismatch("vbpr needs a feature matrix")
            data = feature_array(F)
            df = data[:, q] - data[:, qn]
            x = x + np.einsum("kn,kn->n", f["M"][:, p], df)
            parts.append(("M", p, df))
        return x, parts
    if v == "cp":
        Up, Tr, dq = f["U"][:, p], f["T"][:, r], f["V"][:, q] - f["V"][:, qn]
        ut = Up * Tr
        x = np.einsum("kn,kn->n", ut, dq)
        return x, [("U", p, Tr * dq), ("T", r, Up * dq), ("V", q, ut), ("V", qn, -ut)]
    if v == "pitf":
        uv, tv = f["UV"][:, p], f["TV"][:, r]
        d_vu = f["VU"][:, q] - f["VU"][:, qn]
        d_vt = f["VT"][:, q] - f["VT"][:, qn]
        x = np.einsum("kn,kn->n", uv, d_vu) + np.einsum("kn,kn->n", tv, d_vt)
        return x, [("UV", p, d_vu), ("VU", q, uv), ("VU", qn, -uv),
                   ("TV", r, d_vt), ("VT", q, tv), ("VT", qn, -tv)]
    raise VariantMismatch(f"{v} is not trained with BPR")


def baseline_pair_objective(bp: BaselineParams, F, pairs, config: TrainConfig) -> float:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 4)
    x, _ = _baseline_diff(bp, F, *pairs.T)
    return float(log_sigmoid(x).sum()) - _reg_term(bp.factors, baseline_reg(bp.variant, config))


def baseline_bpr_gradient(bp: BaselineParams, F, pairs, config: TrainConfig,
                          regularization: str = "full") -> dict[str, np.ndarray]:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 4)
    x, parts = _baseline_diff(bp, F, *pairs.T)
    g = expit(-x)
    grads = {n: np.zeros_like(a) for n, a in bp.factors.items()}
    touched: dict[str, list] = {n: [] for n in grads}
    for name, idx, d in parts:
        np.add.at(grads[name].T, idx, (g * d).T)
        touched[name].append(idx)
    if "UT" in touched:
        # user-time pair cancels in every difference; decay follows the touched contexts
        touched["UT"].append(pairs[:, 0])
        touched["TU"].append(pairs[:, 3])
    _apply_reg(grads, bp.factors, baseline_reg(bp.variant, config), regularization, touched)
    return grads


def init_baseline(variant: str, config: TrainConfig, dims, seed: int | None = None) -> BaselineParams:
    P, Q, R, *rest = dims
    K = rest[0] if rest else 0
    rng = np.random.default_rng(config.seed if seed is None else seed)
    s = config.init_scale
    k = config.K1
    if variant == "mf":
        shapes = {"U": (k, P), "V": (k, Q)}
    elif variant == "vbpr":
        if not K:
            raise VariantMismatch("vbpr needs the feature dimension")
        shapes = {"U": (k, P), "V": (k, Q), "M": (K, P)}
    elif variant in ("cp", "cmtf"):
        shapes = {"U": (k, P), "V": (k, Q), "T": (k, R)}
    elif variant == "pitf":
        size = {"U": P, "V": Q, "T": R}
        shapes = {n: (k, size[n[0]]) for n in PITF_NAMES}
    else:
        raise VariantMismatch(f"{variant} has no trainable factors")
    return BaselineParams(variant, {n: rng.uniform(-s, s, size=shp) for n, shp in shapes.items()},
                          shape=(P, Q, R))


# ---------------------------------------------------------------------------
# mini-batch loop shared by DCF/DCFA and the BPR baselines
# ---------------------------------------------------------------------------

def _rel_change(prev: float, cur: float) -> float:
    return abs(cur - prev) / max(abs(prev), 1e-12)


# per-batch decay of a column is eta * lambda * touches; past 2 it overshoots
_DIVERGED_HINT = ("; per-batch decay eta*lambda*touches is too large: lower eta or lambda3..lambda8 "
                  "(the CLI's --preset planted suits synth corpora)")


def _run_minibatch(dataset, arrays, positives, grad_fn, objective_fn, scorer_fn, config,
                   validation, use_time, trace):
    """Shuffle positives, batch, sample negatives, ascend; repeat until converged."""
    rng = np.random.default_rng([config.seed, 1])
    n = len(positives)
    npp = config.negatives_per_positive
    streak = 0
    prev = None
    start = time.perf_counter()
    eval_rng = np.random.default_rng([config.seed, 2])
    for it in range(1, config.iter_max + 1):
        perm = rng.permutation(n)
        epoch_pairs = []
        # overflow is detected by the finiteness checks below, not by warnings
        with np.errstate(over="ignore", invalid="ignore"):
            for lo in range(0, n, config.batch_size):
                rec = positives[perm[lo:lo + config.batch_size]]
                neg = sample_negatives_batch(dataset, rec[:, 0], rec[:, 2], npp, rng, use_time)
                pairs = make_pairs(rec, neg)
                if CHECK_PAIRS:
                    assert_pairs_sound(dataset, pairs, use_time)
                grads = grad_fn(pairs)
                for name, g in grads.items():
                    arrays[name] += config.eta * g
                epoch_pairs.append(pairs)
            if not all(np.isfinite(a).all() for a in arrays.values()):
                raise DivergedError(f"non-finite parameters at iteration {it}{_DIVERGED_HINT}")
            obj = objective_fn(np.concatenate(epoch_pairs)) / max(n * npp, 1)
        if not np.isfinite(obj):
            raise DivergedError(f"non-finite objective at iteration {it}{_DIVERGED_HINT}")
        rec = TraceRecord(it, obj, seconds=time.perf_counter() - start)
        if validation is not None and len(validation) and (
                it % config.eval_every == 0 or it == config.iter_max):
            rec.recall, rec.ndcg = _validate(scorer_fn, dataset, validation, config, eval_rng)
        trace.append(rec)
        if prev is not None and _rel_change(prev, obj) < config.tol:
            streak += 1
            if streak >= config.patience:
                trace.converged = True
                logger.info("converged at iteration %d", it)
                break
        else:
            streak = 0
        prev = obj


def _validate(scorer_fn, dataset, holdout: Holdout, config, rng):
    from .evaluation import evaluate_model, sample_holdout_users

    if config.eval_sample:
        holdout = sample_holdout_users(holdout, config.eval_sample, rng)
    report = evaluate_model(scorer_fn(), dataset, holdout, cutoffs=(config.eval_cutoff,))
    return report.recall[config.eval_cutoff], report.ndcg[config.eval_cutoff]


def train_bpr(dataset: Dataset, F=None, config: TrainConfig | None = None,
              validation: Holdout | None = None, params: DcfaParams | None = None):
    """Mini-batch BPR training of DCF (``F is None``) or DCFA.

    Returns ``(params, trace)``; deterministic given ``config.seed``.
    """
    from .models import score_items

    config = config or TrainConfig()
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    data = feature_array(F)
    dims = (dataset.n_users, dataset.n_items, dataset.n_intervals) + ((data.shape[0],) if data is not None else ())
    if data is not None and data.shape[1] != dataset.n_items:
        raise ValueError("feature matrix item count differs from dataset")
    params = params.copy() if params is not None else init_params(config, dims)
    trace = TrainTrace(cutoff=config.eval_cutoff)
    arrays = params.arrays()

    def grad_fn(pairs):
        return bpr_gradient(params, F, None, pairs, config, regularization="touched").arrays()

    def objective_fn(pairs):
        return bpr_pair_objective(params, F, None, pairs, config)

    def scorer_fn():
        return lambda p, r: score_items(params, F, p, r)

    _run_minibatch(dataset, arrays, dataset.triples, grad_fn, objective_fn, scorer_fn, config,
                   validation, True, trace)
    return params, trace


def train_baseline_bpr(variant: str, dataset: Dataset, F=None, config: TrainConfig | None = None,
                       validation: Holdout | None = None):
    """BPR training of ``mf``, ``vbpr`` (user-item slice) or ``cp``, ``pitf`` (tensor)."""
    from .models import score_items_baseline

    config = config or TrainConfig()
    data = feature_array(F)
    dims = (dataset.n_users, dataset.n_items, dataset.n_intervals) + ((data.shape[0],) if data is not None else ())
    bp = init_baseline(variant, config, dims)
    trace = TrainTrace(cutoff=config.eval_cutoff)
    if variant in ("mf", "vbpr"):
        ui = dataset.user_items
        positives = np.column_stack([ui, np.zeros(len(ui), dtype=np.int64)])
        use_time = False
    else:
        positives = dataset.triples
        use_time = True

    def grad_fn(pairs):
        return baseline_bpr_gradient(bp, F, pairs, config, regularization="touched")

    def objective_fn(pairs):
        return baseline_pair_objective(bp, F, pairs, config)

    def scorer_fn():
        return lambda p, r: score_items_baseline(bp, F, p, r)

    _run_minibatch(dataset, bp.factors, positives, grad_fn, objective_fn, scorer_fn, config,
                   validation, use_time, trace)
    return bp, trace


def fit_popularity(dataset: Dataset) -> BaselineParams:
    return BaselineParams("mp", popularity=dataset.item_popularity(),
                          shape=(dataset.n_users, dataset.n_items, dataset.n_intervals))


# ---------------------------------------------------------------------------
# MSE objective (CMTF baseline, CP or DCF form)
# ---------------------------------------------------------------------------

DENSE_LIMIT = 10 ** 6


@dataclass
class ZeroSample:
    """Sampled zero cells of ``A`` (``p, q, r``), ``B`` (``p, q``) and ``C`` (``r, q``)."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray


def sample_zero_entries(dataset: Dataset, per_positive: int, rng) -> ZeroSample:
    """Uniform zero cells, ``per_positive`` times the number of positives of each set."""
    P, Q, R = dataset.n_users, dataset.n_items, dataset.n_intervals
    a_keys = np.sort((dataset.triples[:, 0] * Q + dataset.triples[:, 1]) * R + dataset.triples[:, 2])

    def draw(n, sizes, is_pos):
        out = np.column_stack([rng.integers(0, s, size=n) for s in sizes])
        bad = is_pos(out)
        for _ in range(64):
            if not bad.any():
                break
            out[bad] = np.column_stack([rng.integers(0, s, size=int(bad.sum())) for s in sizes])
            bad[bad] = is_pos(out[bad])
        return out[~bad]

    def a_pos(x):
        keys = (x[:, 0] * Q + x[:, 1]) * R + x[:, 2]
        pos = np.minimum(np.searchsorted(a_keys, keys), len(a_keys) - 1)
        return a_keys[pos] == keys

    a = draw(per_positive * len(dataset.triples), (P, Q, R), a_pos)
    b = draw(per_positive * len(dataset.user_items), (P, Q), lambda x: dataset.has_user_item(x[:, 0], x[:, 1]))
    c = draw(per_positive * len(dataset.time_items), (R, Q), lambda x: dataset.has_time_item(x[:, 0], x[:, 1]))
    return ZeroSample(a, b, c)


def _mse_form(params):
    if isinstance(params, DcfaParams):
        if params.has_features:
            raise VariantMismatch("MSE objective is defined for feature-free parameters")
        return "dcf", params.arrays(), {"U": "lambda3", "V": "lambda4", "T": "lambda5", "W": "lambda6"}
    if isinstance(params, BaselineParams) and params.variant in ("cp", "cmtf"):
        return "cp", params.factors, {"U": "lambda3", "V": "lambda4", "T": "lambda5"}
    raise VariantMismatch("MSE objective needs DCF or CP/CMTF parameters")


def _dense_targets(dataset: Dataset):
    P, Q, R = dataset.n_users, dataset.n_items, dataset.n_intervals
    A = np.zeros((P, Q, R))
    A[tuple(dataset.triples.T)] = 1.0
    B = np.zeros((P, Q))
    B[tuple(dataset.user_items.T)] = 1.0
    C = np.zeros((R, Q))
    C[tuple(dataset.time_items.T)] = 1.0
    return A, B, C


def _mse_dense(form, m, dataset, config, with_grad):
    A, B, C = _dense_targets(dataset)
    U, V, T = m["U"], m["V"], m["T"]
    S1 = U.T @ V                                  # B_hat, P x Q
    S2 = T.T @ (m["W"] if form == "dcf" else V)   # C_hat, R x Q
    if form == "dcf":
        A_hat = S1[:, :, None] * S2.T[None, :, :]
    else:
        A_hat = np.einsum("kp,kq,kr->pqr", U, V, T, optimize=True)
    EA, EB, EC = A_hat - A, S1 - B, S2 - C
    loss = 0.5 * np.sum(EA ** 2) + 0.5 * config.lambda1 * np.sum(EB ** 2) + 0.5 * config.lambda2 * np.sum(EC ** 2)
    if not with_grad:
        return loss, None
    if form == "dcf":
        W = m["W"]
        dS1 = np.einsum("pqr,rq->pq", EA, S2) + config.lambda1 * EB
        dS2 = np.einsum("pqr,pq->rq", EA, S1) + config.lambda2 * EC
        grads = {"U": V @ dS1.T, "V": U @ dS1, "T": W @ dS2.T, "W": T @ dS2}
    else:
        grads = {
            "U": np.einsum("pqr,kq,kr->kp", EA, V, T, optimize=True) + config.lambda1 * V @ EB.T,
            "V": np.einsum("pqr,kp,kr->kq", EA, U, T, optimize=True) + config.lambda1 * U @ EB + config.lambda2 * T @ EC,
            "T": np.einsum("pqr,kp,kq->kr", EA, U, V, optimize=True) + config.lambda2 * V @ EC.T,
        }
    return loss, grads


def _mse_sampled(form, m, dataset, zeros: ZeroSample, config, with_grad):
    U, V, T = m["U"], m["V"], m["T"]
    Wt = m["W"] if form == "dcf" else V
    a_idx = np.vstack([dataset.triples, zeros.a])
    a_tgt = np.r_[np.ones(len(dataset.triples)), np.zeros(len(zeros.a))]
    b_idx = np.vstack([dataset.user_items, zeros.b])
    b_tgt = np.r_[np.ones(len(dataset.user_items)), np.zeros(len(zeros.b))]
    c_idx = np.vstack([dataset.time_items, zeros.c])
    c_tgt = np.r_[np.ones(len(dataset.time_items)), np.zeros(len(zeros.c))]

    p, q, r = a_idx.T
    Up, Vq, Tr = U[:, p], V[:, q], T[:, r]
    if form == "dcf":
        Wq = Wt[:, q]
        s1, s2 = np.einsum("kn,kn->n", Up, Vq), np.einsum("kn,kn->n", Tr, Wq)
        ea = s1 * s2 - a_tgt
    else:
        ea = np.einsum("kn,kn,kn->n", Up, Vq, Tr) - a_tgt
    bp_, bq = b_idx.T
    eb = np.einsum("kn,kn->n", U[:, bp_], V[:, bq]) - b_tgt
    cr, cq = c_idx.T
    ec = np.einsum("kn,kn->n", T[:, cr], Wt[:, cq]) - c_tgt
    loss = 0.5 * np.sum(ea ** 2) + 0.5 * config.lambda1 * np.sum(eb ** 2) + 0.5 * config.lambda2 * np.sum(ec ** 2)
    if not with_grad:
        return loss, None
    grads = {n: np.zeros_like(a) for n, a in m.items()}

    def add(name, idx, vals):
        np.add.at(grads[name].T, idx, vals.T)

    if form == "dcf":
        add("U", p, ea * s2 * Vq)
        add("V", q, ea * s2 * Up)
        add("T", r, ea * s1 * Wq)
        add("W", q, ea * s1 * Tr)
    else:
        add("U", p, ea * Vq * Tr)
        add("V", q, ea * Up * Tr)
        add("T", r, ea * Up * Vq)
    add("U", bp_, config.lambda1 * eb * V[:, bq])
    add("V", bq, config.lambda1 * eb * U[:, bp_])
    add("T", cr, config.lambda2 * ec * Wt[:, cq])
    add("W" if form == "dcf" else "V", cq, config.lambda2 * ec * T[:, cr])
    return loss, grads


def mse_objective(params, dataset: Dataset, zeros: ZeroSample | None = None,
                  config: TrainConfig | None = None) -> float:
    """Squared reconstruction error of ``A``, ``B``, ``C`` plus L2 terms (to minimize).

    ``zeros=None`` evaluates every cell (only for ``P*Q*R <= 10**6``);
    otherwise the positives plus the given sampled zero cells are used.
    ``DcfaParams`` are scored with the product form, ``cp``/``cmtf``
    parameters with the CP form sharing ``V`` between ``B`` and ``C``.
    """
    loss, _ = _mse(params, dataset, zeros, config or TrainConfig(), with_grad=False)
    return loss


def mse_gradient(params, dataset: Dataset, zeros: ZeroSample | None = None,
                 config: TrainConfig | None = None) -> dict[str, np.ndarray]:
    _, grads = _mse(params, dataset, zeros, config or TrainConfig(), with_grad=True)
    return grads


def _mse(params, dataset, zeros, config, with_grad):
    form, m, lam_names = _mse_form(params)
    if zeros is None:
        if dataset.n_users * dataset.n_items * dataset.n_intervals > DENSE_LIMIT:
            raise ValueError("dense MSE evaluation limited to P*Q*R <= 1e6; pass sampled zeros")
        loss, grads = _mse_dense(form, m, dataset, config, with_grad)
    else:
        loss, grads = _mse_sampled(form, m, dataset, zeros, config, with_grad)
    for name, attr in lam_names.items():
        lam = getattr(config, attr)
        loss += 0.5 * lam * float(np.sum(m[name] ** 2))
        if with_grad:
            grads[name] = grads[name] + lam * m[name]
    return float(loss), grads


def train_mse_cmtf(dataset: Dataset, config: TrainConfig | None = None,
                   validation: Holdout | None = None, form: str = "cp"):
    """Full-batch gradient descent on the MSE objective.

    ``form="cp"`` trains the CMTF baseline; ``form="dcf"`` the product model.
    Zero cells are resampled every iteration, ``mse_zeros_per_positive`` per
    observed entry. ``None`` uses every cell (dense, small tensors only).
    """
    from .models import score_items, score_items_baseline

    config = config or TrainConfig()
    dims = (dataset.n_users, dataset.n_items, dataset.n_intervals)
    if form == "cp":
        params = init_baseline("cmtf", config, dims)
        arrays = params.factors
        scorer_fn = lambda: (lambda p, r: score_items_baseline(params, None, p, r))  # noqa: E731
    elif form == "dcf":
        params = init_params(config, dims)
        arrays = params.arrays()
        scorer_fn = lambda: (lambda p, r: score_items(params, None, p, r))  # noqa: E731
    else:
        raise ValueError(f"unknown MSE form {form!r}")
    per_pos = config.mse_zeros_per_positive
    if per_pos is None and np.prod(dims) > DENSE_LIMIT:
        per_pos = 5
    rng = np.random.default_rng([config.seed, 3])
    eval_rng = np.random.default_rng([config.seed, 2])
    trace = TrainTrace(cutoff=config.eval_cutoff)
    start = time.perf_counter()
    prev, streak = None, 0
    for it in range(1, config.iter_max + 1):
        zeros = sample_zero_entries(dataset, per_pos, rng) if per_pos else None
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = _mse(params, dataset, zeros, config, with_grad=True)
            for name, g in grads.items():
                arrays[name] -= config.mse_eta * g
        if not np.isfinite(loss) or not all(np.isfinite(a).all() for a in arrays.values()):
            raise DivergedError(f"MSE training diverged at iteration {it}; lower mse_eta")
        rec = TraceRecord(it, loss, seconds=time.perf_counter() - start)
        if validation is not None and len(validation) and (
                it % config.eval_every == 0 or it == config.iter_max):
            rec.recall, rec.ndcg = _validate(scorer_fn, dataset, validation, config, eval_rng)
        trace.append(rec)
        if prev is not None and _rel_change(prev, loss) < config.tol:
            streak += 1
            if streak >= config.patience:
                trace.converged = True
                break
        else:
            streak = 0
        prev = loss
    return params, trace


# ---------------------------------------------------------------------------
# finite-difference gradient check
# ---------------------------------------------------------------------------

@dataclass
class GradCheckEntry:
    max_abs_error: float
    max_rel_error: float
    n_checked: int
    n_flagged: int
    worst_index: tuple | None = None


@dataclass
class GradCheckReport:
    entries: dict[str, GradCheckEntry]
    tolerance: float
    step: float

    @property
    def passed(self) -> bool:
        return all(e.n_flagged == 0 for e in self.entries.values())

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries.values()), default=0.0)

    def __str__(self) -> str:
        lines = [f"{'matrix':<8}{'checked':>9}{'flagged':>9}{'max_abs':>12}{'max_rel':>12}"]
        for name, e in self.entries.items():
            lines.append(f"{name:<8}{e.n_checked:>9}{e.n_flagged:>9}"
                         f"{e.max_abs_error:>12.3e}{e.max_rel_error:>12.3e}")
        return "\n".join(lines)


def grad_check(objective, gradient, params: dict[str, np.ndarray], step: float = 1e-5,
               tolerance: float = 1e-4, abs_floor: float = 1e-8, max_coords: int = 10_000,
               seed: int = 0) -> GradCheckReport:
    """Compare ``gradient(params)`` with central differences of ``objective``.

    ``params`` maps names to arrays and is perturbed in place (and restored).
    A coordinate is flagged when ``|analytic - numeric| > tolerance * max(|analytic|,
    |numeric|) + abs_floor``. Above ``max_coords`` total coordinates a random
    subsample of that size is checked.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    analytic = gradient(params)
    analytic = getattr(analytic, "arrays", lambda: analytic)()
    total = sum(a.size for a in params.values())
    rng = np.random.default_rng(seed)
    frac = min(1.0, max_coords / max(total, 1))
    entries = {}
    for name, arr in params.items():
        flat = arr.reshape(-1)
        if frac < 1.0:
            k = max(1, int(round(frac * flat.size)))
            coords = np.sort(rng.choice(flat.size, size=k, replace=False))
        else:
            coords = np.arange(flat.size)
        ga = np.asarray(analytic[name]).reshape(-1)
        max_abs = max_rel = 0.0
        flagged = 0
        worst = None
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = objective(params)
            flat[i] = orig - step
            f_minus = objective(params)
            flat[i] = orig
            num = (f_plus - f_minus) / (2 * step)
            a = ga[i]
            err = abs(a - num)
            rel = err / max(abs(a), abs(num), abs_floor)
            if err > tolerance * max(abs(a), abs(num)) + abs_floor:
                flagged += 1
            if rel > max_rel:
                max_rel, worst = rel, np.unravel_index(i, arr.shape)
            max_abs = max(max_abs, err)
        entries[name] = GradCheckEntry(max_abs, max_rel, len(coords), flagged,
                                       None if worst is None else tuple(int(x) for x in worst))
    return GradCheckReport(entries, tolerance, step)
