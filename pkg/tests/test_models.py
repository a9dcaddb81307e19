import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coupledrec.exceptions import FeatureDimMismatch, HeaderMismatch, IndexOutOfRange, VariantMismatch
from coupledrec.features import FeatureMatrix
from coupledrec.models import (PITF_NAMES, BaselineParams, DcfaParams, hash_scores, load_checkpoint,
                               predict, predict_B, predict_baseline, predict_C, predict_dcf,
                               predict_dcfa, rank_scores, save_checkpoint, score_items,
                               score_items_baseline, score_triples, top_n)

import oracles
from helpers import make_dataset, random_params


def scalar_params(u, v, t, w, m=None, n=None):
    kw = dict(U=[[u]], V=[[v]], T=[[t]], W=[[w]])
    if m is not None:
        kw.update(M=[[m]], N=[[n]])
    return DcfaParams(**kw)


def test_dcf_zero():
    assert predict_dcf(scalar_params(0, 0, 0, 0), 0, 0, 0) == 0


def test_dcf_scalar_case():
    assert predict_dcf(scalar_params(1, 2, 3, 4), 0, 0, 0) == 24


def test_dcfa_scalar_feature_case():
    params = scalar_params(0, 0, 0, 0, m=2, n=5)
    assert predict_dcfa(params, FeatureMatrix([[3.0]]), 0, 0, 0) == 90


def test_coupled_predictors_scalar():
    params = scalar_params(2, 3, 0, 0)
    assert predict_B(params, None, 0, 0) == 6
    assert predict_C(scalar_params(0, 0, 0, 0), None, 0, 0) == 0


def test_index_checks():
    params = random_params(np.random.default_rng(0), 2, 3, 2)
    with pytest.raises(IndexOutOfRange):
        predict_dcf(params, 2, 0, 0)
    with pytest.raises(IndexOutOfRange):
        predict_dcf(params, 0, 0, -1)
    with pytest.raises(IndexOutOfRange):
        predict_C(params, None, 5, 0)


def test_dcfa_feature_checks():
    params = random_params(np.random.default_rng(0), 2, 3, 2, K=4)
    with pytest.raises(VariantMismatch):
        predict_dcfa(params, None, 0, 0, 0)
    with pytest.raises(FeatureDimMismatch):
        predict_dcfa(params, np.zeros((3, 3)), 0, 0, 0)
    with pytest.raises(FeatureDimMismatch):
        predict_dcfa(params, np.zeros((4, 2)), 0, 0, 0)


def test_dcfa_with_zero_feature_factors_reduces_exactly():
    rng = np.random.default_rng(3)
    base = random_params(rng, 5, 6, 4)
    full = DcfaParams(base.U, base.V, base.T, base.W, np.zeros((4, 5)), np.zeros((4, 4)))
    F = rng.normal(size=(4, 6))
    for p, q, r in itertools.product(range(5), range(6), range(4)):
        assert predict_dcfa(full, F, p, q, r) == predict_dcf(base, p, q, r)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_negating_time_side_is_invariant(seed):
    rng = np.random.default_rng(seed)
    a = random_params(rng, 3, 4, 2)
    b = DcfaParams(a.U, a.V, -a.T, -a.W)
    for p, q, r in itertools.product(range(3), range(4), range(2)):
        assert predict_dcf(a, p, q, r) == pytest.approx(predict_dcf(b, p, q, r), rel=1e-15, abs=0)


def test_predictors_match_naive_oracles_on_full_grid():
    rng = np.random.default_rng(7)
    P, Q, R = 4, 5, 3
    dcfa = random_params(rng, P, Q, R, K1=3, K2=2, K=4)
    dcf = DcfaParams(dcfa.U, dcfa.V, dcfa.T, dcfa.W)
    F = rng.normal(size=(4, Q))
    L = {n: a.tolist() for n, a in dcfa.arrays().items()}
    Fl = F.tolist()
    for p, q, r in itertools.product(range(P), range(Q), range(R)):
        assert abs(predict_dcf(dcf, p, q, r) - oracles.dcf(L["U"], L["V"], L["T"], L["W"], p, q, r)) < 1e-12
        want = oracles.dcfa(L["U"], L["V"], L["T"], L["W"], L["M"], L["N"], Fl, p, q, r)
        assert abs(predict_dcfa(dcfa, F, p, q, r) - want) < 1e-12
        assert abs(predict(dcfa, F, p, q, r) - want) < 1e-12
        assert abs(predict_B(dcfa, F, p, q) - oracles.b_hat(L["U"], L["V"], p, q, L["M"], Fl)) < 1e-12
        assert abs(predict_C(dcfa, F, r, q) - oracles.c_hat(L["T"], L["W"], r, q, L["N"], Fl)) < 1e-12


def test_vectorized_scores_match_single_entry():
    rng = np.random.default_rng(2)
    params = random_params(rng, 4, 5, 3, K=2)
    F = rng.normal(size=(2, 5))
    grid = np.array(list(itertools.product(range(4), range(5), range(3))))
    single = [predict_dcfa(params, F, *t) for t in grid]
    np.testing.assert_allclose(score_triples(params, F, grid), single, rtol=0, atol=1e-12)
    for p, r in itertools.product(range(4), range(3)):
        want = [predict_dcfa(params, F, p, q, r) for q in range(5)]
        np.testing.assert_allclose(score_items(params, F, p, r), want, rtol=0, atol=1e-12)


# -- baselines -----------------------------------------------------------------

def make_baselines(rng, P=4, Q=5, R=3, K=3, Kf=2):
    g = lambda *s: rng.normal(size=s)  # noqa: E731
    return {
        "mf": BaselineParams("mf", {"U": g(K, P), "V": g(K, Q)}, shape=(P, Q, R)),
        "vbpr": BaselineParams("vbpr", {"U": g(K, P), "V": g(K, Q), "M": g(Kf, P)}, shape=(P, Q, R)),
        "cp": BaselineParams("cp", {"U": g(K, P), "V": g(K, Q), "T": g(K, R)}),
        "pitf": BaselineParams("pitf", {n: g(K, {"U": P, "V": Q, "T": R}[n[0]]) for n in PITF_NAMES}),
        "tucker": BaselineParams("tucker", {"core": g(2, 3, 2), "U": g(2, P), "V": g(3, Q), "T": g(2, R)}),
    }


def test_cp_scalar():
    bp = BaselineParams("cp", {"U": [[2.0]], "V": [[3.0]], "T": [[4.0]]})
    assert predict_baseline(bp, None, 0, 0, 0) == 24


def test_pitf_two_terms_vanish():
    f = {n: [[0.0]] for n in PITF_NAMES}
    f["UV"], f["VU"] = [[1.0]], [[5.0]]
    assert predict_baseline(BaselineParams("pitf", f), None, 0, 0, 0) == 5


def test_tucker_unit_core():
    bp = BaselineParams("tucker", {"core": [[[2.0]]], "U": [[1.0]], "V": [[1.0]], "T": [[1.0]]})
    assert predict_baseline(bp, None, 0, 0, 0) == 2


def test_baselines_match_naive_oracles_on_full_grid():
    rng = np.random.default_rng(11)
    P, Q, R = 4, 5, 3
    bps = make_baselines(rng, P, Q, R)
    F = rng.normal(size=(2, Q))
    L = {v: {n: a.tolist() for n, a in bp.factors.items()} for v, bp in bps.items()}
    for p, q, r in itertools.product(range(P), range(Q), range(R)):
        want = {
            "mf": oracles.mf(L["mf"]["U"], L["mf"]["V"], p, q),
            "vbpr": oracles.vbpr(L["vbpr"]["U"], L["vbpr"]["V"], L["vbpr"]["M"], F.tolist(), p, q),
            "cp": oracles.cp(L["cp"]["U"], L["cp"]["V"], L["cp"]["T"], p, q, r),
            "pitf": oracles.pitf(L["pitf"], p, q, r),
            "tucker": oracles.tucker(L["tucker"]["core"], L["tucker"]["U"], L["tucker"]["V"],
                                     L["tucker"]["T"], p, q, r),
        }
        for v, bp in bps.items():
            assert abs(predict_baseline(bp, F, p, q, r) - want[v]) < 1e-12, v
    for v, bp in bps.items():
        for p, r in itertools.product(range(P), range(R)):
            row = [predict_baseline(bp, F, p, q, r) for q in range(Q)]
            np.testing.assert_allclose(score_items_baseline(bp, F, p, r), row, rtol=0, atol=1e-12)


def test_vbpr_needs_features():
    bp = make_baselines(np.random.default_rng(0))["vbpr"]
    with pytest.raises(VariantMismatch):
        predict_baseline(bp, None, 0, 0, 0)


def test_popularity_and_rand():
    mp = BaselineParams("mp", popularity=[3, 0, 7], shape=(2, 3, 1))
    assert predict_baseline(mp, None, 1, 2, 0) == 7
    rand = BaselineParams("rand", seed=9, shape=(2, 3, 2))
    s1 = predict_baseline(rand, None, 1, 2, 1)
    assert s1 == predict_baseline(rand, None, 1, 2, 1)
    assert 0 <= s1 < 1
    assert s1 != predict_baseline(BaselineParams("rand", seed=10, shape=(2, 3, 2)), None, 1, 2, 1)


def test_hash_scores_roughly_uniform():
    s = hash_scores(0, 3, np.arange(20000), 1)
    assert abs(s.mean() - 0.5) < 0.01 and len(np.unique(s)) == 20000


def test_baseline_missing_factor():
    with pytest.raises(VariantMismatch):
        BaselineParams("cp", {"U": np.zeros((1, 1))})
    with pytest.raises(VariantMismatch):
        BaselineParams("svd")


# -- ranking -------------------------------------------------------------------

def test_top_n_by_score():
    ds = make_dataset([(0, 0, 0)], 1, 5, 1)
    assert top_n(lambda p, r: np.arange(5.0), ds, 0, 0, 2, exclude_train=False) == [4, 3]


def test_top_n_ties_ascending():
    ds = make_dataset([(0, 0, 0)], 1, 5, 1)
    assert top_n(lambda p, r: np.ones(5), ds, 0, 0, 3, exclude_train=False) == [0, 1, 2]


def test_top_n_excludes_train():
    ds = make_dataset([(0, 4, 0)], 1, 5, 1)
    assert top_n(lambda p, r: np.arange(5.0), ds, 0, 0, 2, exclude_train=True) == [3, 2]


def test_top_n_more_than_catalog():
    assert rank_scores(np.array([0.1, 0.3, 0.2]), 10) == [1, 2, 0]


def test_top_n_bad_context():
    ds = make_dataset([(0, 0, 0)], 1, 5, 1)
    with pytest.raises(IndexOutOfRange):
        top_n(lambda p, r: np.zeros(5), ds, 1, 0, 2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=15), st.integers(1, 15))
def test_ranking_invariant_under_increasing_transform(scores, n):
    s = np.array(scores, dtype=float)
    assert rank_scores(2 * s + 1, n) == rank_scores(s, n)
    assert rank_scores(np.exp(s), n) == rank_scores(s, n)


# -- checkpoints ---------------------------------------------------------------

def roundtrip(params, shape, digest=b"\x01" * 32):
    buf = io.BytesIO()
    save_checkpoint(buf, params, shape, digest)
    return load_checkpoint(io.BytesIO(buf.getvalue())), buf.getvalue()


@pytest.mark.parametrize("K", [0, 3])
def test_checkpoint_roundtrip_dcf(K):
    params = random_params(np.random.default_rng(0), 4, 5, 3, K1=2, K2=3, K=K)
    ck, blob = roundtrip(params, (4, 5, 3))
    assert blob[:8] == b"TRECMDL1" and blob[8] == (1 if K else 0)
    assert ck.params == params and ck.shape == (4, 5, 3) and ck.vocab_digest == b"\x01" * 32


@pytest.mark.parametrize("variant", ["mf", "vbpr", "cp", "pitf", "tucker"])
def test_checkpoint_roundtrip_baselines(variant):
    bp = make_baselines(np.random.default_rng(1))[variant]
    ck, _ = roundtrip(bp, (4, 5, 3))
    assert ck.variant == variant and ck.params == bp


def test_checkpoint_roundtrip_mp_rand():
    for bp in (BaselineParams("mp", popularity=[1, 2, 3], shape=(2, 3, 4)),
               BaselineParams("rand", seed=12345, shape=(2, 3, 4))):
        ck, _ = roundtrip(bp, (2, 3, 4))
        assert ck.params == bp


def test_checkpoint_bad_magic_and_truncation():
    params = random_params(np.random.default_rng(0), 2, 2, 2)
    _, blob = roundtrip(params, (2, 2, 2))
    with pytest.raises(HeaderMismatch):
        load_checkpoint(io.BytesIO(b"XXXXXXXX" + blob[8:]))
    with pytest.raises(HeaderMismatch):
        load_checkpoint(io.BytesIO(blob[:-3]))
