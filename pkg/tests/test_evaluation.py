import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coupledrec.data import Holdout, Split
from coupledrec.evaluation import (MetricsReport, compare_models, evaluate_model, evaluate_split,
                                   group_holdout, ndcg_at_n, recall_at_n, reports_to_tsv,
                                   sample_holdout_users)
from coupledrec.exceptions import CutoffMismatch, EmptyRelevant
from coupledrec.models import rank_scores
from coupledrec.training import fit_popularity

import oracles
from helpers import make_dataset


# -- metrics ------------------------------------------------------------------------

@pytest.mark.parametrize("relevant,n,want", [({3}, 1, 1.0), ({2, 9}, 2, 0.0), ({1, 2}, 3, 1.0)])
def test_recall_examples(relevant, n, want):
    assert recall_at_n([3, 1, 2], relevant, n) == want


def test_ndcg_examples():
    assert ndcg_at_n([7, 1, 2, 3, 4], {7}, 5) == 1.0
    assert ndcg_at_n([1, 7, 2, 3, 4], {7}, 5) == pytest.approx(1 / math.log2(3), abs=1e-15)
    assert ndcg_at_n([1, 7, 2, 3, 4], {7}, 5) == pytest.approx(0.630930, abs=1e-6)
    assert ndcg_at_n([1, 2, 3, 4, 5, 7], {7}, 5) == 0.0


@pytest.mark.parametrize("fn", [recall_at_n, ndcg_at_n])
def test_metrics_reject_bad_input(fn):
    with pytest.raises(EmptyRelevant):
        fn([1, 2], set(), 1)
    with pytest.raises(ValueError):
        fn([1, 2], {1}, 0)


def test_ndcg_ideal_truncated_at_n():
    # three relevant items but n=2: a perfect top-2 is already ideal
    assert ndcg_at_n([0, 1, 5], {0, 1, 2}, 2) == 1.0


ranking = st.permutations(list(range(8)))
relevant_st = st.sets(st.integers(0, 7), min_size=1)


@settings(max_examples=200, deadline=None)
@given(ranking, relevant_st)
def test_recall_monotone_in_n(ranked, relevant):
    vals = [recall_at_n(ranked, relevant, n) for n in range(1, 10)]
    assert vals == sorted(vals) and all(0 <= v <= 1 for v in vals)


@settings(max_examples=200, deadline=None)
@given(ranking, relevant_st, st.integers(1, 8))
def test_ndcg_one_iff_ideal_prefix(ranked, relevant, n):
    prefix = ranked[:min(n, len(relevant))]
    ideal = all(i in relevant for i in prefix)
    val = ndcg_at_n(ranked, relevant, n)
    assert 0 <= val <= 1 + 1e-12
    assert (abs(val - 1) < 1e-12) == ideal


@settings(max_examples=200, deadline=None)
@given(ranking, relevant_st, st.integers(1, 8), st.randoms(use_true_random=False))
def test_metrics_ignore_relabeling_below_cutoff(ranked, relevant, n, rnd):
    tail = list(ranked[n:])
    irrelevant = [x for x in tail if x not in relevant]
    shuffled = irrelevant[:]
    rnd.shuffle(shuffled)
    mapping = dict(zip(irrelevant, shuffled))
    relabeled = list(ranked[:n]) + [mapping.get(x, x) for x in tail]
    assert recall_at_n(relabeled, relevant, n) == recall_at_n(ranked, relevant, n)
    assert ndcg_at_n(relabeled, relevant, n) == ndcg_at_n(ranked, relevant, n)


@settings(max_examples=100, deadline=None)
@given(ranking, relevant_st, st.integers(1, 8))
def test_ndcg_matches_oracle(ranked, relevant, n):
    assert abs(ndcg_at_n(ranked, relevant, n) - oracles.dcg_ndcg(ranked, relevant, n)) < 1e-12


# -- evaluate_model ---------------------------------------------------------------

def test_perfect_scorer():
    train = make_dataset([(0, 0, 0), (1, 1, 1)], 2, 6, 2)
    holdout = Holdout([[0, 3, 0], [0, 4, 0], [1, 2, 1], [1, 5, 0]])
    truth = group_holdout(holdout)

    def scorer(p, r):
        s = np.zeros(6)
        s[list(truth[(p, r)])] = 1
        return s

    rep = evaluate_model(scorer, train, holdout, (2, 5))
    assert rep.users_evaluated == 3
    assert rep.recall[2] == rep.recall[5] == 1.0 and rep.ndcg[2] == 1.0


def test_random_scorer_recall_near_ten_percent():
    rng = np.random.default_rng(0)
    P = 1000
    train = make_dataset([(p, int(rng.integers(100)), 1) for p in range(P)], P, 100, 2)
    hold = []
    for p in range(P):
        q = int(rng.integers(100))
        while train.has_user_item(p, q):
            q = int(rng.integers(100))
        hold.append((p, q, 0))
    scorer = lambda p, r: np.random.default_rng([7, p, r]).random(100)
    rep = evaluate_model(scorer, train, Holdout(hold), (10,), exclude_train=False)
    assert rep.users_evaluated == P
    assert abs(rep.recall[10] - 0.10) <= 0.03


def test_popularity_dominant_item_ranks_first():
    triples = [(p, 0, 0) for p in range(6)] + [(p, 1 + p % 3, 0) for p in range(6)]
    train = make_dataset(triples, 6, 4, 1)
    pop = fit_popularity(train).popularity
    assert pop[0] / pop.sum() == 0.5
    # the popularity scorer ignores the context, so one ranking covers every user
    assert rank_scores(pop, 4, ())[0] == 0


def test_exclude_train_changes_ranking():
    train = make_dataset([(0, 0, 0)], 1, 3, 1)
    holdout = Holdout([[0, 1, 0]])
    scorer = lambda p, r: np.array([3.0, 2.0, 1.0])
    assert evaluate_model(scorer, train, holdout, (1,)).recall[1] == 1.0
    assert evaluate_model(scorer, train, holdout, (1,), exclude_train=False).recall[1] == 0.0


def test_cold_triples_skipped_by_default():
    train = make_dataset([(0, 0, 0)], 2, 3, 1)
    holdout = Holdout([[0, 1, 0], [1, 2, 0]], [False, True])
    scorer = lambda p, r: np.zeros(3)
    assert evaluate_model(scorer, train, holdout, (3,)).users_evaluated == 1
    assert evaluate_model(scorer, train, holdout, (3,), include_cold=True).users_evaluated == 2


def test_empty_holdout_report():
    train = make_dataset([(0, 0, 0)], 1, 2, 1)
    rep = evaluate_model(lambda p, r: np.zeros(2), train, Holdout.empty(), (5,))
    assert rep.users_evaluated == 0 and rep.recall[5] == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([np.exp, np.arctan, lambda x: 3 * x + 1]))
def test_monotone_transform_leaves_report_unchanged(seed, f):
    rng = np.random.default_rng(seed)
    train = make_dataset(rng.integers(0, (4, 10, 2), size=(12, 3)), 4, 10, 2)
    hold = [t for t in rng.integers(0, (4, 10, 2), size=(10, 3)).tolist()
            if tuple(t) not in train.positives_A]
    holdout = Holdout(np.array(hold).reshape(-1, 3))
    table = rng.normal(size=(4, 2, 10))
    base = evaluate_model(lambda p, r: table[p, r], train, holdout, (1, 3, 5))
    moved = evaluate_model(lambda p, r: f(table[p, r]), train, holdout, (1, 3, 5))
    assert base == moved


def test_evaluate_split_and_sampling():
    train = make_dataset([(0, 0, 0), (1, 0, 0), (2, 0, 0)], 3, 3, 1)
    sp = Split(train, Holdout([[0, 1, 0]]), Holdout([[1, 2, 0], [2, 1, 0]]), seed=0)
    scorer = lambda p, r: np.array([0.0, 1.0, 2.0])
    assert evaluate_split(scorer, sp, "validation", cutoffs=(1,)).users_evaluated == 1
    assert evaluate_split(scorer, sp, cutoffs=(1,)).recall[1] == 0.5
    with pytest.raises(ValueError):
        evaluate_split(scorer, sp, "train")
    small = sample_holdout_users(sp.test, 1, np.random.default_rng(0))
    assert len(np.unique(small.triples[:, 0])) == 1


# -- comparison ---------------------------------------------------------------------

def report(recall, ndcg=0.5, cutoffs=(10,)):
    return MetricsReport(cutoffs, {n: recall for n in cutoffs}, {n: ndcg for n in cutoffs}, 3)


def test_compare_identical_reports():
    cmp = compare_models({"a": report(0.3), "b": report(0.3)}, reference="a")
    assert all(r.recall_gain == 0 and r.ndcg_gain == 0 for r in cmp.rows)


def test_compare_twenty_percent():
    cmp = compare_models([("dcfa", report(0.12)), ("vbpr", report(0.10))], reference="vbpr")
    assert cmp.row("dcfa", 10).recall_gain == pytest.approx(0.2)
    assert "0.2000" in str(cmp) and "0.2000" in cmp.to_tsv()


def test_compare_zero_reference():
    cmp = compare_models({"a": report(0.1), "ref": report(0.0)}, reference="ref")
    assert cmp.row("a", 10).recall_gain is None
    assert "n/a" in cmp.to_tsv()


def test_compare_errors():
    with pytest.raises(CutoffMismatch):
        compare_models({"a": report(0.1, cutoffs=(5,)), "b": report(0.1, cutoffs=(10,))})
    with pytest.raises(KeyError):
        compare_models({"a": report(0.1)}, reference="zzz")
    assert compare_models({}).rows == []


def test_tsv_layout():
    rep = report(0.25, 0.125, (5, 10))
    assert rep.to_tsv("m").splitlines() == ["model\tcutoff\trecall\tndcg\tusers_evaluated",
                                            "m\t5\t0.250000\t0.125000\t3", "m\t10\t0.250000\t0.125000\t3"]
    both = reports_to_tsv({"a": rep, "b": rep})
    assert len(both.splitlines()) == 5
    assert "contexts evaluated: 3" in str(rep)
