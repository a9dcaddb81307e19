"""Top-n evaluation: Recall@n, NDCG@n, per-context averaging and model comparison.

The evaluation unit is a ``(user, interval)`` context that owns at least one
held-out triple; its relevant set is the held-out items of that context.
Metrics are averaged uniformly over contexts.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Holdout, Split
from .exceptions import CutoffMismatch, EmptyRelevant
from .models import rank_scores

DEFAULT_CUTOFFS = (5, 10, 20, 50, 100)


def recall_at_n(ranked, relevant, n: int) -> float:
    """``|top-n & relevant| / |relevant|``."""
    relevant = set(relevant)
    if not relevant:
        raise EmptyRelevant("relevant set is empty")
    if n < 1:
        raise ValueError("n must be >= 1")
    hits = sum(1 for item in list(ranked)[:n] if item in relevant)
    return hits / len(relevant)


def _discount(i: int) -> float:
    return 1.0 / math.log2(i + 1)


def ndcg_at_n(ranked, relevant, n: int) -> float:
    """Binary-gain NDCG with ``log2(rank + 1)`` discount, ideal truncated at ``min(n, |relevant|)``."""
    relevant = set(relevant)
    if not relevant:
        raise EmptyRelevant("relevant set is empty")
    if n < 1:
        raise ValueError("n must be >= 1")
    dcg = sum(_discount(i) for i, item in enumerate(list(ranked)[:n], start=1) if item in relevant)
    idcg = sum(_discount(i) for i in range(1, min(n, len(relevant)) + 1))
    return dcg / idcg


@dataclass
class MetricsReport:
    cutoffs: tuple[int, ...]
    recall: dict[int, float]
    ndcg: dict[int, float]
    users_evaluated: int
    exclude_train: bool = True
    include_cold: bool = False

    def rows(self):
        for n in self.cutoffs:
            yield n, self.recall[n], self.ndcg[n]

    def to_tsv(self, model: str = "model", header: bool = True) -> str:
        lines = ["model\tcutoff\trecall\tndcg\tusers_evaluated"] if header else []
        for n, rec, nd in self.rows():
            lines.append(f"{model}\t{n}\t{rec:.6f}\t{nd:.6f}\t{self.users_evaluated}")
        return "\n".join(lines) + "\n"

    def __str__(self) -> str:
        lines = [f"{'n':>5}{'recall':>10}{'ndcg':>10}"]
        lines += [f"{n:>5}{rec:>10.4f}{nd:>10.4f}" for n, rec, nd in self.rows()]
        lines.append(f"contexts evaluated: {self.users_evaluated}")
        return "\n".join(lines)


def group_holdout(holdout: Holdout, include_cold: bool = False) -> dict[tuple[int, int], set[int]]:
    """``(p, r) -> held-out items``; cold triples dropped unless ``include_cold``."""
    groups: dict[tuple[int, int], set[int]] = defaultdict(set)
    for (p, q, r), cold in zip(holdout.triples, holdout.cold):
        if cold and not include_cold:
            continue
        groups[(int(p), int(r))].add(int(q))
    return dict(sorted(groups.items()))


def sample_holdout_users(holdout: Holdout, n_users: int, rng) -> Holdout:
    """Restrict ``holdout`` to at most ``n_users`` randomly chosen users."""
    users = np.unique(holdout.triples[:, 0])
    if len(users) <= n_users:
        return holdout
    chosen = rng.choice(users, size=n_users, replace=False)
    keep = np.isin(holdout.triples[:, 0], chosen)
    return Holdout(holdout.triples[keep], holdout.cold[keep])


def evaluate_model(scorer, train: Dataset, holdout: Holdout, cutoffs=DEFAULT_CUTOFFS,
                   exclude_train: bool = True, include_cold: bool = False) -> MetricsReport:
    """Average Recall@n / NDCG@n over the held-out ``(user, interval)`` contexts.

    ``scorer(p, r)`` returns one score per item. Training items of the user
    are skipped when ``exclude_train`` is set.
    """
    cutoffs = tuple(sorted(set(int(n) for n in cutoffs)))
    if not cutoffs or cutoffs[0] < 1:
        raise ValueError("cutoffs must be positive integers")
    groups = group_holdout(holdout, include_cold)
    rec_sum = {n: 0.0 for n in cutoffs}
    ndcg_sum = {n: 0.0 for n in cutoffs}
    depth = cutoffs[-1]
    for (p, r), relevant in groups.items():
        scores = np.asarray(scorer(p, r), dtype=np.float64)
        exclude = train.per_user_items[p] if exclude_train else ()
        ranked = rank_scores(scores, depth, exclude)
        for n in cutoffs:
            rec_sum[n] += recall_at_n(ranked, relevant, n)
            ndcg_sum[n] += ndcg_at_n(ranked, relevant, n)
    count = len(groups)
    denom = count if count else 1
    return MetricsReport(cutoffs, {n: rec_sum[n] / denom for n in cutoffs},
                         {n: ndcg_sum[n] / denom for n in cutoffs}, count, exclude_train, include_cold)


def evaluate_split(scorer, split: Split, on: str = "test", **kwargs) -> MetricsReport:
    if on not in ("validation", "test"):
        raise ValueError("on must be 'validation' or 'test'")
    return evaluate_model(scorer, split.train, getattr(split, on), **kwargs)


@dataclass
class ComparisonRow:
    model: str
    cutoff: int
    recall: float
    ndcg: float
    recall_gain: float | None = None
    ndcg_gain: float | None = None


@dataclass
class Comparison:
    rows: list[ComparisonRow] = field(default_factory=list)
    reference: str | None = None

    def row(self, model: str, cutoff: int) -> ComparisonRow:
        for r in self.rows:
            if r.model == model and r.cutoff == cutoff:
                return r
        raise KeyError((model, cutoff))

    @staticmethod
    def _fmt_gain(g) -> str:
        return "n/a" if g is None else f"{g:.4f}"

    def __str__(self) -> str:
        width = max([5] + [len(r.model) for r in self.rows]) + 2
        head = f"{'model':<{width}}{'n':>5}{'recall':>10}{'ndcg':>10}"
        if self.reference:
            head += f"{'d_recall':>10}{'d_ndcg':>10}"
        lines = [head]
        for r in self.rows:
            line = f"{r.model:<{width}}{r.cutoff:>5}{r.recall:>10.4f}{r.ndcg:>10.4f}"
            if self.reference:
                line += f"{self._fmt_gain(r.recall_gain):>10}{self._fmt_gain(r.ndcg_gain):>10}"
            lines.append(line)
        if self.reference:
            lines.append(f"relative improvement over {self.reference}: (m - ref) / ref")
        return "\n".join(lines)

    def to_tsv(self) -> str:
        cols = ["model", "cutoff", "recall", "ndcg"]
        if self.reference:
            cols += ["recall_gain", "ndcg_gain"]
        lines = ["\t".join(cols)]
        for r in self.rows:
            vals = [r.model, str(r.cutoff), f"{r.recall:.6f}", f"{r.ndcg:.6f}"]
            if self.reference:
                vals += [self._fmt_gain(r.recall_gain), self._fmt_gain(r.ndcg_gain)]
            lines.append("\t".join(vals))
        return "\n".join(lines) + "\n"


def _gain(m: float, ref: float):
    return None if ref == 0 else (m - ref) / ref


def compare_models(reports, reference: str | None = None) -> Comparison:
    """Tabulate reports (``{name: report}`` or ``[(name, report)]``) against ``reference``."""
    items = list(reports.items()) if isinstance(reports, dict) else list(reports)
    if not items:
        return Comparison([], reference)
    cutoffs = items[0][1].cutoffs
    for name, rep in items:
        if tuple(rep.cutoffs) != tuple(cutoffs):
            raise CutoffMismatch(f"{name} cutoffs {rep.cutoffs} differ from {cutoffs}")
    ref = None
    if reference is not None:
        named = dict(items)
        if reference not in named:
            raise KeyError(f"reference model {reference!r} not among reports")
        ref = named[reference]
    rows = []
    for name, rep in items:
        for n in cutoffs:
            row = ComparisonRow(name, n, rep.recall[n], rep.ndcg[n])
            if ref is not None:
                row.recall_gain = _gain(rep.recall[n], ref.recall[n])
                row.ndcg_gain = _gain(rep.ndcg[n], ref.ndcg[n])
            rows.append(row)
    return Comparison(rows, reference)


def reports_to_tsv(reports) -> str:
    items = list(reports.items()) if isinstance(reports, dict) else list(reports)
    out = "model\tcutoff\trecall\tndcg\tusers_evaluated\n"
    return out + "".join(rep.to_tsv(name, header=False) for name, rep in items)
