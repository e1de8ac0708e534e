"""Stratified top-n evaluation: HR+/-, MRR+/-, coverage and MCC.

Only holdout items carry feedback. A holdout whose rating is at least the
negativity threshold is positive; being in the user's top-n list makes it a
true positive (else a false negative), and a negative holdout in the list is
a false positive (else a true negative). Recommendations without feedback
are ignored.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .models import ContextAggregation, topn

TP, FP, TN, FN = "TP", "FP", "TN", "FN"


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


def classify(holdout_rating, recommended, threshold):
    positive = holdout_rating >= threshold
    if recommended:
        return TP if positive else FP
    return FN if positive else TN


def mcc(c):
    """Matthews correlation coefficient; 0 whenever the denominator vanishes."""
    denom = (c.tp + c.fn) * (c.tp + c.fp) * (c.tn + c.fp) * (c.tn + c.fn)
    if denom == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(denom)


@dataclass(frozen=True)
class MetricsReport:
    hr_pos: float
    hr_neg: float
    mrr_pos: float
    mrr_neg: float
    coverage: float
    mcc: float
    n: int
    threshold: int
    counts: ConfusionCounts
    n_positive: int = 0
    n_negative: int = 0
    empty_strata: tuple = field(default=())

    METRICS = ("hr_pos", "hr_neg", "mrr_pos", "mrr_neg", "coverage", "mcc")
    LABELS = {"hr_pos": "HR+", "hr_neg": "HR-", "mrr_pos": "MRR+", "mrr_neg": "MRR-",
              "coverage": "coverage", "mcc": "MCC"}

    def as_dict(self):
        return {m: getattr(self, m) for m in self.METRICS}

    def to_csv(self):
        lines = ["metric,value"]
        lines += [f"{m},{getattr(self, m):.10g}" for m in self.METRICS]
        c = self.counts
        lines += [f"tp,{c.tp}", f"fp,{c.fp}", f"tn,{c.tn}", f"fn,{c.fn}"]
        return "\n".join(lines) + "\n"

    def to_table(self, title=None):
        return format_table({title or "value": self})


def format_table(reports):
    """Aligned text table with one column per named report."""
    names = list(reports)
    width = max([10] + [len(n) for n in names])
    head = f"{'metric@' + str(next(iter(reports.values())).n):<12}" + "".join(f"{n:>{width + 2}}" for n in names)
    lines = [head, "-" * len(head)]
    for m in MetricsReport.METRICS:
        row = f"{MetricsReport.LABELS[m]:<12}"
        row += "".join(f"{getattr(reports[n], m):>{width + 2}.4f}" for n in names)
        lines.append(row)
    for key in ("tp", "fp", "tn", "fn"):
        row = f"{key.upper():<12}" + "".join(f"{getattr(reports[n].counts, key):>{width + 2}d}" for n in names)
        lines.append(row)
    flagged = {n: r.empty_strata for n, r in reports.items() if r.empty_strata}
    for n, strata in flagged.items():
        lines.append(f"note: {n} has no {' or '.join(strata)} holdouts; those metrics are reported as 0")
    return "\n".join(lines) + "\n"


def compute_metrics(holdout_items, holdout_ratings, recommendations, threshold, n, n_train_items):
    """Metrics from per-user holdouts and their top-n lists (aligned sequences)."""
    if len(holdout_items) == 0:
        raise EvaluationError("empty holdout")
    tp = fp = tn = fn = 0
    rr_pos = rr_neg = 0.0
    n_pos = n_neg = 0
    shown = set()
    for item, rating, recs in zip(holdout_items, holdout_ratings, recommendations):
        recs = list(recs)[:n]
        shown.update(recs)
        rank = recs.index(item) + 1 if item in recs else 0
        if rating >= threshold:
            n_pos += 1
            if rank:
                tp += 1
                rr_pos += 1.0 / rank
            else:
                fn += 1
        else:
            n_neg += 1
            if rank:
                fp += 1
                rr_neg += 1.0 / rank
            else:
                tn += 1
    counts = ConfusionCounts(tp, fp, tn, fn)
    empty = tuple(name for name, size in (("positive", n_pos), ("negative", n_neg)) if size == 0)
    return MetricsReport(
        hr_pos=tp / n_pos if n_pos else 0.0,
        hr_neg=fp / n_neg if n_neg else 0.0,
        mrr_pos=rr_pos / n_pos if n_pos else 0.0,
        mrr_neg=rr_neg / n_neg if n_neg else 0.0,
        coverage=len(shown) / n_train_items if n_train_items else 0.0,
        mcc=mcc(counts),
        n=n,
        threshold=threshold,
        counts=counts,
        n_positive=n_pos,
        n_negative=n_neg,
        empty_strata=empty,
    )


def recommend(model, bundle, contexts, n, stage="test", batch_size=512):
    """Top-n lists for every holdout user of ``stage``.

    Returns ``(holdout_items, holdout_ratings, {context_name: lists})``.
    """
    holdout = bundle.holdout(stage)
    if not holdout:
        raise EvaluationError(f"empty {stage} holdout")
    item_index = bundle.train.item_index
    histories = bundle.histories(stage)
    empty = (np.zeros(0, np.int64), np.zeros(0, np.int64))
    users = [u for u, _ in holdout]
    items = [item_index[h.item] for _, h in holdout]
    ratings = [h.rating for _, h in holdout]
    hists = [histories.get(u, empty) for u in users]
    lists = {ctx.name: [] for ctx in contexts}
    for start in range(0, len(users), batch_size):
        stop = start + batch_size
        scored = model.score_users(users[start:stop], hists[start:stop], contexts)
        for name, block in scored.items():
            for row, (seen, _) in zip(block, hists[start:stop]):
                lists[name].append(topn(row, n, seen))
    return items, ratings, lists


def evaluate_contexts(model, bundle, contexts, n=10, threshold=3, stage="test"):
    items, ratings, lists = recommend(model, bundle, contexts, n, stage)
    return {
        name: compute_metrics(items, ratings, recs, threshold, n, model.n_items)
        for name, recs in lists.items()
    }


def evaluate(model, bundle, ctx=None, n=10, threshold=3, stage="test"):
    ctx = ctx or ContextAggregation.named("only5", model.n_ratings)
    return evaluate_contexts(model, bundle, [ctx], n, threshold, stage)[ctx.name]
