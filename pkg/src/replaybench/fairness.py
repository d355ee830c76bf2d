"""Fairness diagnostics over simulation and evaluation logs.

Three views, each sliced by one sensitive attribute at a time:

* treatment  -- does the policy's action distribution shift across groups?
  Reported as total-variation distance between the marginal distribution
  and each group-conditional one.
* impact     -- do popular actions receive different scores per group?
* mistreatment -- do match rates (true positive rate, accuracy) differ
  per group?

Attributes may live on the user or on the item side; item-side values are
joined through the ground-truth action's catalog row.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .dataset import Dataset, UNKNOWN
from .errors import DataError


@dataclass(frozen=True)
class FairnessSlice:
    attribute: str
    value: str
    metric: str  # action_share | mean_score | tpr | accuracy
    estimate: float
    ci_low: float
    ci_high: float
    support: int
    low_support: bool

    def as_row(self) -> dict:
        return dict(self.__dict__)


def wilson_interval(successes: int, n: int, confidence: float = 0.95):
    """Wilson score interval for a binomial rate; robust for small slices."""
    if n == 0:
        return (0.0, 1.0)
    z = norm.ppf(0.5 + confidence / 2)
    p = successes / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def normal_interval(values: np.ndarray, confidence: float = 0.95):
    n = len(values)
    mean = float(values.mean())
    if n < 2:
        return (mean, mean)
    z = norm.ppf(0.5 + confidence / 2)
    half = z * float(values.std(ddof=1)) / np.sqrt(n)
    return (mean - half, mean + half)


class AttributeResolver:
    """Maps a log entry to its sensitive-attribute value via the catalogs."""

    def __init__(self, dataset: Dataset, attribute: str):
        self.attribute = attribute
        in_users = any(attribute in attrs for attrs in dataset.user_catalog.values())
        in_items = any(attribute in attrs for attrs in dataset.item_catalog.values())
        if not in_users and not in_items:
            raise DataError(f"sensitive attribute {attribute!r} not found "
                            "in any catalog")
        self.side = "user" if in_users else "item"
        self.dataset = dataset

    def value(self, entry) -> str:
        if self.side == "user":
            attrs = self.dataset.user_catalog.get(entry.user, {})
        else:
            attrs = self.dataset.item_catalog.get(entry.ground_truth, {})
        return str(attrs.get(self.attribute, UNKNOWN))


@dataclass
class TreatmentReport:
    attribute: str
    marginal: dict  # action -> probability mass
    per_value: dict  # z value -> {"distribution", "tv", "support"}


def _mean_action_distribution(entries) -> dict:
    dist: dict = defaultdict(float)
    for e in entries:
        for a, p in zip(e.candidates, e.probs):
            dist[a] += p
    n = len(entries)
    return {a: v / n for a, v in dist.items()}


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def disparate_treatment(sim_log, resolver: AttributeResolver) -> TreatmentReport:
    """Marginal vs group-conditional policy action distributions."""
    if not sim_log:
        raise DataError("empty simulation log")
    marginal = _mean_action_distribution(sim_log)
    groups: dict = defaultdict(list)
    for e in sim_log:
        groups[resolver.value(e)].append(e)
    per_value = {}
    for z, entries in sorted(groups.items()):
        cond = _mean_action_distribution(entries)
        per_value[z] = {"distribution": cond,
                        "tv": total_variation(marginal, cond),
                        "support": len(entries)}
    return TreatmentReport(resolver.attribute, marginal, per_value)


def disparate_impact(sim_log, resolver: AttributeResolver, top_m: int = 5,
                     min_support: int = 30) -> list[FairnessSlice]:
    """Per-group mean score of the most frequently chosen actions."""
    if not sim_log:
        raise DataError("empty simulation log")
    chosen_counts = Counter(e.chosen for e in sim_log)
    top_actions = [a for a, _ in chosen_counts.most_common(min(top_m,
                                                               len(chosen_counts)))]
    slices = []
    for action in top_actions:
        scores: dict = defaultdict(list)
        for e in sim_log:
            if action in e.candidates:
                z = resolver.value(e)
                scores[z].append(e.probs[e.candidates.index(action)])
        for z, vals in sorted(scores.items()):
            arr = np.array(vals)
            lo, hi = normal_interval(arr)
            slices.append(FairnessSlice(
                attribute=f"{resolver.attribute}/action={action}", value=z,
                metric="mean_score", estimate=float(arr.mean()),
                ci_low=lo, ci_high=hi, support=len(vals),
                low_support=len(vals) < min_support))
    return slices


def disparate_mistreatment(sim_log, resolver: AttributeResolver,
                           min_support: int = 30) -> list[FairnessSlice]:
    """Per-group true positive rate (chosen == ground truth) with Wilson CIs."""
    if not sim_log:
        raise DataError("empty simulation log")
    groups: dict = defaultdict(list)
    for e in sim_log:
        groups[resolver.value(e)].append(int(e.chosen == e.ground_truth))
    slices = []
    for z, outcomes in sorted(groups.items()):
        n = len(outcomes)
        hits = sum(outcomes)
        lo, hi = wilson_interval(hits, n)
        rate = hits / n
        for metric in ("tpr", "accuracy"):
            # with exactly one relevant action per step the two coincide
            slices.append(FairnessSlice(
                attribute=resolver.attribute, value=z, metric=metric,
                estimate=rate, ci_low=lo, ci_high=hi, support=n,
                low_support=n < min_support))
    return slices


def mistreatment_gaps(slices: list[FairnessSlice]) -> list[dict]:
    """Pairwise TPR gaps between groups, with conservative interval bounds."""
    tpr = [s for s in slices if s.metric == "tpr"]
    gaps = []
    for i in range(len(tpr)):
        for j in range(i + 1, len(tpr)):
            a, b = tpr[i], tpr[j]
            gaps.append({
                "attribute": a.attribute,
                "group_a": a.value, "group_b": b.value,
                "gap": a.estimate - b.estimate,
                "gap_ci_low": a.ci_low - b.ci_high,
                "gap_ci_high": a.ci_high - b.ci_low,
            })
    return gaps
