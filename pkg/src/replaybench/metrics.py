"""Classic ranking metrics over test-phase evaluation logs.

Each test record yields one ranked candidate list with a single relevant
item (the logged ground-truth action).  All metrics are plain averages
over records and live in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class RankedList:
    """Candidates of one record ordered by descending agent score."""

    ranked: tuple
    relevant: str
    user: str = ""

    def rank_of_relevant(self) -> int | None:
        """1-indexed rank, or None when the relevant item is absent."""
        try:
            return self.ranked.index(self.relevant) + 1
        except ValueError:
            return None


def rank_candidates(candidates, scores) -> tuple:
    """Sort descending by score; ties keep the original candidate order."""
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], i))
    return tuple(candidates[i] for i in order)


def ranked_lists_from_log(entries) -> list[RankedList]:
    """Build ranked lists from sim-log entries using reported probabilities."""
    return [RankedList(rank_candidates(e.candidates, e.probs),
                       e.ground_truth, e.user)
            for e in entries]


def _check(recs):
    if not recs:
        raise DataError("no ranked lists")


def precision_at_k(recs: list[RankedList], k: int) -> float:
    """Single-relevant convention: hit@k / k, averaged over records."""
    _check(recs)
    hits = [(r.rank_of_relevant() or math.inf) <= k for r in recs]
    return float(np.mean(hits)) / k


def hit_rate_at_k(recs: list[RankedList], k: int) -> float:
    _check(recs)
    return float(np.mean([(r.rank_of_relevant() or math.inf) <= k for r in recs]))


def mean_average_precision(recs: list[RankedList]) -> float:
    """With one relevant item per list, AP reduces to the reciprocal rank."""
    _check(recs)
    vals = []
    for r in recs:
        rank = r.rank_of_relevant()
        vals.append(0.0 if rank is None else 1.0 / rank)
    return float(np.mean(vals))


def ndcg_at_k(recs: list[RankedList], k: int) -> float:
    """Ideal DCG is 1 for a single relevant item, so nDCG is the discounted
    gain of the hit position."""
    _check(recs)
    vals = []
    for r in recs:
        rank = r.rank_of_relevant()
        if rank is not None and rank <= k:
            vals.append(1.0 / math.log2(rank + 1))
        else:
            vals.append(0.0)
    return float(np.mean(vals))


def coverage_at_k(recs: list[RankedList], catalog, k: int) -> float:
    """Share of the task catalog that appears in at least one top-k list."""
    _check(recs)
    catalog = set(catalog)
    if not catalog:
        raise DataError("empty catalog")
    shown = set()
    for r in recs:
        shown.update(r.ranked[:k])
    return len(shown & catalog) / len(catalog)


def personalization_at_k(recs: list[RankedList], k: int, seed: int = 0,
                         max_pairs: int = 10_000) -> float:
    """1 - mean pairwise Jaccard overlap of top-k sets across record pairs
    from distinct users; pairs are subsampled deterministically."""
    _check(recs)
    tops = [frozenset(r.ranked[:k]) for r in recs]
    users = [r.user for r in recs]
    pairs = [(i, j) for i in range(len(recs)) for j in range(i + 1, len(recs))
             if users[i] != users[j]]
    if not pairs:
        return 0.0
    if len(pairs) > max_pairs:
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(pairs), size=max_pairs, replace=False)
        pairs = [pairs[i] for i in idx]
    overlaps = []
    for i, j in pairs:
        union = tops[i] | tops[j]
        overlaps.append(len(tops[i] & tops[j]) / len(union) if union else 1.0)
    return 1.0 - float(np.mean(overlaps))


def metric_rows(recs: list[RankedList], catalog, ks=(1, 5),
                seed: int = 0) -> list[dict]:
    """The full metric table as {metric, k, value} rows."""
    rows = [{"metric": "map", "k": None, "value": mean_average_precision(recs)}]
    for k in ks:
        rows += [
            {"metric": "precision", "k": k, "value": precision_at_k(recs, k)},
            {"metric": "hit_rate", "k": k, "value": hit_rate_at_k(recs, k)},
            {"metric": "ndcg", "k": k, "value": ndcg_at_k(recs, k)},
            {"metric": "coverage", "k": k,
             "value": coverage_at_k(recs, catalog, k)},
            {"metric": "personalization", "k": k,
             "value": personalization_at_k(recs, k, seed=seed)},
        ]
    return rows
