"""Off-policy policy-value estimators and their supporting models.

Direct Method (learned reward model), Inverse Propensity Scoring with
optional capping (CIPS) and self-normalization (SNIPS), and the Doubly
Robust combination.  Propensities come from the log when present and from
a fitted collection-policy model otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .oracles import AdamState

ESTIMATORS = ("DM", "IPS", "CIPS", "SNIPS", "DR")


@dataclass(frozen=True)
class EvalRecord:
    """One logged interaction annotated with evaluated-policy probabilities."""

    context_key: str
    candidates: tuple
    ground_truth: str
    logged_action: str
    reward: float
    propensity: float
    policy_probs: np.ndarray  # aligned with candidates, sums to 1

    def prob_of_logged(self) -> float:
        return float(self.policy_probs[self.candidates.index(self.logged_action)])


@dataclass(frozen=True)
class PolicyEstimate:
    estimator: str
    value: float
    std_error: float
    n: int
    w_max: float | None = None

    def as_row(self) -> dict:
        return {"estimator": self.estimator, "value": self.value,
                "std_error": self.std_error, "n": self.n, "w_max": self.w_max}


def _check_log(log: list[EvalRecord]):
    if not log:
        raise DataError("empty evaluation log")
    for rec in log:
        if rec.propensity <= 0:
            raise DataError("zero propensity in evaluation log")


def _weights(log: list[EvalRecord], w_max: float | None) -> np.ndarray:
    w = np.array([rec.prob_of_logged() / rec.propensity for rec in log])
    if w_max is not None:
        w = np.minimum(w, w_max)
    return w


def estimate_dm(log: list[EvalRecord], rho) -> PolicyEstimate:
    """Direct Method: policy-weighted expected reward under the model.

    ``rho(record) -> array`` returns the modelled reward of every candidate.
    """
    _check_log(log)
    vals = np.array([float(np.dot(rec.policy_probs, rho(rec))) for rec in log])
    n = len(vals)
    return PolicyEstimate("DM", float(vals.mean()),
                          float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
                          n)


def estimate_ips(log: list[EvalRecord], w_max: float | None = None,
                 self_normalize: bool = False) -> PolicyEstimate:
    """Importance-sampling estimate; capped when w_max is set, ratio-of-sums
    (self-normalized) when requested."""
    _check_log(log)
    w = _weights(log, w_max)
    r = np.array([rec.reward for rec in log])
    n = len(log)
    if self_normalize:
        value = float((w * r).sum() / w.sum())
        # delta-method standard error of the weighted ratio
        resid = w * (r - value)
        se = float(np.sqrt((resid ** 2).sum()) / w.sum())
        tag = "SNIPS"
    else:
        value = float((w * r).mean())
        se = float((w * r).std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        tag = "CIPS" if w_max is not None else "IPS"
    return PolicyEstimate(tag, value, se, n, w_max)


def estimate_dr(log: list[EvalRecord], rho,
                w_max: float | None = None) -> PolicyEstimate:
    """Doubly Robust: reward-model baseline with propensity-weighted
    correction on the logged action."""
    _check_log(log)
    w = _weights(log, w_max)
    terms = np.empty(len(log))
    for i, rec in enumerate(log):
        rho_all = np.asarray(rho(rec), dtype=float)
        idx = rec.candidates.index(rec.logged_action)
        dm_term = float(np.dot(rec.policy_probs, rho_all))
        terms[i] = w[i] * (rec.reward - rho_all[idx]) + dm_term
    n = len(terms)
    return PolicyEstimate("DR", float(terms.mean()),
                          float(terms.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
                          n, w_max)


def estimate_all(log: list[EvalRecord], rho,
                 w_max: float = 15.0) -> list[PolicyEstimate]:
    """The full estimator suite: DM, raw and capped IPS, SNIPS, DR."""
    return [
        estimate_dm(log, rho),
        estimate_ips(log),
        estimate_ips(log, w_max=w_max),
        estimate_ips(log, w_max=w_max, self_normalize=True),
        estimate_dr(log, rho, w_max=w_max),
    ]


# ---------------------------------------------------------------------------
# Collection-policy and reward models

class PropensityModel:
    """Multinomial logistic model of the collection policy.

    Candidate scores share one linear weight vector over phi(x, a); the
    per-record distribution is the softmax over that record's candidate
    set, floored at eps_p and renormalized.
    """

    def __init__(self, encode_fn, dim: int, eps_p: float = 1e-3,
                 lr: float = 0.05, epochs: int = 30, seed: int = 0):
        self.encode = encode_fn
        self.dim = dim
        self.eps_p = eps_p
        self.theta = np.zeros(dim)
        self.lr = lr
        self.epochs = epochs
        self.seed = seed
        self.held_out_log_loss = None

    def _scores(self, record) -> np.ndarray:
        phis = np.array([self.encode(record, a)
                         for a in record.candidate_actions])
        return phis @ self.theta

    def distribution(self, record) -> np.ndarray:
        z = self._scores(record)
        z -= z.max()
        p = np.exp(z)
        p /= p.sum()
        p = np.maximum(p, self.eps_p)
        return p / p.sum()

    def propensity(self, record) -> float:
        idx = record.candidate_actions.index(record.shown_action)
        return float(self.distribution(record)[idx])

    def fit(self, records) -> "PropensityModel":
        records = list(records)
        if not records:
            raise DataError("no records to fit propensity model")
        rng = np.random.default_rng(self.seed)
        order = rng.permutation(len(records))
        n_held = max(1, len(records) // 10)
        held = [records[i] for i in order[:n_held]]
        train = [records[i] for i in order[n_held:]] or held
        cache = [(np.array([self.encode(r, a) for a in r.candidate_actions]),
                  r.candidate_actions.index(r.shown_action))
                 for r in train]
        opt = AdamState(self.dim, lr=self.lr)
        for _ in range(self.epochs):
            for i in rng.permutation(len(cache)):
                phis, idx = cache[i]
                z = phis @ self.theta
                z -= z.max()
                p = np.exp(z)
                p /= p.sum()
                grad = phis.T @ p - phis[idx]
                self.theta = opt.step(self.theta, grad)
        losses = [-np.log(max(self.propensity(r), 1e-12)) for r in held]
        self.held_out_log_loss = float(np.mean(losses))
        return self


class RewardModel:
    """Binary logistic model of the success probability of (context, action).

    Trained on the whole processed dataset: every record contributes its
    shown action with the success flag as the label.  Degenerate
    single-class data falls back to the empirical base rate, flagged.
    """

    def __init__(self, encode_fn, dim: int, lr: float = 0.05,
                 epochs: int = 30, batch_size: int = 256, seed: int = 0):
        from .oracles import LogisticOracle
        self.encode = encode_fn
        self.oracle = LogisticOracle(dim, lr=lr)
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.degenerate = False
        self.base_rate = None
        self.held_out_log_loss = None

    def fit(self, records) -> "RewardModel":
        records = list(records)
        if not records:
            raise DataError("no records to fit reward model")
        y = np.array([float(r.success) for r in records])
        if y.min() == y.max():
            self.degenerate = True
            self.base_rate = float(y.mean())
            self.held_out_log_loss = 0.0
            return self
        rng = np.random.default_rng(self.seed)
        X = np.array([self.encode(r, r.shown_action) for r in records])
        order = rng.permutation(len(records))
        n_held = max(1, len(records) // 10)
        hi, ti = order[:n_held], order[n_held:]
        if len(ti) == 0:
            ti = hi
        w = np.ones(len(ti))
        for _ in range(self.epochs):
            perm = rng.permutation(len(ti))
            for start in range(0, len(ti), self.batch_size):
                idx = ti[perm[start:start + self.batch_size]]
                _, grad = self.oracle.loss_and_grad(X[idx], y[idx],
                                                    np.ones(len(idx)))
                self.oracle.set_params(
                    self.oracle.opt.step(self.oracle.get_params(), grad))
        p = np.clip(self.oracle.score(X[hi]), 1e-12, 1 - 1e-12)
        self.held_out_log_loss = float(
            -(y[hi] * np.log(p) + (1 - y[hi]) * np.log(1 - p)).mean())
        return self

    def predict(self, record) -> np.ndarray:
        """Expected reward for every candidate of the record."""
        if self.degenerate:
            return np.full(len(record.candidate_actions), self.base_rate)
        phis = np.array([self.encode(record, a)
                         for a in record.candidate_actions])
        return self.oracle.score(phis)


def fit_propensity(dataset, encode_fn, dim: int, **kw) -> PropensityModel:
    return PropensityModel(encode_fn, dim, **kw).fit(dataset.records)


def fit_reward(dataset, encode_fn, dim: int, **kw) -> RewardModel:
    return RewardModel(encode_fn, dim, **kw).fit(dataset.records)
