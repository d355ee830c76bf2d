"""Exploration strategies mapping oracle scores to action distributions.

Every agent exposes ``act(observation) -> ActionDistribution`` and
``fit(buffer)``.  ``act`` must report a full probability vector over the
candidate list, not just the chosen action, so the generated logs stay
usable by importance-sampling estimators.  Deterministic strategies are
floor-smoothed for the same reason.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .oracles import (CRMExample, LogisticOracle, NonlinearOracle,
                      RidgeOracle, fit_crm, gradient_oracle_to_dict)

STRATEGIES = (
    "random", "most_popular", "epsilon_greedy", "softmax",
    "lin_ucb", "lin_ts", "custom_lin_ucb",
    "adaptive_greedy", "percentile_adaptive_greedy", "explore_then_exploit",
)


@dataclass(frozen=True)
class ActionDistribution:
    """Per-candidate probabilities plus the sampled choice."""

    candidates: tuple
    probabilities: np.ndarray
    chosen: str
    strategy_tag: str

    def prob_of_chosen(self) -> float:
        return float(self.probabilities[self.candidates.index(self.chosen)])


@dataclass
class BanditConfig:
    strategy: str = "random"
    epsilon: float = 0.1
    tau: float = 1.0
    alpha: float = 1.0
    ts_variance: float = 1.0
    ts_draws: int = 64
    decay: float = 0.999
    initial_threshold: float = 1.0
    percentile: float = 90.0
    window: int = 500
    t_switch: int = 0
    eps_p: float | None = None  # None -> 0.01 / K at act time
    seed: int = 0
    # oracle settings
    lam: float = 1.0
    per_arm: bool = False
    hidden_width: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.0
    use_crm: bool = True
    w_max: float = 15.0
    epochs: int = 10
    batch_size: int = 128

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if not 0 <= self.epsilon <= 1:
            raise ConfigError("epsilon must be in [0, 1]")
        if self.tau <= 0:
            raise ConfigError("temperature must be positive")
        if self.alpha < 0:
            raise ConfigError("ucb width must be non-negative")
        if not 0 < self.percentile < 100:
            raise ConfigError("percentile must be in (0, 100)")


# ---------------------------------------------------------------------------
# Pure probability maps

def smooth_floor(probs: np.ndarray, eps_p: float) -> np.ndarray:
    """Mix toward uniform just enough to guarantee min prob >= eps_p."""
    k = len(probs)
    if eps_p < 0 or eps_p >= 1.0 / k:
        raise ConfigError("propensity floor must be in [0, 1/K)")
    if probs.min() >= eps_p:
        return probs
    return (1.0 - k * eps_p) * probs + eps_p


def one_hot(k: int, idx: int) -> np.ndarray:
    p = np.zeros(k)
    p[idx] = 1.0
    return p


def epsilon_greedy(scores: np.ndarray, epsilon: float) -> np.ndarray:
    k = len(scores)
    probs = np.full(k, epsilon / k)
    probs[int(np.argmax(scores))] += 1.0 - epsilon
    return probs


def softmax_explorer(scores: np.ndarray, tau: float) -> np.ndarray:
    z = np.asarray(scores, dtype=float) / tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def explore_then_exploit(scores: np.ndarray, step: int, t_switch: int) -> np.ndarray:
    k = len(scores)
    if step < t_switch:
        return np.full(k, 1.0 / k)
    return one_hot(k, int(np.argmax(scores)))


def adaptive_greedy(scores: np.ndarray, threshold: float) -> np.ndarray:
    k = len(scores)
    if scores.max() >= threshold:
        return one_hot(k, int(np.argmax(scores)))
    return np.full(k, 1.0 / k)


# ---------------------------------------------------------------------------
# Agents

class BaseAgent:
    """Common act plumbing: score candidates, map to probabilities, sample."""

    oracle = None
    needs_features = True

    def __init__(self, config: BanditConfig, encode_fn, dim: int):
        self.config = config
        self.encode = encode_fn
        self.dim = dim
        self.rng = np.random.default_rng(config.seed)
        self.step_count = 0
        self._fitted_upto = 0
        self.frozen = False  # test pass: no schedule/state mutation in act

    def _phis(self, obs) -> np.ndarray:
        return np.array([self.encode(obs, a) for a in obs.candidate_actions])

    def _scores(self, obs, phis: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _probabilities(self, obs, scores: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def act(self, obs) -> ActionDistribution:
        cands = tuple(obs.candidate_actions)
        if not cands:
            raise DataError("no candidate actions")
        k = len(cands)
        phis = self._phis(obs) if self.needs_features else None
        scores = self._scores(obs, phis)
        probs = self._probabilities(obs, np.asarray(scores, dtype=float))
        eps_p = self.config.eps_p if self.config.eps_p is not None else 0.01 / k
        probs = smooth_floor(probs, eps_p)
        probs = probs / probs.sum()
        chosen = cands[self.rng.choice(k, p=probs)]
        if not self.frozen:
            self.step_count += 1
        return ActionDistribution(cands, probs, chosen, self.config.strategy)

    def observe(self, obs, dist: ActionDistribution, result):
        pass

    def fit(self, buffer):
        pass

    # -- checkpointing ------------------------------------------------------

    def state_dict(self) -> dict:
        return {"strategy": self.config.strategy,
                "step_count": self.step_count,
                "fitted_upto": self._fitted_upto}

    def load_state_dict(self, d: dict):
        self.step_count = d["step_count"]
        self._fitted_upto = d["fitted_upto"]


class RandomAgent(BaseAgent):
    needs_features = False

    def _scores(self, obs, phis):
        return np.zeros(len(obs.candidate_actions))

    def _probabilities(self, obs, scores):
        k = len(scores)
        return np.full(k, 1.0 / k)


class MostPopularAgent(BaseAgent):
    """One-hot on the candidate most often seen as ground truth so far."""

    needs_features = False

    def __init__(self, config, encode_fn, dim):
        super().__init__(config, encode_fn, dim)
        self.counts: dict = {}

    def _scores(self, obs, phis):
        return np.array([self.counts.get(a, 0) for a in obs.candidate_actions],
                        dtype=float)

    def _probabilities(self, obs, scores):
        return one_hot(len(scores), int(np.argmax(scores)))

    def observe(self, obs, dist, result):
        a = result.ground_truth_action
        self.counts[a] = self.counts.get(a, 0) + 1

    def state_dict(self):
        d = super().state_dict()
        d["counts"] = dict(self.counts)
        return d

    def load_state_dict(self, d):
        super().load_state_dict(d)
        self.counts = dict(d["counts"])


class _GradientAgent(BaseAgent):
    """Shared machinery for logistic-oracle strategies with CRM batch fit."""

    def __init__(self, config, encode_fn, dim):
        super().__init__(config, encode_fn, dim)
        self.oracle = LogisticOracle(dim, lr=config.lr,
                                     weight_decay=config.weight_decay)

    def _scores(self, obs, phis):
        return self.oracle.score(phis)

    def fit(self, buffer):
        entries = list(buffer)
        if not entries:
            return
        batch = [CRMExample(e.phi, e.reward, e.probability, len(e.candidates))
                 for e in entries]
        self.loss_trace = fit_crm(
            self.oracle, batch, use_crm=self.config.use_crm,
            w_max=self.config.w_max, epochs=self.config.epochs,
            batch_size=self.config.batch_size, rng=self.rng)
        self._fitted_upto = len(entries)


class EpsilonGreedyAgent(_GradientAgent):
    def _probabilities(self, obs, scores):
        return epsilon_greedy(scores, self.config.epsilon)


class SoftmaxAgent(_GradientAgent):
    def _probabilities(self, obs, scores):
        return softmax_explorer(scores, self.config.tau)


class ExploreThenExploitAgent(_GradientAgent):
    def _probabilities(self, obs, scores):
        return explore_then_exploit(scores, self.step_count,
                                    self.config.t_switch)


class AdaptiveGreedyAgent(_GradientAgent):
    """Exploit when the best score clears a multiplicatively decaying
    threshold, else explore uniformly."""

    def __init__(self, config, encode_fn, dim):
        super().__init__(config, encode_fn, dim)
        self.threshold = config.initial_threshold

    def _probabilities(self, obs, scores):
        probs = adaptive_greedy(scores, self.threshold)
        if not self.frozen:
            self.threshold *= self.config.decay
        return probs

    def state_dict(self):
        d = super().state_dict()
        d["threshold"] = self.threshold
        return d

    def load_state_dict(self, d):
        super().load_state_dict(d)
        self.threshold = d["threshold"]


class PercentileAdaptiveGreedyAgent(_GradientAgent):
    """Threshold is the p-th percentile of recent max scores."""

    def __init__(self, config, encode_fn, dim):
        super().__init__(config, encode_fn, dim)
        self.recent_max = deque(maxlen=config.window)

    def _probabilities(self, obs, scores):
        if self.recent_max:
            threshold = float(np.percentile(self.recent_max,
                                            self.config.percentile))
        else:
            threshold = self.config.initial_threshold
        probs = adaptive_greedy(scores, threshold)
        if not self.frozen:
            self.recent_max.append(float(scores.max()))
        return probs

    def state_dict(self):
        d = super().state_dict()
        d["recent_max"] = list(self.recent_max)
        return d

    def load_state_dict(self, d):
        super().load_state_dict(d)
        self.recent_max = deque(d["recent_max"], maxlen=self.config.window)


class LinUCBAgent(BaseAgent):
    """Ridge mean plus alpha * sqrt(phi' A^-1 phi) exploration bonus."""

    def __init__(self, config, encode_fn, dim):
        super().__init__(config, encode_fn, dim)
        self.oracle = RidgeOracle(dim, lam=config.lam, per_arm=config.per_arm)

    def _arm_ids(self, obs):
        return list(obs.candidate_actions) if self.config.per_arm else None

    def _scores(self, obs, phis):
        arms = self._arm_ids(obs)
        mean = self.oracle.score(phis, arms)
        if self.config.alpha == 0:
            return mean
        return mean + self.config.alpha * self.oracle.ucb_bonus(phis, arms)

    def _probabilities(self, obs, scores):
        return one_hot(len(scores), int(np.argmax(scores)))

    def fit(self, buffer):
        entries = list(buffer)
        for e in entries[self._fitted_upto:]:
            arm = e.chosen if self.config.per_arm else None
            self.oracle.update(e.phi, e.reward, arm)
        self._fitted_upto = len(entries)


class LinTSAgent(LinUCBAgent):
    """Thompson sampling over the ridge posterior; probabilities estimated
    by Monte-Carlo redraws of the parameter vector."""

    def act(self, obs) -> ActionDistribution:
        cands = tuple(obs.candidate_actions)
        k = len(cands)
        phis = self._phis(obs)
        m = max(1, self.config.ts_draws)
        wins = np.zeros(k)
        for _ in range(m):
            theta = self.oracle.sample_theta(self.rng, self.config.ts_variance)
            wins[int(np.argmax(phis @ theta))] += 1
        probs = wins / m
        eps_p = self.config.eps_p if self.config.eps_p is not None else 0.01 / k
        probs = smooth_floor(probs, eps_p)
        probs = probs / probs.sum()
        chosen = cands[self.rng.choice(k, p=probs)]
        if not self.frozen:
            self.step_count += 1
        return ActionDistribution(cands, probs, chosen, self.config.strategy)


class CustomLinUCBAgent(BaseAgent):
    """Nonlinear reward model with a linear-UCB bonus over its hidden
    representation."""

    def __init__(self, config, encode_fn, dim):
        super().__init__(config, encode_fn, dim)
        self.oracle = NonlinearOracle(dim, hidden_width=config.hidden_width,
                                      lr=config.lr,
                                      weight_decay=config.weight_decay,
                                      seed=config.seed)
        self.head = RidgeOracle(config.hidden_width, lam=config.lam)

    def _scores(self, obs, phis):
        mean = self.oracle.score(phis)
        if self.config.alpha == 0:
            return mean
        hidden = self.oracle.hidden(phis)
        return mean + self.config.alpha * self.head.ucb_bonus(hidden)

    def _probabilities(self, obs, scores):
        return one_hot(len(scores), int(np.argmax(scores)))

    def fit(self, buffer):
        entries = list(buffer)
        if not entries:
            return
        batch = [CRMExample(e.phi, e.reward, e.probability, len(e.candidates))
                 for e in entries]
        self.loss_trace = fit_crm(
            self.oracle, batch, use_crm=self.config.use_crm,
            w_max=self.config.w_max, epochs=self.config.epochs,
            batch_size=self.config.batch_size, rng=self.rng)
        # representation moved; rebuild the uncertainty head from scratch
        self.head = RidgeOracle(self.config.hidden_width, lam=self.config.lam)
        for e in entries:
            self.head.update(self.oracle.hidden(e.phi)[0], e.reward)
        self._fitted_upto = len(entries)


_AGENTS = {
    "random": RandomAgent,
    "most_popular": MostPopularAgent,
    "epsilon_greedy": EpsilonGreedyAgent,
    "softmax": SoftmaxAgent,
    "lin_ucb": LinUCBAgent,
    "lin_ts": LinTSAgent,
    "custom_lin_ucb": CustomLinUCBAgent,
    "adaptive_greedy": AdaptiveGreedyAgent,
    "percentile_adaptive_greedy": PercentileAdaptiveGreedyAgent,
    "explore_then_exploit": ExploreThenExploitAgent,
}


def make_agent(config: BanditConfig, encode_fn, dim: int) -> BaseAgent:
    return _AGENTS[config.strategy](config, encode_fn, dim)


def agent_checkpoint(agent: BaseAgent) -> dict:
    """Serializable bundle: oracle parameters plus strategy state.

    Excludes the sampling generator, so two checkpoints are equal exactly
    when the agent's learned parameters and schedules are equal.
    """
    d = {"config": dict(agent.config.__dict__), "state": agent.state_dict()}
    oracle = agent.oracle
    if isinstance(oracle, RidgeOracle):
        d["oracle"] = oracle.to_dict()
    elif oracle is not None:
        d["oracle"] = gradient_oracle_to_dict(oracle)
    if hasattr(agent, "head"):
        d["head"] = agent.head.to_dict()
    return d


def restore_agent(checkpoint: dict, encode_fn, dim: int) -> BaseAgent:
    from .oracles import gradient_oracle_from_dict
    config = BanditConfig(**checkpoint["config"])
    agent = make_agent(config, encode_fn, dim)
    agent.load_state_dict(checkpoint["state"])
    if "oracle" in checkpoint:
        if checkpoint["oracle"]["kind"] == "ridge":
            agent.oracle = RidgeOracle.from_dict(checkpoint["oracle"])
        else:
            agent.oracle = gradient_oracle_from_dict(checkpoint["oracle"])
    if "head" in checkpoint:
        agent.head = RidgeOracle.from_dict(checkpoint["head"])
    return agent
