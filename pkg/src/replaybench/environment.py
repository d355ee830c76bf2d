"""Replay the success-filtered log as a sequential decision environment.

Each step serves one logged interaction as an observation; the agent picks
an action from the impression list and earns reward 1 only when its choice
matches the item the user actually clicked.  An episode is one full pass
over the filtered log, in timestamp order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .dataset import Dataset, InteractionRecord
from .errors import DataError

TERMINAL = None


@dataclass(frozen=True)
class Observation:
    user_id: str
    context_features: dict
    candidate_actions: tuple
    step_index: int
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class StepResult:
    reward: int
    next_observation: Observation | None
    done: bool
    ground_truth_action: str


@dataclass
class SimLogEntry:
    """One replayed step: what the agent saw, did, and earned."""

    step: int
    user: str
    context_key: str
    candidates: list
    probs: list
    chosen: str
    reward: int
    ground_truth: str
    propensity: float | None

    def to_json(self) -> str:
        return json.dumps(self.__dict__)

    @classmethod
    def from_json(cls, line: str) -> "SimLogEntry":
        d = json.loads(line)
        d["candidates"] = list(d["candidates"])
        return cls(**d)


def _observe(record: InteractionRecord, step: int) -> Observation:
    # shown_action is the ground truth for success records; it must not
    # leak into the observation except as one candidate among many.
    info = {"impression_order": list(record.candidate_actions)}
    if record.logged_propensity is not None:
        info["logged_propensity"] = record.logged_propensity
    return Observation(
        user_id=record.user_id,
        context_features=dict(record.context_features),
        candidate_actions=record.candidate_actions,
        step_index=step,
        info=info,
    )


class ReplayEnvironment:
    """Sequential cursor over the filtered records of one split."""

    def __init__(self, dataset: Dataset, seed: int = 0):
        if not dataset.records:
            raise DataError("empty dataset")
        if any(not r.success for r in dataset.records):
            raise DataError("environment requires a success-filtered dataset")
        self.dataset = dataset
        self.seed = seed
        self.episode = 0
        self._cursor = None

    def __len__(self):
        return len(self.dataset.records)

    def reset(self) -> Observation:
        self._cursor = 0
        self.episode += 1
        return _observe(self.dataset.records[0], 0)

    def step(self, chosen_action: str) -> StepResult:
        if self._cursor is None:
            raise DataError("step before reset")
        record = self.dataset.records[self._cursor]
        if chosen_action not in record.candidate_actions:
            raise DataError(f"invalid action {chosen_action!r} at step {self._cursor}")
        reward = int(chosen_action == record.shown_action)
        self._cursor += 1
        done = self._cursor >= len(self.dataset.records)
        nxt = None if done else _observe(self.dataset.records[self._cursor], self._cursor)
        return StepResult(reward=reward, next_observation=nxt, done=done,
                          ground_truth_action=record.shown_action)


def replay_log(env: ReplayEnvironment, agent, learn: bool = True) -> list[SimLogEntry]:
    """Run the agent through one full episode; return the generated log.

    ``learn=True`` lets the agent observe each outcome (online strategies
    such as popularity counts and ridge oracles use it); the frozen test
    pass uses ``learn=False``.
    """
    entries = []
    obs = env.reset()
    done = False
    while not done:
        dist = agent.act(obs)
        result = env.step(dist.chosen)
        if learn and hasattr(agent, "observe"):
            agent.observe(obs, dist, result)
        entries.append(SimLogEntry(
            step=obs.step_index,
            user=obs.user_id,
            context_key=_context_key(obs),
            candidates=list(obs.candidate_actions),
            probs=[float(p) for p in dist.probabilities],
            chosen=dist.chosen,
            reward=result.reward,
            ground_truth=result.ground_truth_action,
            propensity=obs.info.get("logged_propensity"),
        ))
        obs = result.next_observation
        done = result.done
    return entries


def _context_key(obs: Observation) -> str:
    parts = [obs.user_id]
    for k in sorted(obs.context_features):
        parts.append(f"{k}={obs.context_features[k]}")
    return "|".join(parts)


def save_sim_log(entries: list[SimLogEntry], path: str):
    with open(path, "w") as fh:
        for e in entries:
            fh.write(e.to_json() + "\n")


def load_sim_log(path: str) -> list[SimLogEntry]:
    with open(path) as fh:
        return [SimLogEntry.from_json(line) for line in fh if line.strip()]
