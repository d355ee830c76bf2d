"""Orchestrates agent-environment interaction across episodes and seeds.

Per seed: replay the train split for a number of episodes, appending every
step to an experience buffer and retraining the agent on the whole buffer
at a fixed step interval (batch mode) or every step (online mode).  After
training, one frozen pass over the test split produces the evaluation log
used by the metric, off-policy, and fairness modules.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from .bandits import BanditConfig, make_agent
from .counterfactual import EvalRecord, PropensityModel
from .dataset import Dataset, FeatureEncoder, filter_successes
from .environment import ReplayEnvironment, SimLogEntry, replay_log, save_sim_log
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class BufferEntry:
    phi: np.ndarray
    candidates: tuple
    chosen: str
    probability: float
    reward: int


class ExperienceBuffer:
    """Append-only interaction history; retraining always sees the whole of it."""

    def __init__(self):
        self._entries: list[BufferEntry] = []

    def append(self, entry: BufferEntry):
        self._entries.append(entry)

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)


@dataclass
class SimulationConfig:
    task: str
    agent: BanditConfig
    episodes: int = 1
    retrain_interval: int = 100
    seeds: tuple = (1, 2, 3, 4, 5)
    online: bool = False
    test_fraction: float = 0.2
    split_policy: str = "temporal"
    out_dir: str = "runs"

    def __post_init__(self):
        if self.retrain_interval < 1:
            raise ConfigError("retrain_interval must be >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed required")


@dataclass
class RunResult:
    config: SimulationConfig
    seeds: tuple
    reward_series: dict  # seed -> np.ndarray of per-step train rewards
    cumulative_mean: dict  # seed -> np.ndarray, value at t is mean reward up to t
    mean_curve: np.ndarray
    ci_half_width: np.ndarray
    train_logs: dict  # seed -> list[SimLogEntry]
    test_logs: dict  # seed -> list[SimLogEntry] from the frozen test pass
    eval_logs: dict  # seed -> list[EvalRecord]
    checkpoints: dict  # seed -> agent checkpoint dict
    metric_rows: list = field(default_factory=list)


def _encode_fn(encoder: FeatureEncoder):
    def encode(obs, action):
        return encoder.encode_vector(obs, action)
    return encode


def run(config: SimulationConfig, dataset: Dataset,
        encoder: FeatureEncoder | None = None,
        propensity_model: PropensityModel | None = None) -> RunResult:
    """Execute the simulation for every seed and aggregate reward curves."""
    if dataset.split_tags is None:
        raise DataError("dataset must be split before simulation")
    if encoder is None:
        encoder = FeatureEncoder(dataset.schema).fit(dataset)
    filtered = filter_successes(dataset)
    train_ds = filtered.subset("train")
    test_ds = filtered.subset("test")
    encode = _encode_fn(encoder)

    needs_model = any(r.logged_propensity is None for r in test_ds.records)
    if needs_model and propensity_model is None:
        propensity_model = PropensityModel(
            lambda rec, a: encoder.encode_vector(rec, a), encoder.dim
        ).fit(dataset.records)

    reward_series, cumulative = {}, {}
    train_logs, test_logs, eval_logs, checkpoints = {}, {}, {}, {}
    for seed in config.seeds:
        agent = make_agent(replace(config.agent, seed=seed), encode, encoder.dim)
        buffer = ExperienceBuffer()
        env = ReplayEnvironment(train_ds, seed=seed)
        rewards = []
        entries = []
        global_step = 0
        for _ in range(config.episodes):
            obs = env.reset()
            done = False
            while not done:
                dist = agent.act(obs)
                result = env.step(dist.chosen)
                agent.observe(obs, dist, result)
                buffer.append(BufferEntry(
                    phi=encode(obs, dist.chosen),
                    candidates=dist.candidates,
                    chosen=dist.chosen,
                    probability=dist.prob_of_chosen(),
                    reward=result.reward))
                entries.append(SimLogEntry(
                    step=global_step, user=obs.user_id,
                    context_key=str(obs.step_index),
                    candidates=list(obs.candidate_actions),
                    probs=[float(p) for p in dist.probabilities],
                    chosen=dist.chosen, reward=result.reward,
                    ground_truth=result.ground_truth_action,
                    propensity=obs.info.get("logged_propensity")))
                rewards.append(result.reward)
                global_step += 1
                if config.online or global_step % config.retrain_interval == 0:
                    agent.fit(buffer)
                obs = result.next_observation
                done = result.done
        agent.fit(buffer)

        # frozen-policy test pass
        agent.frozen = True
        test_env = ReplayEnvironment(test_ds, seed=seed)
        test_entries = replay_log(test_env, agent, learn=False)
        test_logs[seed] = test_entries
        eval_logs[seed] = build_eval_log(test_ds, test_entries, propensity_model)
        from .bandits import agent_checkpoint
        checkpoints[seed] = agent_checkpoint(agent)
        train_logs[seed] = entries
        r = np.array(rewards, dtype=float)
        reward_series[seed] = r
        cumulative[seed] = np.cumsum(r) / np.arange(1, len(r) + 1)

    curves = np.stack([cumulative[s] for s in config.seeds])
    mean_curve = curves.mean(axis=0)
    if len(config.seeds) > 1:
        z = norm.ppf(0.975)
        ci = z * curves.std(axis=0, ddof=1) / np.sqrt(len(config.seeds))
    else:
        ci = np.zeros_like(mean_curve)
    return RunResult(config=config, seeds=tuple(config.seeds),
                     reward_series=reward_series, cumulative_mean=cumulative,
                     mean_curve=mean_curve, ci_half_width=ci,
                     train_logs=train_logs, test_logs=test_logs,
                     eval_logs=eval_logs, checkpoints=checkpoints)


def build_eval_log(test_ds: Dataset, entries: list[SimLogEntry],
                   propensity_model: PropensityModel | None) -> list[EvalRecord]:
    """Join test records with the agent's reported probabilities.

    The logged action of a success record is its ground truth, with reward
    1; the collection propensity comes from the log when present, else
    from the fitted collection-policy model.
    """
    if len(entries) != len(test_ds.records):
        raise DataError("evaluation log length mismatch")
    out = []
    for rec, e in zip(test_ds.records, entries):
        if rec.logged_propensity is not None:
            prop = rec.logged_propensity
        elif propensity_model is not None:
            prop = propensity_model.propensity(rec)
        else:
            raise DataError("no propensity source for evaluation log")
        out.append(EvalRecord(
            context_key=str(e.step),
            candidates=tuple(e.candidates),
            ground_truth=e.ground_truth,
            logged_action=rec.shown_action,
            reward=1.0,
            propensity=prop,
            policy_probs=np.array(e.probs)))
    return out


@dataclass
class ComparisonTable:
    task: str
    rows: list
    seed_mismatch: bool = False

    def as_rows(self) -> list[dict]:
        return self.rows


def compare(results: list[RunResult]) -> ComparisonTable:
    """Side-by-side comparison of runs on the same task."""
    if not results:
        raise DataError("nothing to compare")
    tasks = {r.config.task for r in results}
    if len(tasks) > 1:
        raise DataError(f"mismatched task ids: {sorted(tasks)}")
    seed_sets = {r.seeds for r in results}
    mismatch = len(seed_sets) > 1
    rows = []
    for r in results:
        row = {"task": r.config.task,
               "agent": r.config.agent.strategy,
               "seeds": list(r.seeds),
               "final_cumulative_mean_reward": float(r.mean_curve[-1]),
               "final_ci_half_width": float(r.ci_half_width[-1])}
        for m in r.metric_rows:
            key = m.get("metric") or m.get("estimator")
            if m.get("k") is not None:
                key = f"{key}@{m['k']}"
            row[key] = m["value"]
        rows.append(row)
    return ComparisonTable(results[0].config.task, rows, mismatch)


# ---------------------------------------------------------------------------
# Run artifacts

def save_run(result: RunResult, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    cfg = result.config
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump({"task": cfg.task, "agent": cfg.agent.__dict__,
                   "episodes": cfg.episodes,
                   "retrain_interval": cfg.retrain_interval,
                   "seeds": list(cfg.seeds), "online": cfg.online},
                  fh, indent=2, default=str)
    for seed in result.seeds:
        save_sim_log(result.train_logs[seed],
                     os.path.join(out_dir, f"train_log_seed{seed}.jsonl"))
        save_sim_log(result.test_logs[seed],
                     os.path.join(out_dir, f"test_log_seed{seed}.jsonl"))
        with open(os.path.join(out_dir, f"eval_log_seed{seed}.jsonl"), "w") as fh:
            for rec in result.eval_logs[seed]:
                fh.write(json.dumps({
                    "context_key": rec.context_key,
                    "candidates": list(rec.candidates),
                    "ground_truth": rec.ground_truth,
                    "logged_action": rec.logged_action,
                    "reward": rec.reward,
                    "propensity": rec.propensity,
                    "policy_probs": [float(p) for p in rec.policy_probs],
                }) + "\n")
        with open(os.path.join(out_dir, f"checkpoint_seed{seed}.json"), "w") as fh:
            json.dump(result.checkpoints[seed], fh)
    with open(os.path.join(out_dir, "reward_curve.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "mean_cumulative_reward", "ci_half_width"]
                        + [f"seed_{s}" for s in result.seeds])
        for t in range(len(result.mean_curve)):
            writer.writerow([t, repr(float(result.mean_curve[t])),
                             repr(float(result.ci_half_width[t]))]
                            + [repr(float(result.cumulative_mean[s][t]))
                               for s in result.seeds])


def load_eval_log(path: str) -> list[EvalRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            out.append(EvalRecord(
                context_key=d["context_key"],
                candidates=tuple(d["candidates"]),
                ground_truth=d["ground_truth"],
                logged_action=d["logged_action"],
                reward=d["reward"],
                propensity=d["propensity"],
                policy_probs=np.array(d["policy_probs"])))
    return out


def run_checksum(checkpoint: dict) -> str:
    return hashlib.sha256(
        json.dumps(checkpoint, sort_keys=True).encode()).hexdigest()
