import numpy as np
import pytest

from replaybench.bandits import BanditConfig, make_agent
from replaybench.dataset import Dataset
from replaybench.environment import ReplayEnvironment, replay_log
from replaybench.errors import DataError

from conftest import basic_schema, make_dataset, make_record


class OracleCheatAgent:
    """Test-only agent that peeks at the env's records to always match."""

    def __init__(self, env):
        self.env = env

    def act(self, obs):
        from replaybench.bandits import ActionDistribution
        truth = self.env.dataset.records[obs.step_index].shown_action
        k = len(obs.candidate_actions)
        probs = np.zeros(k)
        probs[obs.candidate_actions.index(truth)] = 1.0
        return ActionDistribution(tuple(obs.candidate_actions), probs, truth,
                                  "cheat")


class ProbeAgent:
    """Adversarial probe: tries to recover the ground truth from the
    observation alone, records whether it ever could."""

    def __init__(self, env):
        self.env = env
        self.leaks = 0

    def act(self, obs):
        from replaybench.bandits import ActionDistribution
        truth = self.env.dataset.records[obs.step_index].shown_action
        for value in [obs.user_id, *obs.info.values()]:
            if value == truth:
                self.leaks += 1
        k = len(obs.candidate_actions)
        probs = np.full(k, 1.0 / k)
        return ActionDistribution(tuple(obs.candidate_actions), probs,
                                  obs.candidate_actions[0], "probe")


class TestResetStep:
    def test_reset_returns_first_observation(self, small_dataset):
        env = ReplayEnvironment(small_dataset)
        obs = env.reset()
        assert obs.step_index == 0
        assert obs.user_id == small_dataset.records[0].user_id

    def test_two_resets_identical(self, small_dataset):
        env = ReplayEnvironment(small_dataset)
        a, b = env.reset(), env.reset()
        assert a == b
        assert env.episode == 2

    def test_empty_dataset_error(self):
        with pytest.raises(DataError):
            ReplayEnvironment(Dataset([], basic_schema()))

    def test_unfiltered_dataset_rejected(self):
        recs = [make_record(0, "u", "a", ["a", "b"], success=False)]
        with pytest.raises(DataError):
            ReplayEnvironment(Dataset(recs, basic_schema()))

    def test_single_record_terminates(self):
        ds = make_dataset(n=1)
        env = ReplayEnvironment(ds)
        obs = env.reset()
        result = env.step(obs.candidate_actions[0])
        assert result.done is True
        assert result.next_observation is None

    def test_match_reward(self):
        ds = make_dataset(n=5, seed=4)
        env = ReplayEnvironment(ds)
        obs = env.reset()
        result = env.step(ds.records[0].shown_action)
        assert result.reward == 1
        wrong = next(a for a in ds.records[1].candidate_actions
                     if a != ds.records[1].shown_action)
        assert env.step(wrong).reward == 0

    def test_invalid_action_raises_without_advancing(self):
        ds = make_dataset(n=3)
        env = ReplayEnvironment(ds)
        env.reset()
        with pytest.raises(DataError, match="invalid action"):
            env.step("not-a-candidate")
        result = env.step(ds.records[0].shown_action)  # cursor unmoved
        assert result.reward == 1


class TestReplayLog:
    def test_cheat_agent_gets_full_reward(self):
        ds = make_dataset(n=30, seed=2)
        env = ReplayEnvironment(ds)
        entries = replay_log(env, OracleCheatAgent(env))
        assert all(e.reward == 1 for e in entries)
        assert len(entries) == 30

    def test_random_agent_mean_near_uniform(self):
        k = 5
        ds = make_dataset(n=2000, k=k, seed=6)
        env = ReplayEnvironment(ds)
        agent = make_agent(BanditConfig(strategy="random", seed=0),
                           lambda o, a: np.zeros(1), 1)
        entries = replay_log(env, agent)
        mean = np.mean([e.reward for e in entries])
        # binomial 99.7% band around 1/k
        band = 3 * np.sqrt((1 / k) * (1 - 1 / k) / len(entries))
        assert abs(mean - 1 / k) < band

    def test_most_popular_learns_dominant_item(self):
        # one item is ground truth in 60% of 100 records
        rng = np.random.default_rng(0)
        items = ["hot", "b", "c", "d"]
        recs = []
        for t in range(100):
            shown = "hot" if rng.random() < 0.6 else rng.choice(["b", "c", "d"])
            recs.append(make_record(t, f"u{t%7}", str(shown), items))
        ds = Dataset(recs, basic_schema())
        env = ReplayEnvironment(ds)
        agent = make_agent(BanditConfig(strategy="most_popular", seed=0),
                           lambda o, a: np.zeros(1), 1)
        entries = replay_log(env, agent, learn=True)
        warm = [e.reward for e in entries[20:]]
        truth_rate = np.mean([e.ground_truth == "hot" for e in entries[20:]])
        assert truth_rate >= 0.5
        assert np.mean(warm) >= truth_rate - 0.1

    def test_replay_deterministic(self):
        ds = make_dataset(n=50, seed=3)
        logs = []
        for _ in range(2):
            env = ReplayEnvironment(ds)
            agent = make_agent(BanditConfig(strategy="random", seed=42),
                               lambda o, a: np.zeros(1), 1)
            logs.append([e.to_json() for e in replay_log(env, agent)])
        assert logs[0] == logs[1]

    def test_order_preservation(self):
        ds = make_dataset(n=20, seed=1)
        env = ReplayEnvironment(ds)
        entries = replay_log(env, OracleCheatAgent(env))
        for i, e in enumerate(entries):
            assert e.step == i
            assert e.ground_truth == ds.records[i].shown_action

    def test_reward_conservation(self):
        ds = make_dataset(n=40, seed=8)
        env = ReplayEnvironment(ds)
        agent = make_agent(BanditConfig(strategy="random", seed=0),
                           lambda o, a: np.zeros(1), 1)
        total = sum(e.reward for e in replay_log(env, agent))
        assert 0 <= total <= 40
        env2 = ReplayEnvironment(ds)
        assert sum(e.reward for e in replay_log(env2, OracleCheatAgent(env2))) == 40

    def test_ground_truth_hidden_from_observation(self):
        ds = make_dataset(n=50, seed=5)
        env = ReplayEnvironment(ds)
        probe = ProbeAgent(env)
        replay_log(env, probe)
        assert probe.leaks == 0
