import numpy as np
import pytest

import replaybench.simulator as sim
from replaybench.bandits import BanditConfig, restore_agent
from replaybench.dataset import FeatureEncoder
from replaybench.environment import ReplayEnvironment, replay_log
from replaybench.errors import ConfigError, DataError
from replaybench.simulator import (BufferEntry, ComparisonTable,
                                   ExperienceBuffer, RunResult,
                                   SimulationConfig, build_eval_log, compare,
                                   load_eval_log, run, run_checksum, save_run)

from conftest import make_dataset


def quick_config(strategy="random", seeds=(1,), episodes=1, **kw):
    return SimulationConfig(task="toy", agent=BanditConfig(strategy=strategy),
                            seeds=seeds, episodes=episodes,
                            retrain_interval=kw.pop("retrain_interval", 50),
                            **kw)


@pytest.fixture(scope="module")
def split_ds():
    return make_dataset(n=120, k=3, seed=0, split="temporal",
                        uniform_propensity=True)


class TestBuffer:
    def test_append_order(self):
        buf = ExperienceBuffer()
        for i in range(5):
            buf.append(BufferEntry(np.zeros(1), ("a",), "a", 1.0, i % 2))
        assert len(buf) == 5
        assert [e.reward for e in buf] == [0, 1, 0, 1, 0]


class TestConfig:
    def test_bad_retrain_interval(self):
        with pytest.raises(ConfigError):
            SimulationConfig(task="t", agent=BanditConfig(),
                             retrain_interval=0)

    def test_empty_seeds(self):
        with pytest.raises(ConfigError):
            SimulationConfig(task="t", agent=BanditConfig(), seeds=())


class TestRun:
    def test_requires_split(self):
        ds = make_dataset(n=20)
        with pytest.raises(DataError, match="split"):
            run(quick_config(), ds)

    def test_lengths_consistent(self, split_ds):
        cfg = quick_config(episodes=2, seeds=(1, 2))
        result = run(cfg, split_ds)
        n_train = split_ds.split_tags.count("train")
        n_test = split_ds.split_tags.count("test")
        for seed in (1, 2):
            assert len(result.train_logs[seed]) == 2 * n_train
            assert len(result.reward_series[seed]) == 2 * n_train
            assert len(result.test_logs[seed]) == n_test
            assert len(result.eval_logs[seed]) == n_test

    def test_cumulative_mean_definition(self, split_ds):
        result = run(quick_config(), split_ds)
        r = result.reward_series[1]
        c = result.cumulative_mean[1]
        assert c[0] == r[0]
        assert c[-1] == pytest.approx(r.mean())
        assert np.allclose(c, np.cumsum(r) / np.arange(1, len(r) + 1))

    def test_retrain_interval_controls_fit_count(self, split_ds, monkeypatch):
        calls = []
        real_make = sim.make_agent

        def counting_make(cfg, encode, dim):
            agent = real_make(cfg, encode, dim)
            orig = agent.fit
            agent.fit = lambda buf: (calls.append(len(list(buf))), orig(buf))[1]
            return agent

        monkeypatch.setattr(sim, "make_agent", counting_make)
        cfg = quick_config(strategy="epsilon_greedy", retrain_interval=40)
        run(cfg, split_ds)
        n_train = split_ds.split_tags.count("train")
        # one fit per full interval plus the final end-of-training fit
        assert len(calls) == n_train // 40 + 1
        assert calls[0] == 40

    def test_online_mode_fits_every_step(self, split_ds, monkeypatch):
        calls = []
        real_make = sim.make_agent

        def counting_make(cfg, encode, dim):
            agent = real_make(cfg, encode, dim)
            orig = agent.fit
            agent.fit = lambda buf: (calls.append(1), orig(buf))[1]
            return agent

        monkeypatch.setattr(sim, "make_agent", counting_make)
        run(quick_config(online=True), split_ds)
        n_train = split_ds.split_tags.count("train")
        assert len(calls) == n_train + 1

    def test_bit_identical_reruns(self, split_ds):
        cfg = quick_config(strategy="epsilon_greedy", seeds=(3,))
        a = run(cfg, split_ds)
        b = run(cfg, split_ds)
        assert np.array_equal(a.reward_series[3], b.reward_series[3])
        assert [e.to_json() for e in a.train_logs[3]] == \
               [e.to_json() for e in b.train_logs[3]]
        assert run_checksum(a.checkpoints[3]) == run_checksum(b.checkpoints[3])

    def test_different_seeds_differ(self, split_ds):
        cfg = quick_config(strategy="random", seeds=(1, 2))
        result = run(cfg, split_ds)
        assert [e.chosen for e in result.train_logs[1]] != \
               [e.chosen for e in result.train_logs[2]]

    def test_test_phase_purity(self, split_ds):
        cfg = quick_config(strategy="epsilon_greedy", seeds=(1,))
        result = run(cfg, split_ds)
        ckpt = result.checkpoints[1]
        enc = FeatureEncoder(split_ds.schema).fit(split_ds)
        agent = restore_agent(ckpt, lambda o, a: enc.encode_vector(o, a),
                              enc.dim)
        agent.frozen = True
        from replaybench.dataset import filter_successes
        test_ds = filter_successes(split_ds).subset("test")
        replay_log(ReplayEnvironment(test_ds, seed=1), agent, learn=False)
        from replaybench.bandits import agent_checkpoint
        assert run_checksum(agent_checkpoint(agent)) == run_checksum(ckpt)

    def test_ci_shrinks_with_steps(self, split_ds):
        cfg = quick_config(strategy="random", seeds=(1, 2, 3, 4, 5),
                           episodes=3)
        result = run(cfg, split_ds)
        n = len(result.mean_curve)
        early = result.ci_half_width[n // 10]
        late = result.ci_half_width[-1]
        assert late <= early * 1.5  # shrinkage trend with generous slack
        assert abs(result.mean_curve[-1] - 1 / 3) < 0.1

    def test_single_seed_zero_ci(self, split_ds):
        result = run(quick_config(seeds=(7,)), split_ds)
        assert np.all(result.ci_half_width == 0)


class TestEvalLog:
    def test_build_eval_log_joins_propensity(self, split_ds):
        result = run(quick_config(), split_ds)
        from replaybench.dataset import filter_successes
        test_ds = filter_successes(split_ds).subset("test")
        for rec, ev in zip(test_ds.records, result.eval_logs[1]):
            assert ev.propensity == rec.logged_propensity
            assert ev.logged_action == rec.shown_action
            assert ev.reward == 1.0
            assert abs(sum(ev.policy_probs) - 1.0) < 1e-9

    def test_length_mismatch_rejected(self, split_ds):
        from replaybench.dataset import filter_successes
        test_ds = filter_successes(split_ds).subset("test")
        with pytest.raises(DataError, match="mismatch"):
            build_eval_log(test_ds, [], None)

    def test_missing_propensity_without_model(self):
        ds = make_dataset(n=40, seed=1, split="temporal")
        from replaybench.dataset import filter_successes
        test_ds = filter_successes(ds).subset("test")
        env = ReplayEnvironment(test_ds, seed=0)
        from replaybench.bandits import make_agent
        agent = make_agent(BanditConfig(strategy="random"),
                           lambda o, a: np.zeros(1), 1)
        entries = replay_log(env, agent, learn=False)
        with pytest.raises(DataError, match="propensity"):
            build_eval_log(test_ds, entries, None)

    def test_auto_propensity_model_when_unlogged(self):
        ds = make_dataset(n=60, k=3, seed=2, split="temporal")
        assert all(r.logged_propensity is None for r in ds.records)
        result = run(quick_config(), ds)
        for ev in result.eval_logs[1]:
            assert 0 < ev.propensity <= 1


class TestCompare:
    def _result(self, task, strategy, seeds=(1,)):
        ds = make_dataset(n=60, k=3, seed=0, split="temporal",
                          uniform_propensity=True)
        cfg = SimulationConfig(task=task,
                               agent=BanditConfig(strategy=strategy),
                               seeds=seeds)
        return run(cfg, ds)

    def test_rows_one_per_run(self):
        a = self._result("t", "random")
        b = self._result("t", "epsilon_greedy")
        table = compare([a, b])
        assert [r["agent"] for r in table.rows] == ["random", "epsilon_greedy"]
        assert not table.seed_mismatch

    def test_task_mismatch_rejected(self):
        with pytest.raises(DataError, match="task"):
            compare([self._result("t1", "random"),
                     self._result("t2", "random")])

    def test_seed_mismatch_flagged(self):
        table = compare([self._result("t", "random", seeds=(1,)),
                         self._result("t", "random", seeds=(2,))])
        assert table.seed_mismatch

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            compare([])


class TestArtifacts:
    def test_save_and_reload_eval_log(self, split_ds, tmp_path):
        result = run(quick_config(seeds=(1,)), split_ds)
        save_run(result, str(tmp_path))
        back = load_eval_log(str(tmp_path / "eval_log_seed1.jsonl"))
        assert len(back) == len(result.eval_logs[1])
        for a, b in zip(back, result.eval_logs[1]):
            assert a.context_key == b.context_key
            assert a.propensity == b.propensity
            assert np.allclose(a.policy_probs, b.policy_probs)
        assert (tmp_path / "reward_curve.csv").exists()
        assert (tmp_path / "checkpoint_seed1.json").exists()

    def test_reward_curve_roundtrips_floats(self, split_ds, tmp_path):
        import csv
        result = run(quick_config(seeds=(1, 2)), split_ds)
        save_run(result, str(tmp_path))
        with open(tmp_path / "reward_curve.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert float(rows[-1]["mean_cumulative_reward"]) == \
            float(result.mean_curve[-1])
