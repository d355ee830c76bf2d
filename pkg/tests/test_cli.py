import csv
import json
import os

import numpy as np
import pytest
import yaml

from replaybench.cli import load_config, main


def write_fixture(tmp_path, n=200, k=4, seed=0):
    """Small CSV interaction log plus a matching YAML run config."""
    rng = np.random.default_rng(seed)
    items = [f"item{i}" for i in range(k)]
    log_path = tmp_path / "interactions.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ts", "user", "session", "item", "impressions",
                         "clicked", "prop", "price", "device"])
        for t in range(n):
            shown = items[rng.integers(k)]
            writer.writerow([t, f"u{rng.integers(8)}", f"s{t}", shown,
                             "|".join(items), int(rng.random() < 0.9),
                             1.0 / k, round(float(rng.normal(50, 10)), 2),
                             rng.choice(["mobile", "desktop"])])
    item_cat = tmp_path / "items.csv"
    with open(item_cat, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "stars"])
        for i, item in enumerate(items):
            writer.writerow([item, str(i % 3)])
    cfg = {
        "task": "smoke",
        "out": str(tmp_path / "out"),
        "dataset": {
            "interactions": str(log_path),
            "item_catalog": str(item_cat),
            "schema": {
                "timestamp_col": "ts", "user_col": "user",
                "session_col": "session", "action_col": "item",
                "success_col": "clicked", "candidates_col": "impressions",
                "propensity_col": "prop",
                "context": [{"name": "price", "kind": "numeric"},
                            {"name": "device", "kind": "categorical"}],
                "sensitive_attributes": ["device", "stars"],
            },
        },
        "agent": {"strategy": "epsilon_greedy", "epsilon": 0.1},
        "simulation": {"episodes": 1, "retrain_interval": 50,
                       "seeds": [1, 2], "online": False},
        "evaluation": {"ks": [1, 5], "w_max": 15.0, "top_m": 3,
                       "sensitive_attributes": ["stars"]},
    }
    cfg_path = tmp_path / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(cfg))
    return cfg_path, cfg


class TestLoadConfig:
    def test_defaults_without_file(self):
        cfg = load_config(None)
        assert cfg["agent"]["strategy"] == "random"
        assert cfg["dataset"]["split"]["policy"] == "temporal"

    def test_file_deep_merges(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump({"dataset": {"format": "jsonl"}}))
        cfg = load_config(str(p))
        assert cfg["dataset"]["format"] == "jsonl"
        assert cfg["dataset"]["split"]["policy"] == "temporal"  # untouched

    def test_cli_overrides_win(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump({"agent": {"strategy": "softmax"}}))
        cfg = load_config(str(p), {"agent.strategy": "lin_ucb"})
        assert cfg["agent"]["strategy"] == "lin_ucb"

    def test_env_overrides(self, monkeypatch):
        monkeypatch.setenv("REPLAYBENCH_SIMULATION__EPISODES", "7")
        cfg = load_config(None)
        assert cfg["simulation"]["episodes"] == 7


class TestExitCodes:
    def test_print_config_ok(self, capsys):
        assert main(["print-config"]) == 0
        assert "strategy: random" in capsys.readouterr().out

    def test_ingest_without_interactions_is_config_error(self):
        assert main(["ingest"]) == 2

    def test_simulate_without_dataset_is_data_error(self, tmp_path):
        assert main(["--out", str(tmp_path / "nowhere"), "simulate"]) == 3

    def test_missing_interactions_file_is_data_error(self, tmp_path):
        cfg_path, cfg = write_fixture(tmp_path)
        os.remove(cfg["dataset"]["interactions"])
        assert main(["--config", str(cfg_path), "ingest"]) == 3

    def test_bad_agent_strategy_is_config_error(self, tmp_path):
        cfg_path, _ = write_fixture(tmp_path)
        assert main(["--config", str(cfg_path), "ingest"]) == 0
        assert main(["--config", str(cfg_path), "--agent", "bogus",
                     "simulate"]) == 2


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the full pipeline once; tests inspect the artifacts."""
    tmp_path = tmp_path_factory.mktemp("cli")
    cfg_path, cfg = write_fixture(tmp_path)
    argv = ["--config", str(cfg_path)]
    assert main(argv + ["ingest"]) == 0
    assert main(argv + ["simulate"]) == 0
    assert main(argv + ["--agent", "random", "simulate"]) == 0
    assert main(argv + ["evaluate"]) == 0
    assert main(argv + ["--agent", "random", "evaluate"]) == 0
    assert main(argv + ["compare", "epsilon_greedy", "random"]) == 0
    assert main(argv + ["report"]) == 0
    return tmp_path, cfg_path, cfg


class TestPipeline:
    def test_dataset_artifacts(self, pipeline):
        tmp_path, _, cfg = pipeline
        ds_dir = os.path.join(cfg["out"], "dataset")
        for name in ("records.jsonl", "catalog.jsonl", "schema.json",
                     "split.json"):
            assert os.path.exists(os.path.join(ds_dir, name))

    def test_run_artifacts(self, pipeline):
        _, _, cfg = pipeline
        run_dir = os.path.join(cfg["out"], "run_epsilon_greedy")
        assert os.path.exists(os.path.join(run_dir, "reward_curve.csv"))
        for seed in (1, 2):
            for kind in ("train_log", "test_log", "eval_log"):
                assert os.path.exists(
                    os.path.join(run_dir, f"{kind}_seed{seed}.jsonl"))

    def test_metric_rows_written(self, pipeline):
        _, _, cfg = pipeline
        with open(os.path.join(cfg["out"], "eval_epsilon_greedy",
                               "metrics.json")) as fh:
            rows = json.load(fh)
        names = {(r["metric"], r["k"]) for r in rows}
        for metric in ("precision", "ndcg", "coverage", "personalization"):
            assert (metric, 5) in names
        for est in ("dm", "ips", "cips", "snips", "dr"):
            assert (est, None) in names
        assert ("map", None) in names

    def test_fairness_rows_written(self, pipeline):
        _, _, cfg = pipeline
        with open(os.path.join(cfg["out"], "eval_epsilon_greedy",
                               "fairness.json")) as fh:
            slices = json.load(fh)
        metrics_seen = {s["metric"] for s in slices}
        assert {"tpr", "accuracy", "mean_score", "treatment_tv"} <= metrics_seen

    def test_compare_table(self, pipeline):
        _, _, cfg = pipeline
        with open(os.path.join(cfg["out"], "comparison.json")) as fh:
            rows = json.load(fh)
        assert {r["agent"] for r in rows} == {"epsilon_greedy", "random"}
        for row in rows:
            assert "cumulative_mean_reward" in row
            assert "ndcg@5" in row

    def test_report_page(self, pipeline):
        _, _, cfg = pipeline
        page = os.path.join(cfg["out"], "report", "report.html")
        assert os.path.exists(page)
        html = open(page).read()
        assert "svg" in html.lower()

    def test_memoized_rerun_up_to_date(self, pipeline, capsys):
        _, cfg_path, _ = pipeline
        argv = ["--config", str(cfg_path)]
        assert main(argv + ["ingest"]) == 0
        assert "up to date" in capsys.readouterr().out
        assert main(argv + ["simulate"]) == 0
        assert "up to date" in capsys.readouterr().out
        assert main(argv + ["evaluate"]) == 0
        assert "up to date" in capsys.readouterr().out

    def test_config_change_invalidates_stage(self, pipeline, capsys):
        _, cfg_path, _ = pipeline
        argv = ["--config", str(cfg_path)]
        # different epsilon -> simulate must rerun for that agent
        assert main(argv + ["--seed", "1", "simulate"]) == 0
        out = capsys.readouterr().out
        assert "up to date" not in out
