"""Command-line pipeline: ingest -> simulate -> evaluate -> compare -> report.

Each stage records a content hash of its inputs in a run manifest and is
skipped when nothing changed, so re-running a pipeline is cheap and
idempotent.  Exit codes: 0 success, 2 config error, 3 data error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import copy
import csv
import glob
import hashlib
import json
import os
import sys

import numpy as np
import yaml

from . import counterfactual, fairness, metrics, report, simulator
from .bandits import BanditConfig
from .dataset import (FeatureEncoder, SchemaConfig, filter_successes,
                      load_dataset, parse_catalog, parse_logs, save_dataset,
                      split_train_test)
from .environment import load_sim_log
from .errors import ConfigError, DataError, InvariantError, ReplayBenchError

TOOL_VERSION = "0.1.0"

DEFAULT_CONFIG = {
    "task": "default",
    "out": "runs/default",
    "dataset": {
        "interactions": None,
        "format": "csv",
        "user_catalog": None,
        "item_catalog": None,
        "catalog_id_col": "id",
        "schema": None,  # SchemaConfig mapping, see README
        "split": {"policy": "temporal", "test_fraction": 0.2, "seed": 0},
    },
    "agent": {"strategy": "random"},
    "simulation": {"episodes": 1, "retrain_interval": 100,
                   "seeds": [1, 2, 3, 4, 5], "online": False},
    "evaluation": {"ks": [1, 5], "w_max": 15.0, "top_m": 5,
                   "sensitive_attributes": []},
}

ENV_PREFIX = "REPLAYBENCH_"


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        with open(path) as fh:
            user = yaml.safe_load(fh) or {}
        _deep_update(cfg, user)
    _apply_env_overrides(cfg)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            section = section[p]
        section[parts[-1]] = value
    return cfg


def _deep_update(base: dict, extra: dict):
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v


def _apply_env_overrides(cfg: dict):
    """REPLAYBENCH_SECTION__KEY=value overrides config entries; values are
    parsed as YAML scalars."""
    for name, raw in os.environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].lower().split("__")
        section = cfg
        for p in path[:-1]:
            if not isinstance(section.get(p), dict):
                section[p] = {}
            section = section[p]
        section[path[-1]] = yaml.safe_load(raw)


# ---------------------------------------------------------------------------
# Manifest-based memoization

class RunManifest:
    def __init__(self, out_dir: str):
        self.path = os.path.join(out_dir, "manifest.json")
        self.data = {"tool_version": TOOL_VERSION, "stages": {}}
        if os.path.exists(self.path):
            with open(self.path) as fh:
                self.data = json.load(fh)

    def is_current(self, stage: str, input_hash: str) -> bool:
        entry = self.data["stages"].get(stage)
        if not entry or entry["input_hash"] != input_hash:
            return False
        return all(os.path.exists(p) for p in entry["outputs"])

    def record(self, stage: str, input_hash: str, outputs: list[str]):
        import time
        self.data["stages"][stage] = {
            "input_hash": input_hash,
            "outputs": outputs,
            "timestamp": time.time(),
        }
        os.makedirs(os.path.dirname(self.path), exist_ok=True)
        with open(self.path, "w") as fh:
            json.dump(self.data, fh, indent=2)


def _hash_inputs(cfg_part, files=()) -> str:
    h = hashlib.sha256(json.dumps(cfg_part, sort_keys=True,
                                  default=str).encode())
    for path in files:
        if path and os.path.exists(path):
            with open(path, "rb") as fh:
                for chunk in iter(lambda: fh.read(1 << 20), b""):
                    h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Stage implementations

def cmd_ingest(cfg: dict) -> str:
    dcfg = cfg["dataset"]
    if not dcfg.get("interactions"):
        raise ConfigError("dataset.interactions is required for ingest")
    if not dcfg.get("schema"):
        raise ConfigError("dataset.schema is required for ingest")
    out_dir = os.path.join(cfg["out"], "dataset")
    manifest = RunManifest(cfg["out"])
    input_hash = _hash_inputs(dcfg, [dcfg["interactions"],
                                     dcfg.get("user_catalog"),
                                     dcfg.get("item_catalog")])
    if manifest.is_current("ingest", input_hash):
        print(f"ingest: up to date ({out_dir})")
        return out_dir
    schema = SchemaConfig.from_dict(copy.deepcopy(dcfg["schema"]))
    user_cat = item_cat = None
    if dcfg.get("user_catalog"):
        user_cat = parse_catalog(dcfg["user_catalog"], dcfg["catalog_id_col"])
    if dcfg.get("item_catalog"):
        item_cat = parse_catalog(dcfg["item_catalog"], dcfg["catalog_id_col"])
    ds = parse_logs(dcfg["interactions"], schema, fmt=dcfg.get("format", "csv"),
                    user_catalog=user_cat, item_catalog=item_cat)
    split = dcfg["split"]
    ds = split_train_test(ds, split["policy"], split["test_fraction"],
                          split["seed"])
    save_dataset(ds, out_dir)
    n_succ = sum(r.success for r in ds.records)
    print(f"ingest: {len(ds.records)} interactions, {n_succ} successes, "
          f"{getattr(ds, 'malformed_rows', 0)} malformed rows dropped")
    manifest.record("ingest", input_hash,
                    [os.path.join(out_dir, f) for f in
                     ("records.jsonl", "catalog.jsonl", "schema.json",
                      "split.json")])
    return out_dir


def _run_dir(cfg: dict) -> str:
    return os.path.join(cfg["out"], f"run_{cfg['agent']['strategy']}")


def cmd_simulate(cfg: dict) -> str:
    ds_dir = os.path.join(cfg["out"], "dataset")
    if not os.path.isdir(ds_dir):
        raise DataError(f"no ingested dataset at {ds_dir}; run ingest first")
    out_dir = _run_dir(cfg)
    manifest = RunManifest(cfg["out"])
    input_hash = _hash_inputs(
        {"agent": cfg["agent"], "simulation": cfg["simulation"],
         "task": cfg["task"]},
        sorted(glob.glob(os.path.join(ds_dir, "*"))))
    stage = f"simulate:{cfg['agent']['strategy']}"
    if manifest.is_current(stage, input_hash):
        print(f"simulate: up to date ({out_dir})")
        return out_dir
    ds = load_dataset(ds_dir)
    sim_cfg = simulator.SimulationConfig(
        task=cfg["task"],
        agent=BanditConfig(**cfg["agent"]),
        episodes=cfg["simulation"]["episodes"],
        retrain_interval=cfg["simulation"]["retrain_interval"],
        seeds=tuple(cfg["simulation"]["seeds"]),
        online=cfg["simulation"]["online"],
        out_dir=out_dir)
    result = simulator.run(sim_cfg, ds)
    simulator.save_run(result, out_dir)
    print(f"simulate: {cfg['agent']['strategy']} final cumulative mean reward "
          f"{result.mean_curve[-1]:.4f} +- {result.ci_half_width[-1]:.4f}")
    manifest.record(stage, input_hash,
                    [os.path.join(out_dir, "reward_curve.csv"),
                     os.path.join(out_dir, "config.json")])
    return out_dir


def cmd_evaluate(cfg: dict) -> str:
    ds_dir = os.path.join(cfg["out"], "dataset")
    run_dir = _run_dir(cfg)
    if not os.path.isdir(run_dir):
        raise DataError(f"no run artifacts at {run_dir}; run simulate first")
    out_dir = os.path.join(cfg["out"], f"eval_{cfg['agent']['strategy']}")
    manifest = RunManifest(cfg["out"])
    input_hash = _hash_inputs(
        {"evaluation": cfg["evaluation"], "agent": cfg["agent"]},
        sorted(glob.glob(os.path.join(run_dir, "*.jsonl"))))
    stage = f"evaluate:{cfg['agent']['strategy']}"
    if manifest.is_current(stage, input_hash):
        print(f"evaluate: up to date ({out_dir})")
        return out_dir
    os.makedirs(out_dir, exist_ok=True)
    ds = load_dataset(ds_dir)
    encoder = FeatureEncoder(ds.schema).fit(ds)
    encode = encoder.encode_vector
    ecfg = cfg["evaluation"]

    reward_model = counterfactual.fit_reward(ds, encode, encoder.dim)
    filtered = filter_successes(ds)
    test_records = filtered.subset("test").records
    rec_by_step = {str(i): r for i, r in enumerate(test_records)}

    def rho(eval_rec):
        record = rec_by_step.get(eval_rec.context_key)
        if record is None:
            return np.zeros(len(eval_rec.candidates))
        return reward_model.predict(record)

    seeds = []
    for path in sorted(glob.glob(os.path.join(run_dir, "eval_log_seed*.jsonl"))):
        seed = path.split("seed")[-1].split(".")[0]
        seeds.append(seed)

    per_seed_rows = []
    fairness_slices = []
    for seed in seeds:
        eval_log = simulator.load_eval_log(
            os.path.join(run_dir, f"eval_log_seed{seed}.jsonl"))
        test_log = load_sim_log(
            os.path.join(run_dir, f"test_log_seed{seed}.jsonl"))
        recs = metrics.ranked_lists_from_log(test_log)
        catalog = {a for e in test_log for a in e.candidates}
        rows = metrics.metric_rows(recs, catalog, ks=tuple(ecfg["ks"]))
        for est in counterfactual.estimate_all(eval_log, rho,
                                               w_max=ecfg["w_max"]):
            rows.append({"metric": est.estimator.lower(), "k": None,
                         "value": est.value, "std_error": est.std_error})
        per_seed_rows.append(rows)
        for attr in ecfg["sensitive_attributes"]:
            resolver = fairness.AttributeResolver(ds, attr)
            fairness_slices += [
                s.as_row() for s in
                fairness.disparate_mistreatment(test_log, resolver)]
            fairness_slices += [
                s.as_row() for s in
                fairness.disparate_impact(test_log, resolver,
                                          top_m=ecfg["top_m"])]
            treatment = fairness.disparate_treatment(test_log, resolver)
            for z, info in treatment.per_value.items():
                fairness_slices.append({
                    "attribute": attr, "value": z, "metric": "treatment_tv",
                    "estimate": info["tv"], "ci_low": info["tv"],
                    "ci_high": info["tv"], "support": info["support"],
                    "low_support": info["support"] < 30})

    # average the per-seed metric tables
    agg: dict = {}
    for rows in per_seed_rows:
        for row in rows:
            key = (row["metric"], row["k"])
            agg.setdefault(key, []).append(row["value"])
    metric_rows = [{"agent": cfg["agent"]["strategy"], "metric": m, "k": k,
                    "value": float(np.mean(vals)),
                    "n_seeds": len(vals)}
                   for (m, k), vals in agg.items()]
    report.write_rows(metric_rows, os.path.join(out_dir, "metrics"))
    if fairness_slices:
        report.write_rows(fairness_slices, os.path.join(out_dir, "fairness"))
    else:
        report.write_rows([], os.path.join(out_dir, "fairness"))
    print(f"evaluate: wrote {len(metric_rows)} metric rows to {out_dir}")
    manifest.record(stage, input_hash,
                    [os.path.join(out_dir, "metrics.json")])
    return out_dir


def cmd_compare(cfg: dict, agents: list[str]) -> str:
    out_path = os.path.join(cfg["out"], "comparison")
    rows = []
    for agent in agents:
        path = os.path.join(cfg["out"], f"eval_{agent}", "metrics.json")
        if not os.path.exists(path):
            raise DataError(f"missing evaluation for agent {agent!r}")
        with open(path) as fh:
            agent_rows = json.load(fh)
        row = {"task": cfg["task"], "agent": agent}
        for m in agent_rows:
            key = m["metric"] if m["k"] is None else f"{m['metric']}@{m['k']}"
            row[key] = m["value"]
        curve = os.path.join(cfg["out"], f"run_{agent}", "reward_curve.csv")
        if os.path.exists(curve):
            with open(curve) as fh:
                last = list(csv.DictReader(fh))[-1]
            row["cumulative_mean_reward"] = float(last["mean_cumulative_reward"])
        rows.append(row)
    report.write_rows(rows, out_path)
    print(f"compare: wrote {len(rows)} rows to {out_path}.csv")
    return out_path


def cmd_report(cfg: dict) -> str:
    out = cfg["out"]
    curve_files = {}
    for path in sorted(glob.glob(os.path.join(out, "run_*", "reward_curve.csv"))):
        label = os.path.basename(os.path.dirname(path))[len("run_"):]
        curve_files[label] = path
    metric_rows = []
    cmp_path = os.path.join(out, "comparison.json")
    if os.path.exists(cmp_path):
        with open(cmp_path) as fh:
            metric_rows = json.load(fh)
    else:
        for path in sorted(glob.glob(os.path.join(out, "eval_*",
                                                  "metrics.json"))):
            with open(path) as fh:
                metric_rows += json.load(fh)
    slices = []
    for path in sorted(glob.glob(os.path.join(out, "eval_*", "fairness.json"))):
        with open(path) as fh:
            slices += json.load(fh)
    page = report.build_report(os.path.join(out, "report"),
                               f"Task {cfg['task']}", curve_files,
                               metric_rows, slices)
    print(f"report: wrote {page}")
    return page


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="replaybench",
        description="Offline contextual-bandit replay workbench")
    parser.add_argument("--config", help="YAML run config")
    parser.add_argument("--task", help="task id override")
    parser.add_argument("--out", help="output directory override")
    parser.add_argument("--agent", help="agent strategy override")
    parser.add_argument("--seed", type=int, help="single-seed override")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest")
    sub.add_parser("simulate")
    sub.add_parser("evaluate")
    cmp_p = sub.add_parser("compare")
    cmp_p.add_argument("agents", nargs="+")
    sub.add_parser("report")
    sub.add_parser("print-config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {"task": args.task, "out": args.out,
                     "agent.strategy": args.agent}
        cfg = load_config(args.config, overrides)
        if args.seed is not None:
            cfg["simulation"]["seeds"] = [args.seed]
        if args.command == "print-config":
            print(yaml.safe_dump(cfg, sort_keys=False))
        elif args.command == "ingest":
            cmd_ingest(cfg)
        elif args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg)
        elif args.command == "compare":
            cmd_compare(cfg, args.agents)
        elif args.command == "report":
            cmd_report(cfg)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (InvariantError, ReplayBenchError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
