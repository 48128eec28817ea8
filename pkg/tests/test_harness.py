import json

import numpy as np
import pytest

from reil.cli import main as cli_main
from reil.core import TaskRewardKind
from reil.errors import ConfigError, TopologyMismatchError
from reil.harness import (
    ExperimentConfig,
    build_env,
    build_state,
    collect_stats,
    default_experiment,
    load_train_state,
    run_experiment,
    save_train_state,
)
from reil.metrics import MetricsLog
from reil.training import Mode


def tiny_cartpole_cfg(out, seed=0, episodes=2, runs=1):
    cfg = default_experiment("cartpole", Mode.REIL, seed=seed)
    cfg.episodes = episodes
    cfg.runs = runs
    cfg.out_dir = str(out)
    cfg.cartpole_time_limit = 40
    cfg.max_total_steps = 200
    cfg.algorithm = type(cfg.algorithm).from_dict(
        {**cfg.algorithm.to_dict(), "updates_per_step": 2, "batch_size": 8})
    return cfg


def test_empty_experiment_writes_header_only(tmp_path):
    cfg = tiny_cartpole_cfg(tmp_path / "o", episodes=0)
    run_experiment(cfg)
    text = (tmp_path / "o" / "run_00" / "metrics.csv").read_text().strip()
    assert text == ("episode,steps,supervised_steps,episode_return,"
                    "avg_abs_angular_acc,action_error,success")


def test_same_config_reproduces_identical_csv(tmp_path):
    cfg1 = tiny_cartpole_cfg(tmp_path / "a", seed=3, episodes=3)
    cfg2 = tiny_cartpole_cfg(tmp_path / "b", seed=3, episodes=3)
    run_experiment(cfg1)
    run_experiment(cfg2)
    a = (tmp_path / "a" / "run_00" / "metrics.csv").read_text()
    b = (tmp_path / "b" / "run_00" / "metrics.csv").read_text()
    assert a == b


def test_runs_use_distinct_derived_seeds(tmp_path):
    cfg = tiny_cartpole_cfg(tmp_path / "o", episodes=2, runs=2)
    run_experiment(cfg)
    a = MetricsLog.from_csv(tmp_path / "o" / "run_00" / "metrics.csv")
    b = MetricsLog.from_csv(tmp_path / "o" / "run_01" / "metrics.csv")
    assert [vars(r) for r in a.rows] != [vars(r) for r in b.rows]


def test_config_roundtrip(tmp_path):
    cfg = default_experiment("navsim", Mode.IARL, seed=11)
    path = tmp_path / "cfg.json"
    cfg.save(path)
    loaded = ExperimentConfig.load(path)
    assert loaded.env == "navsim"
    assert loaded.algorithm.mode is Mode.IARL
    assert loaded.algorithm == cfg.algorithm
    assert loaded.reward.task_reward_kind is TaskRewardKind.IARL_VARIANT
    assert vars(loaded.snail) == vars(cfg.snail)


def test_config_error_names_field():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict({"env": "lunar"})
    assert exc.value.field == "env"
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"env": "cartpole", "bogus": 1})


def test_supervised_steps_cross_checked_against_dataset(tmp_path):
    cfg = tiny_cartpole_cfg(tmp_path / "o", episodes=3)
    run_experiment(cfg)
    from reil.core import load_dataset
    log = MetricsLog.from_csv(tmp_path / "o" / "run_00" / "metrics.csv")
    data = load_dataset(tmp_path / "o" / "run_00" / "dataset.jsonl")
    by_episode: dict = {}
    for tr in data:
        by_episode[tr.episode_id] = by_episode.get(tr.episode_id, 0) + tr.f_demo
    for row in log.rows:
        assert by_episode.get(row.episode, 0) == row.supervised_steps


def test_train_state_checkpoint_roundtrip(tmp_path):
    cfg = default_experiment("cartpole", seed=5)
    state = build_state(cfg)
    state.update_counter = 17
    path = tmp_path / "state.npz"
    save_train_state(state, path)
    fresh = build_state(cfg)
    fresh.actor.params += 1.0
    load_train_state(fresh, path)
    assert fresh.update_counter == 17
    assert np.array_equal(fresh.actor.params, state.actor.params)
    other = default_experiment("cartpole", seed=5)
    other.mlp_hidden = 32
    mismatched = build_state(other)
    with pytest.raises(TopologyMismatchError):
        load_train_state(mismatched, path)


def test_collect_stats_groups_by_directory(tmp_path):
    for label, seed in (("REIL", 0), ("HG_DAGGER", 1)):
        cfg = tiny_cartpole_cfg(tmp_path / "all" / label, seed=seed, episodes=2, runs=2)
        cfg.algorithm = type(cfg.algorithm).from_dict(
            {**cfg.algorithm.to_dict(), "mode": label})
        run_experiment(cfg)
    summary = collect_stats(tmp_path / "all")
    assert set(summary["algorithms"]) == {"REIL", "HG_DAGGER"}
    assert summary["algorithms"]["REIL"].runs == 2


def test_cli_run_and_stats(tmp_path, capsys):
    out = tmp_path / "cli"
    cfg = tiny_cartpole_cfg(out)
    cfg_path = tmp_path / "cfg.json"
    cfg.save(cfg_path)
    assert cli_main(["run", "--config", str(cfg_path), "--episodes", "2",
                     "--out", str(out)]) == 0
    assert (out / "run_00" / "metrics.csv").exists()
    assert (out / "summary.json").exists()
    assert cli_main(["stats", "--in", str(out)]) == 0
    captured = capsys.readouterr().out
    assert "REIL" in captured


def test_cli_eval_roundtrip(tmp_path, capsys):
    out = tmp_path / "cli2"
    cfg = tiny_cartpole_cfg(out)
    run_experiment(cfg)
    ck = out / "run_00" / "checkpoint.npz"
    # default eval state has hidden=64, matching the default experiment
    assert cli_main(["eval", "--checkpoint", str(ck), "--episodes", "1",
                     "--env", "cartpole"]) == 0
    assert "episode 0" in capsys.readouterr().out


def test_config_file_mirrors_algorithm_fields(tmp_path):
    cfg = tiny_cartpole_cfg(tmp_path / "o")
    cfg.save(tmp_path / "c.json")
    rec = json.loads((tmp_path / "c.json").read_text())
    from dataclasses import fields as dc_fields
    from reil.training import AlgorithmConfig
    assert set(rec["algorithm"]) == {f.name for f in dc_fields(AlgorithmConfig)}


def test_navsim_experiment_smoke(tmp_path):
    from reil.nets import SnailConfig
    cfg = default_experiment("navsim", Mode.REIL, seed=0)
    cfg.episodes = 2
    cfg.runs = 1
    cfg.out_dir = str(tmp_path / "nav")
    cfg.navsim_time_limit = 20
    cfg.snail = SnailConfig(latent_dim=8, tc_filters=3, attn_key_dim=4,
                            attn_value_dim=4, seq_len=24, encoder="mlp",
                            action_dim=2, with_tf_head=True, obs_dim=18,
                            encoder_hidden=8)
    cfg.algorithm = type(cfg.algorithm).from_dict(
        {**cfg.algorithm.to_dict(), "epochs_per_episode": 1})
    logs = run_experiment(cfg)
    assert len(logs[0]) == 2
    assert (tmp_path / "nav" / "run_00" / "dataset.jsonl").exists()
    reloaded = ExperimentConfig.load(tmp_path / "nav" / "config.json")
    assert reloaded.navsim_time_limit == 20


def test_cli_offline_run(tmp_path):
    out = tmp_path / "on"
    cfg = tiny_cartpole_cfg(out, episodes=3)
    run_experiment(cfg)
    dataset = out / "run_00" / "dataset.jsonl"
    off_out = tmp_path / "off"
    off_cfg = tiny_cartpole_cfg(off_out, episodes=1)
    off_cfg_path = tmp_path / "off.json"
    off_cfg.save(off_cfg_path)
    assert cli_main(["run", "--config", str(off_cfg_path), "--offline",
                     "--dataset", str(dataset), "--out", str(off_out)]) == 0
    assert (off_out / "run_00" / "metrics.csv").exists()
    assert cli_main(["run", "--offline"]) == 2  # --dataset required
