"""Experiment orchestration: per-environment defaults, multi-run execution,
artifact persistence, and cross-run statistics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ReplayMemory, RewardSpec, TaskRewardKind, load_dataset, save_dataset
from .envs import CartpoleEnv, NavEnv, cartpole_supervisor, navsim_supervisor
from .errors import ConfigError, TopologyMismatchError
from .metrics import MetricsLog, moving_average, summarize
from .nets import SnailConfig
from .training import (
    AlgorithmConfig,
    Mode,
    TrainState,
    build_mlp_state,
    build_snail_state,
    evaluate,
    train_offline,
    train_online,
)

SEED_STRIDE = 10007  # run i uses base_seed + i * SEED_STRIDE


@dataclass
class ExperimentConfig:
    env: str = "cartpole"
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    reward: RewardSpec = field(default_factory=lambda: RewardSpec(r_int=1.0, gamma=0.99))
    episodes: int = 40
    runs: int = 1
    out_dir: str = "results"
    live: bool = False
    port: int = 8765
    # artifact knobs beyond the core surface
    stop_on_success: bool = True
    max_total_steps: Optional[int] = 14000
    mlp_hidden: int = 64
    memory_capacity: int = 200_000
    cartpole_time_limit: int = 5000
    navsim_time_limit: int = 90
    snail: Optional[SnailConfig] = None
    offline_epochs: int = 10

    def __post_init__(self):
        if self.env not in ("cartpole", "navsim"):
            raise ConfigError("env", f"unknown environment {self.env!r}")
        if self.episodes < 0:
            raise ConfigError("episodes", "must be >= 0")
        if self.runs < 1:
            raise ConfigError("runs", "must be >= 1")

    def to_dict(self) -> dict:
        rec = {
            "env": self.env,
            "algorithm": self.algorithm.to_dict(),
            "reward": {
                "r_int": self.reward.r_int,
                "gamma": self.reward.gamma,
                "task_reward_kind": self.reward.task_reward_kind.value,
                "r_task_min": self.reward.r_task_min,
            },
            "episodes": self.episodes,
            "runs": self.runs,
            "out_dir": self.out_dir,
            "live": self.live,
            "port": self.port,
            "stop_on_success": self.stop_on_success,
            "max_total_steps": self.max_total_steps,
            "mlp_hidden": self.mlp_hidden,
            "memory_capacity": self.memory_capacity,
            "cartpole_time_limit": self.cartpole_time_limit,
            "navsim_time_limit": self.navsim_time_limit,
            "offline_epochs": self.offline_epochs,
        }
        if self.snail is not None:
            rec["snail"] = {k: (list(v) if isinstance(v, tuple) else v)
                            for k, v in vars(self.snail).items()}
        return rec

    @classmethod
    def from_dict(cls, rec: dict) -> "ExperimentConfig":
        rec = dict(rec)
        algo = AlgorithmConfig.from_dict(rec.pop("algorithm", {}))
        reward = RewardSpec(**rec.pop("reward")) if "reward" in rec else RewardSpec(1.0, 0.99)
        snail = rec.pop("snail", None)
        if snail is not None:
            snail = SnailConfig(**{k: (tuple(v) if isinstance(v, list) else v)
                                   for k, v in snail.items()})
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(rec) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        return cls(algorithm=algo, reward=reward, snail=snail, **rec)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def default_experiment(env: str = "cartpole", mode: Mode = Mode.REIL, seed: int = 0,
                       **overrides) -> ExperimentConfig:
    """Tuned per-environment defaults for the two desk-scale benchmarks."""
    mode = Mode(mode)
    iarl = mode is Mode.IARL
    if env == "cartpole":
        algo = AlgorithmConfig(
            mode=mode, alpha=0.05, beta=0.1, gamma=0.99, batch_size=24,
            updates_per_step=50, epochs_per_episode=0, lr_actor=1e-3, lr_critic=3e-3,
            weight_decay_actor=1e-4, tau=0.005, target_noise_sigma=0.2,
            target_noise_clip=0.5, actor_update_period=2,
            exploration_noise_sigma=0.1, seed=seed)
        reward = RewardSpec(
            r_int=1.0, gamma=0.99,
            task_reward_kind=(TaskRewardKind.IARL_VARIANT if iarl
                              else TaskRewardKind.CONSTANT_ONE))
        cfg = ExperimentConfig(env="cartpole", algorithm=algo, reward=reward,
                               episodes=40, stop_on_success=True, max_total_steps=14000)
    else:
        algo = AlgorithmConfig(
            mode=mode, alpha=0.2, beta=0.1, gamma=0.95, batch_size=1,
            updates_per_step=0, epochs_per_episode=3, lr_actor=2e-4, lr_critic=5e-4,
            weight_decay_actor=1e-3, tau=0.005, target_noise_sigma=0.2,
            target_noise_clip=0.5, actor_update_period=2,
            exploration_noise_sigma=0.0, seed=seed, optimizer="adam")
        reward = RewardSpec(
            r_int=0.0, gamma=0.95,
            task_reward_kind=(TaskRewardKind.IARL_VARIANT if iarl
                              else TaskRewardKind.EPISODIC_UNIVERSAL))
        cfg = ExperimentConfig(env="navsim", algorithm=algo, reward=reward,
                               episodes=100, stop_on_success=False, max_total_steps=None,
                               snail=default_navsim_snail())
    for k, v in overrides.items():
        if not hasattr(cfg, k):
            raise ConfigError(k, "unknown field")
        setattr(cfg, k, v)
    return cfg


def default_navsim_snail() -> SnailConfig:
    return SnailConfig(latent_dim=24, tc_filters=8, attn_key_dim=8, attn_value_dim=8,
                       seq_len=96, encoder="mlp", action_dim=2, with_tf_head=True,
                       obs_dim=18, encoder_hidden=32)


def build_env(cfg: ExperimentConfig):
    if cfg.env == "cartpole":
        return CartpoleEnv(time_limit=cfg.cartpole_time_limit)
    return NavEnv(time_limit=cfg.navsim_time_limit)


def build_supervisor(cfg: ExperimentConfig):
    return cartpole_supervisor if cfg.env == "cartpole" else navsim_supervisor


def build_state(cfg: ExperimentConfig, seed: Optional[int] = None) -> TrainState:
    algo = cfg.algorithm
    if seed is not None:
        algo = AlgorithmConfig.from_dict({**algo.to_dict(), "seed": seed})
    env = build_env(cfg)
    if cfg.env == "cartpole":
        return build_mlp_state(env.obs_dim, env.action_dim, env.box, algo,
                               hidden=cfg.mlp_hidden)
    return build_snail_state(cfg.snail or default_navsim_snail(), env.box, algo)


# ---------------------------------------------------------------------------
# train-state persistence


def save_train_state(state: TrainState, path) -> None:
    arrays = {name: net.params for name, net in state.nets().items()}
    hashes = {f"{name}_hash": np.array(net.topology_hash)
              for name, net in state.nets().items()}
    np.savez(path, update_counter=np.array(state.update_counter),
             arch=np.array(state.arch), **arrays, **hashes)


def load_train_state(state: TrainState, path) -> TrainState:
    with np.load(path, allow_pickle=False) as ck:
        for name, net in state.nets().items():
            stored = str(ck[f"{name}_hash"])
            if stored != net.topology_hash:
                raise TopologyMismatchError(f"{name}: checkpoint {stored} != {net.topology_hash}")
            net.set_params(ck[name].astype(net.dtype))
        state.update_counter = int(ck["update_counter"])
    return state


# ---------------------------------------------------------------------------
# experiment execution


def run_seed(cfg: ExperimentConfig, run_index: int, out: Optional[Path] = None,
             dataset: Optional[ReplayMemory] = None):
    """One seeded run; returns (metrics, state, memory) and writes artifacts."""
    seed = cfg.algorithm.seed + run_index * SEED_STRIDE
    algo = AlgorithmConfig.from_dict({**cfg.algorithm.to_dict(), "seed": seed})
    run_cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "algorithm": algo.to_dict()})
    run_cfg.snail = cfg.snail
    env = build_env(run_cfg)
    state = build_state(run_cfg)
    if dataset is not None:
        result = train_offline(dataset, algo, cfg.offline_epochs, state=state)
        result.metrics = evaluate(env, build_supervisor(run_cfg), state, algo,
                                  max(cfg.episodes, 1), reward_spec=cfg.reward,
                                  seed=seed + 1)
    else:
        result = train_online(
            env, build_supervisor(run_cfg), algo, cfg.episodes,
            reward_spec=cfg.reward, state=state,
            memory=ReplayMemory(cfg.memory_capacity, rng_seed=seed),
            stop_on_success=cfg.stop_on_success, max_total_steps=cfg.max_total_steps)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        result.metrics.to_csv(out / "metrics.csv")
        save_dataset(result.memory, out / "dataset.jsonl")
        save_train_state(result.state, out / "checkpoint.npz")
        _write_curves(result.metrics, out / "curves.dat")
    return result


def run_experiment(cfg: ExperimentConfig, dataset_path=None) -> list[MetricsLog]:
    """Execute runs x episodes with derived seeds; write one directory per run
    plus a summary; headless runs are reproducible per seed."""
    out_root = Path(cfg.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    cfg.save(out_root / "config.json")
    dataset = load_dataset(dataset_path) if dataset_path else None
    logs = []
    for i in range(cfg.runs):
        logs.append(run_seed(cfg, i, out_root / f"run_{i:02d}", dataset=dataset).metrics)
    label = cfg.algorithm.mode.value
    summary = summarize({label: logs})
    with open(out_root / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(_summary_to_json(summary), fh, indent=2)
        fh.write("\n")
    _write_plot_script(out_root)
    return logs


def _write_curves(log: MetricsLog, path) -> None:
    sup = np.asarray(log.column("supervised_steps"), dtype=np.float64)
    if sup.size == 0:
        Path(path).write_text("# episode supervised smoothed\n")
        return
    smooth = moving_average(sup, 10)
    lines = ["# episode supervised smoothed"]
    for i, (s, m) in enumerate(zip(sup, smooth)):
        lines.append(f"{i} {s:g} {m:g}")
    Path(path).write_text("\n".join(lines) + "\n")


def _write_plot_script(out_root: Path) -> None:
    (out_root / "plot.gp").write_text(
        "# gnuplot script: supervised steps per episode (n=10 moving average)\n"
        "set xlabel 'episode'\nset ylabel 'supervised steps'\n"
        "plot for [f in system('ls run_*/curves.dat')] f using 1:3 with lines title f\n"
    )


def _summary_to_json(summary: dict) -> dict:
    out = {"algorithms": {}, "welch_p": summary["welch_p"]}
    for label, s in summary["algorithms"].items():
        out["algorithms"][label] = {
            "runs": s.runs, "successes": s.successes,
            "mean_supervised": s.mean_supervised, "std_supervised": s.std_supervised,
            "single_run": s.single_run,
        }
    return out


def _dir_label(d: Path) -> str:
    cfg_path = d / "config.json"
    if cfg_path.exists():
        try:
            return json.loads(cfg_path.read_text())["algorithm"]["mode"]
        except (KeyError, json.JSONDecodeError):
            pass
    return d.name


def collect_stats(root) -> dict:
    """Aggregate metrics from <root>/<label>/run_* and <root>/run_* layouts;
    labels come from each directory's config when present."""
    root = Path(root)
    groups: dict[str, list[MetricsLog]] = {}
    for csv_path in sorted(root.glob("run_*/metrics.csv")):
        groups.setdefault(_dir_label(root), []).append(MetricsLog.from_csv(csv_path))
    for csv_path in sorted(root.glob("*/run_*/metrics.csv")):
        groups.setdefault(_dir_label(csv_path.parent.parent), []).append(
            MetricsLog.from_csv(csv_path))
    return summarize(groups)
