"""Gated actor-critic optimization with weighted behavior cloning.

The critic target bootstraps through the twin target critics only where
omega_mix = 0; at intervention onsets and episode ends the target collapses
to the stored reward, which is what keeps intervention-bound actions from
inheriting inflated values. The actor maximizes critic value while cloning
logged actions, with supervisor steps weighted 1 and agent steps weighted
beta < 1. Baseline modes reduce to special cases of the same objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Optional

import numpy as np

from .core import (
    Batch,
    ReplayMemory,
    RewardSpec,
    TaskRewardKind,
    TerminalKind,
    Transition,
)
from . import autodiff as ad
from .autodiff import Tensor
from .envs import make_gate, rollout_step
from .errors import (
    ConfigError,
    DanglingSuccessorError,
    EmptyBatchError,
    EmptyDatasetError,
    MissingTfLabelsError,
    NoSupervisorDataError,
)
from .metrics import (
    MetricRow,
    MetricsLog,
    action_error_metric,
    agent_angular_acceleration,
    angular_acceleration_metric,
)
from .nets import MLP, MimeticSNAIL, SequenceInput, SnailConfig, polyak_update

TF_CLAMP = 1e-6


class Mode(Enum):
    REIL = "REIL"
    ONLY_RL = "ONLY_RL"
    ONLY_BC = "ONLY_BC"
    HG_DAGGER = "HG_DAGGER"
    IARL = "IARL"


@dataclass
class AlgorithmConfig:
    mode: Mode = Mode.REIL
    alpha: float = 0.05
    beta: float = 0.1
    gamma: float = 0.99
    batch_size: int = 24
    updates_per_step: int = 50
    epochs_per_episode: int = 0
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    weight_decay_actor: float = 1e-4
    tau: float = 0.005
    target_noise_sigma: float = 0.2
    target_noise_clip: float = 0.5
    actor_update_period: int = 2
    exploration_noise_sigma: float = 0.1
    seed: int = 0
    optimizer: str = "sgd"  # "sgd" | "adam"

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = Mode(self.mode)
        if self.alpha < 0:
            raise ConfigError("alpha", "must be >= 0")
        if not (0.0 <= self.beta <= 1.0):
            raise ConfigError("beta", "must be in [0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigError("gamma", "must be in [0, 1)")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("optimizer", f"unknown optimizer {self.optimizer!r}")

    # mode algebra: each baseline is a restriction of the combined objective
    @property
    def effective_alpha(self) -> float:
        return 0.0 if self.mode in (Mode.ONLY_BC, Mode.HG_DAGGER) else self.alpha

    @property
    def effective_beta(self) -> float:
        return 0.0 if self.mode is Mode.IARL else self.beta

    @property
    def trains_critic(self) -> bool:
        return self.mode in (Mode.REIL, Mode.ONLY_RL, Mode.IARL)

    def bc_weights(self, f_demo: np.ndarray) -> np.ndarray:
        if self.mode is Mode.ONLY_RL:
            return np.zeros_like(f_demo)
        return f_demo + self.effective_beta * (1.0 - f_demo)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, Mode) else v
        return out

    @classmethod
    def from_dict(cls, rec: dict) -> "AlgorithmConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(rec) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        return cls(**rec)


@dataclass
class TrainState:
    actor: object
    critic_1: object
    critic_2: object
    target_actor: object
    target_critic_1: object
    target_critic_2: object
    update_counter: int = 0
    arch: str = "mlp"
    action_center: np.ndarray = None
    action_half: np.ndarray = None
    opt: dict = field(default_factory=dict)

    def nets(self) -> dict:
        return {
            "actor": self.actor,
            "critic_1": self.critic_1,
            "critic_2": self.critic_2,
            "target_actor": self.target_actor,
            "target_critic_1": self.target_critic_1,
            "target_critic_2": self.target_critic_2,
        }


def build_mlp_state(obs_dim: int, action_dim: int, box, cfg: AlgorithmConfig,
                    hidden: int = 64) -> TrainState:
    """Plain dense actor/critic pair (twin critics + frozen targets)."""
    s = cfg.seed
    actor = MLP([obs_dim, hidden, hidden, action_dim], out_act="tanh", seed=s + 1)
    c1 = MLP([obs_dim + action_dim, hidden, hidden, 1], seed=s + 2)
    c2 = MLP([obs_dim + action_dim, hidden, hidden, 1], seed=s + 3)
    ta = MLP([obs_dim, hidden, hidden, action_dim], out_act="tanh", seed=s + 1, trainable=False)
    t1 = MLP([obs_dim + action_dim, hidden, hidden, 1], seed=s + 2, trainable=False)
    t2 = MLP([obs_dim + action_dim, hidden, hidden, 1], seed=s + 3, trainable=False)
    for online, target in ((actor, ta), (c1, t1), (c2, t2)):
        target.set_params(online.params)
    return TrainState(actor, c1, c2, ta, t1, t2, arch="mlp",
                      action_center=box.center, action_half=box.half)


def build_snail_state(snail_cfg: SnailConfig, box, cfg: AlgorithmConfig) -> TrainState:
    s = cfg.seed
    actor = MimeticSNAIL(snail_cfg, "actor", box.low, box.high, seed=s + 1)
    c1 = MimeticSNAIL(snail_cfg, "critic", seed=s + 2)
    c2 = MimeticSNAIL(snail_cfg, "critic", seed=s + 3)
    ta = MimeticSNAIL(snail_cfg, "actor", box.low, box.high, seed=s + 1, trainable=False)
    t1 = MimeticSNAIL(snail_cfg, "critic", seed=s + 2, trainable=False)
    t2 = MimeticSNAIL(snail_cfg, "critic", seed=s + 3, trainable=False)
    for online, target in ((actor, ta), (c1, t1), (c2, t2)):
        target.set_params(online.params)
    return TrainState(actor, c1, c2, ta, t1, t2, arch="snail",
                      action_center=box.center, action_half=box.half)


def _opt_step(state: TrainState, name: str, net, grad: np.ndarray, lr: float,
              cfg: AlgorithmConfig) -> None:
    if cfg.optimizer == "sgd":
        net.params -= (lr * grad).astype(net.dtype)
        return
    m, v, t = state.opt.get(name, (np.zeros_like(net.params, dtype=np.float64),
                                    np.zeros_like(net.params, dtype=np.float64), 0))
    t += 1
    m = 0.9 * m + 0.1 * grad
    v = 0.999 * v + 0.001 * grad * grad
    state.opt[name] = (m, v, t)
    mhat = m / (1.0 - 0.9 ** t)
    vhat = v / (1.0 - 0.999 ** t)
    net.params -= (lr * mhat / (np.sqrt(vhat) + 1e-8)).astype(net.dtype)


# ---------------------------------------------------------------------------
# batch (dense) path


def _target_action(state: TrainState, next_obs: np.ndarray, cfg: AlgorithmConfig,
                   rng: Optional[np.random.Generator]) -> np.ndarray:
    a = state.action_center + state.action_half * state.target_actor.forward(next_obs)
    if cfg.target_noise_sigma > 0 and rng is not None:
        eps = rng.normal(0.0, cfg.target_noise_sigma, size=a.shape)
        eps = np.clip(eps, -cfg.target_noise_clip, cfg.target_noise_clip)
        a = a + eps * state.action_half
    return np.clip(a, state.action_center - state.action_half,
                   state.action_center + state.action_half)


def critic_target(batch: Batch, state: TrainState, cfg: AlgorithmConfig,
                  rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """y = R + gamma * (1 - omega_mix) * min(Q1', Q2')(s', pi'(s') + eps)."""
    if len(batch) == 0:
        raise EmptyBatchError("empty batch")
    gate_open = batch.omega_mix == 0
    if np.any(gate_open & ~batch.has_next):
        raise DanglingSuccessorError("transition lacks a successor but omega_mix = 0")
    y = batch.reward.astype(np.float64).copy()
    if gate_open.any():
        nxt = batch.next_obs[gate_open]
        a_next = _target_action(state, nxt, cfg, rng)
        xu = np.concatenate([nxt, a_next.astype(state.target_critic_1.dtype)], axis=1)
        q1 = state.target_critic_1.forward(xu).ravel()
        q2 = state.target_critic_2.forward(xu).ravel()
        y[gate_open] += cfg.gamma * np.minimum(q1, q2)
    return y


def critic_update(batch: Batch, state: TrainState, cfg: AlgorithmConfig,
                  rng: Optional[np.random.Generator] = None) -> float:
    """One mean-squared-error step on both critics; returns the pre-step loss."""
    y = critic_target(batch, state, cfg, rng)
    xu = np.concatenate([batch.obs, batch.action], axis=1)
    loss = 0.0
    b = len(batch)
    for name, critic in (("critic_1", state.critic_1), ("critic_2", state.critic_2)):
        cache: list = []
        q = critic.forward(xu, cache).ravel()
        d = q - y
        loss += float((d * d).mean())
        grad, _ = critic.backward(cache, (2.0 / b) * d[:, None].astype(critic.dtype))
        _opt_step(state, name, critic, grad, cfg.lr_critic, cfg)
    state.update_counter += 1
    return loss


def _hg_restrict(batch: Batch, cfg: AlgorithmConfig) -> Batch:
    if cfg.mode is not Mode.HG_DAGGER:
        return batch
    keep = batch.f_demo == 1
    if not keep.any():
        raise NoSupervisorDataError("no supervisor transitions available")
    return Batch(*(getattr(batch, f.name)[keep] for f in fields(Batch)))


def actor_loss(batch: Batch, state: TrainState, cfg: AlgorithmConfig) -> float:
    """Mean over the batch of  -alpha * Q1(s, pi(s)) + w(f_demo) * ||pi(s) - a||^2."""
    batch = _hg_restrict(batch, cfg)
    pi = state.action_center + state.action_half * state.actor.forward(batch.obs)
    w = cfg.bc_weights(batch.f_demo)
    bc = ((pi - batch.action) ** 2).sum(axis=1)
    loss = float((w * bc).mean())
    if cfg.effective_alpha > 0:
        xu = np.concatenate([batch.obs, pi.astype(state.critic_1.dtype)], axis=1)
        q = state.critic_1.forward(xu).ravel()
        loss -= cfg.effective_alpha * float(q.mean())
    return loss


def termination_loss(batch: Batch, state: TrainState) -> float:
    """Summed binary cross-entropy of the termination head against the
    supervisor's task-termination signal."""
    if state.arch != "snail" or not state.actor.cfg.with_tf_head:
        raise MissingTfLabelsError("actor has no termination head")
    seq = _batch_sequence(batch)
    _, f_tf = state.actor.forward(seq)
    p = np.clip(f_tf, TF_CLAMP, 1.0 - TF_CLAMP)
    f = batch.f_tf_s
    return float(-np.sum((1.0 - f) * np.log(1.0 - p) + f * np.log(p)))


def actor_update(batch: Batch, state: TrainState, cfg: AlgorithmConfig) -> None:
    """Delayed actor step plus soft target refresh.

    Applies only when update_counter is a multiple of the update period;
    the target networks move only here, as in the underlying twin-critic
    scheme.
    """
    if state.update_counter % cfg.actor_update_period != 0:
        return
    batch = _hg_restrict(batch, cfg)
    b = len(batch)
    cache: list = []
    raw = state.actor.forward(batch.obs, cache)
    pi = state.action_center + state.action_half * raw
    w = cfg.bc_weights(batch.f_demo)
    dpi = (2.0 / b) * w[:, None] * (pi - batch.action)
    if cfg.effective_alpha > 0:
        ccache: list = []
        xu = np.concatenate([batch.obs, pi.astype(state.critic_1.dtype)], axis=1)
        state.critic_1.forward(xu, ccache)
        dq = np.full((b, 1), -cfg.effective_alpha / b, dtype=state.critic_1.dtype)
        _, dxu = state.critic_1.backward(ccache, dq)
        dpi = dpi + dxu[:, batch.obs.shape[1]:]
    draw = (dpi * state.action_half).astype(state.actor.dtype)
    grad, _ = state.actor.backward(cache, draw)
    grad = grad + cfg.weight_decay_actor * state.actor.params
    _opt_step(state, "actor", state.actor, grad, cfg.lr_actor, cfg)
    _refresh_targets(state, cfg)


def _refresh_targets(state: TrainState, cfg: AlgorithmConfig) -> None:
    polyak_update(state.target_actor.params, state.actor.params, cfg.tau)
    polyak_update(state.target_critic_1.params, state.critic_1.params, cfg.tau)
    polyak_update(state.target_critic_2.params, state.critic_2.params, cfg.tau)


# ---------------------------------------------------------------------------
# sequence (episode) path


def _batch_sequence(batch: Batch, demo: Optional[tuple] = None) -> SequenceInput:
    demo_obs, demo_actions = demo if demo is not None else (
        np.zeros((0, batch.obs.shape[1])), np.zeros((0, batch.action.shape[1])))
    return SequenceInput(demo_obs, demo_actions, batch.obs, batch.action, batch.f_demo)


def episode_critic_update(batch: Batch, state: TrainState, cfg: AlgorithmConfig,
                          rng: Optional[np.random.Generator] = None,
                          demo: Optional[tuple] = None) -> float:
    """Critic step over one stored episode: per-step targets come from the
    shifted target-critic outputs, gated by omega_mix."""
    if len(batch) == 0:
        raise EmptyBatchError("empty episode")
    if np.any((batch.omega_mix == 0) & ~batch.has_next):
        raise DanglingSuccessorError("mid-episode transition lacks a successor")
    seq = _batch_sequence(batch, demo)
    t_demo = seq.t_demo
    out = state.target_actor.forward(seq)
    a_next = out[0][t_demo:]
    if cfg.target_noise_sigma > 0 and rng is not None:
        eps = rng.normal(0.0, cfg.target_noise_sigma, size=a_next.shape)
        eps = np.clip(eps, -cfg.target_noise_clip, cfg.target_noise_clip)
        a_next = a_next + eps * state.action_half
    a_next = np.clip(a_next, state.action_center - state.action_half,
                     state.action_center + state.action_half)
    queries = np.concatenate([seq.all_actions()[:t_demo], a_next]) if t_demo else a_next
    q1 = state.target_critic_1.forward(seq, queries)[t_demo:]
    q2 = state.target_critic_2.forward(seq, queries)[t_demo:]
    qmin = np.minimum(q1, q2)
    y = batch.reward.astype(np.float64).copy()
    open_mid = batch.omega_mix[:-1] == 0
    y[:-1][open_mid] += cfg.gamma * qmin[1:][open_mid]
    yt = Tensor(y.astype(state.critic_1.dtype))
    logged_q = (np.concatenate([seq.all_actions()[:t_demo], batch.action])
                if t_demo else batch.action)
    loss_val = 0.0
    for name, critic in (("critic_1", state.critic_1), ("critic_2", state.critic_2)):
        critic.zero_grad()
        q = critic.tape_forward(seq, logged_q)
        q_exp = q[t_demo:] if t_demo else q
        loss = ad.mean(ad.square(ad.sub(q_exp, yt)))
        loss_val += float(loss.data)
        loss.backward()
        _opt_step(state, name, critic, critic.grad_vector().astype(np.float64),
                  cfg.lr_critic, cfg)
    state.update_counter += 1
    return loss_val


def episode_actor_update(batch: Batch, state: TrainState, cfg: AlgorithmConfig,
                         demo: Optional[tuple] = None) -> None:
    if state.update_counter % cfg.actor_update_period != 0:
        return
    seq = _batch_sequence(batch, demo)
    t_demo = seq.t_demo
    w = cfg.bc_weights(batch.f_demo)
    if cfg.mode is Mode.HG_DAGGER:
        w = batch.f_demo.astype(np.float64)  # clone supervisor steps only
        if not w.any():
            return
    state.actor.zero_grad()
    state.critic_1.zero_grad()
    outs = state.actor.tape_forward(seq)
    pi = outs[0]
    pi_exp = pi[t_demo:] if t_demo else pi
    diff = ad.sub(pi_exp, Tensor(batch.action.astype(state.actor.dtype)))
    bc = ad.sum_(ad.square(diff), axis=1)
    loss = ad.mean(ad.mul(bc, w.astype(state.actor.dtype)))
    if cfg.effective_alpha > 0:
        queries = pi if not t_demo else ad.concat(
            [Tensor(seq.all_actions()[:t_demo].astype(state.actor.dtype)), pi], axis=0)
        q = state.critic_1.tape_forward(seq, queries)
        q_exp = q[t_demo:] if t_demo else q
        loss = ad.sub(loss, ad.mul(ad.mean(q_exp), cfg.effective_alpha))
    if state.actor.cfg.with_tf_head:
        p = ad.clip_by_value(outs[1][t_demo:] if t_demo else outs[1], TF_CLAMP, 1.0 - TF_CLAMP)
        f = Tensor(batch.f_tf_s.astype(state.actor.dtype))
        bce = (1.0 - f) * ad.log(1.0 - p) + f * ad.log(p)
        loss = ad.sub(loss, ad.mean(bce))
    loss.backward()
    grad = state.actor.grad_vector().astype(np.float64) + \
        cfg.weight_decay_actor * state.actor.params
    _opt_step(state, "actor", state.actor, grad, cfg.lr_actor, cfg)
    _refresh_targets(state, cfg)


# ---------------------------------------------------------------------------
# action selection


class RolloutContext:
    """Sliding window of the current episode for the sequence policy."""

    def __init__(self, obs_dim: int, action_dim: int, seq_len: int,
                 demo: Optional[tuple] = None):
        self.demo = demo if demo is not None else (
            np.zeros((0, obs_dim)), np.zeros((0, action_dim)))
        self.seq_len = seq_len
        self.obs: list = []
        self.actions: list = []
        self.f_demo: list = []
        self._action_dim = action_dim

    def append(self, obs, action, f_demo: int) -> None:
        self.obs.append(np.asarray(obs, dtype=np.float64))
        self.actions.append(np.asarray(action, dtype=np.float64))
        self.f_demo.append(f_demo)
        room = self.seq_len - len(self.demo[0]) - 1
        while len(self.obs) > room:
            self.obs.pop(0)
            self.actions.pop(0)
            self.f_demo.pop(0)

    def sequence_for(self, current_obs) -> SequenceInput:
        obs = self.obs + [np.asarray(current_obs, dtype=np.float64)]
        actions = self.actions + [np.zeros(self._action_dim)]
        f = self.f_demo + [0]
        return SequenceInput(self.demo[0], self.demo[1],
                             np.stack(obs), np.stack(actions), np.asarray(f))


def select_action(state: TrainState, obs_context, explore: bool, cfg: AlgorithmConfig,
                  rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Deterministic policy action, plus clipped exploration noise when asked."""
    if state.arch == "mlp":
        raw = state.actor.forward(np.asarray(obs_context, dtype=np.float32)[None, :])[0]
        a = state.action_center + state.action_half * raw
    else:
        seq, current = obs_context
        a = state.actor.act(seq.sequence_for(current)).astype(np.float64)
    if explore and cfg.exploration_noise_sigma > 0 and rng is not None:
        a = a + rng.normal(0.0, cfg.exploration_noise_sigma, size=a.shape) * state.action_half
    return np.clip(a, state.action_center - state.action_half,
                   state.action_center + state.action_half)


# ---------------------------------------------------------------------------
# incremental flag/reward assembly (matches the episode-level operations;
# cross-checked in tests)


def _finalize_mid(tr: Transition, next_f_demo: int, spec: RewardSpec) -> None:
    iarl = spec.task_reward_kind is TaskRewardKind.IARL_VARIANT
    tr.omega_int = 0 if iarl else max(next_f_demo - tr.f_demo, 0)
    tr.omega_task = 0
    tr.omega_mix = tr.omega_int
    if iarl:
        tr.reward = 1.0 - tr.f_demo
    elif tr.omega_int == 1:
        tr.reward = spec.r_int
    else:
        tr.reward = 1.0


def _finalize_last(tr: Transition, kind: TerminalKind, spec: RewardSpec) -> None:
    tr.omega_int = 0
    tr.omega_task = 1
    tr.omega_mix = 1
    if spec.task_reward_kind is TaskRewardKind.IARL_VARIANT:
        tr.reward = 1.0 - tr.f_demo
    elif (spec.task_reward_kind is TaskRewardKind.EPISODIC_UNIVERSAL
          and kind is TerminalKind.TASK_SUCCESS):
        tr.reward = 2.0 / (1.0 - spec.gamma)
    else:
        tr.reward = 1.0


# ---------------------------------------------------------------------------
# training loops


@dataclass
class TrainResult:
    metrics: MetricsLog
    state: TrainState
    memory: ReplayMemory
    critic_loss_history: list = field(default_factory=list)


def _updates_dense(state: TrainState, memory: ReplayMemory, cfg: AlgorithmConfig,
                   rng: np.random.Generator) -> None:
    if len(memory) < cfg.batch_size:
        return
    for _ in range(cfg.updates_per_step):
        if cfg.trains_critic:
            batch = memory.sample(cfg.batch_size, rng)
            critic_update(batch, state, cfg, rng)
        else:
            batch = None
            state.update_counter += 1
        if state.update_counter % cfg.actor_update_period == 0:
            if cfg.mode is Mode.HG_DAGGER:
                batch = memory.sample_supervisor(cfg.batch_size, rng)
                if batch is None:
                    continue
            elif batch is None:
                batch = memory.sample(cfg.batch_size, rng)
            actor_update(batch, state, cfg)


def _updates_episodes(state: TrainState, memory: ReplayMemory, cfg: AlgorithmConfig,
                      rng: np.random.Generator) -> list[float]:
    losses = []
    runs = memory.episode_slot_runs()
    for _ in range(cfg.epochs_per_episode):
        for i in rng.permutation(len(runs)):
            batch = memory.episode_batch(runs[i])
            if cfg.trains_critic:
                losses.append(episode_critic_update(batch, state, cfg, rng))
            else:
                state.update_counter += 1
            episode_actor_update(batch, state, cfg)
    return losses


def train_online(env, supervisor, cfg: AlgorithmConfig, episodes: int, *,
                 reward_spec: RewardSpec, state: TrainState,
                 memory: Optional[ReplayMemory] = None,
                 stop_on_success: bool = False,
                 max_total_steps: Optional[int] = None,
                 memory_capacity: int = 200_000,
                 first_episode_id: int = 0) -> TrainResult:
    """Rollouts under the supervisor-override rule with interleaved updates.

    Dense (per-step) architectures run `updates_per_step` critic updates
    after every environment step; the sequence architecture trains for
    `epochs_per_episode` passes over the stored episodes after each episode.
    """
    rng_env, rng_noise, rng_sample = _spawn_rngs(cfg.seed)
    if memory is None:
        memory = ReplayMemory(memory_capacity, rng_seed=cfg.seed)
    gate = make_gate(env)
    log = MetricsLog()
    result = TrainResult(log, state, memory)
    total_steps = 0
    for ep in range(episodes):
        eid = first_episode_id + ep
        obs = env.reset(rng_env)
        gate.reset()
        context = (RolloutContext(env.obs_dim, env.action_dim, state.actor.cfg.seq_len)
                   if state.arch == "snail" else None)
        pending: list[Transition] = []
        rewards_sum = 0.0
        omega_series: list[float] = []
        fdemo_series: list[int] = []
        terminal = None
        forced_stop = False
        while terminal is None and not forced_stop:
            if state.arch == "mlp":
                a = select_action(state, obs, True, cfg, rng_noise)
            else:
                a = select_action(state, (context, obs), True, cfg, rng_noise)
            tr, _, terminal = rollout_step(env, gate, a, supervisor)
            tr.episode_id = eid
            tr.step_index = len(pending)
            if context is not None:
                context.append(tr.obs, tr.action, tr.f_demo)
            if pending:
                _finalize_mid(pending[-1], tr.f_demo, reward_spec)
                memory.append(pending[-1], next_obs=tr.obs)
                rewards_sum += pending[-1].reward
            pending.append(tr)
            fdemo_series.append(tr.f_demo)
            omega_series.append(env.metric_omega(env.state) if env.name == "cartpole"
                                else float(tr.action[1]))
            obs = env.observe()
            total_steps += 1
            if max_total_steps is not None and total_steps >= max_total_steps:
                forced_stop = True
            if state.arch == "mlp" and terminal is None and not forced_stop:
                _updates_dense(state, memory, cfg, rng_sample)
        kind = terminal
        if kind is None or (kind is TerminalKind.TIME_LIMIT and pending[-1].f_demo == 1):
            kind = (TerminalKind.INTERVENTION_ONGOING_AT_END
                    if pending[-1].f_demo == 1 else TerminalKind.TIME_LIMIT)
        _finalize_last(pending[-1], kind, reward_spec)
        memory.append(pending[-1], next_obs=None, terminal_kind=kind)
        rewards_sum += pending[-1].reward
        if state.arch == "snail":
            result.critic_loss_history.extend(
                _updates_episodes(state, memory, cfg, rng_sample))
        log.append(MetricRow(
            episode=eid,
            steps=len(pending),
            supervised_steps=int(sum(fdemo_series)),
            episode_return=rewards_sum,
            avg_abs_angular_acc=(agent_angular_acceleration(omega_series, fdemo_series)
                                 if len(omega_series) > 1 else 0.0),
            action_error=None,
            success=kind is TerminalKind.TASK_SUCCESS,
        ))
        if stop_on_success and kind is TerminalKind.TASK_SUCCESS:
            break
        if forced_stop:
            break
    return result


def train_offline(dataset: ReplayMemory, cfg: AlgorithmConfig, epochs: int, *,
                  state: TrainState) -> TrainResult:
    """Optimize from a fixed dataset; no environment interaction."""
    if len(dataset) == 0:
        raise EmptyDatasetError("offline training needs a non-empty dataset")
    _, _, rng = _spawn_rngs(cfg.seed)
    result = TrainResult(MetricsLog(), state, dataset)
    for _ in range(epochs):
        if state.arch == "snail":
            runs = dataset.episode_slot_runs()
            for i in rng.permutation(len(runs)):
                batch = dataset.episode_batch(runs[i])
                if cfg.trains_critic:
                    result.critic_loss_history.append(
                        episode_critic_update(batch, state, cfg, rng))
                else:
                    state.update_counter += 1
                episode_actor_update(batch, state, cfg)
        else:
            order = rng.permutation(len(dataset))
            for lo in range(0, len(order), cfg.batch_size):
                batch = dataset.gather_ordinals(order[lo: lo + cfg.batch_size])
                if cfg.trains_critic:
                    result.critic_loss_history.append(critic_update(batch, state, cfg, rng))
                else:
                    state.update_counter += 1
                if state.update_counter % cfg.actor_update_period == 0:
                    try:
                        actor_update(batch, state, cfg)
                    except NoSupervisorDataError:
                        continue
    return result


def evaluate(env, supervisor, state: TrainState, cfg: AlgorithmConfig, episodes: int, *,
             reward_spec: RewardSpec, seed: int = 0,
             collect_labels: bool = True) -> MetricsLog:
    """Deterministic rollouts under the safety gate, without training.

    When `collect_labels` is set, each agent-controlled step also queries the
    supervisor off-policy; those labels feed the action-error metric and are
    never executed.
    """
    rng_env, _, _ = _spawn_rngs(seed)
    gate = make_gate(env)
    log = MetricsLog()
    for ep in range(episodes):
        obs = env.reset(rng_env)
        gate.reset()
        context = (RolloutContext(env.obs_dim, env.action_dim, state.actor.cfg.seq_len)
                   if state.arch == "snail" else None)
        terminal = None
        steps = 0
        supervised = 0
        rewards = 0.0
        omega_series: list[float] = []
        fdemo_series: list[int] = []
        agent_actions: list[np.ndarray] = []
        labels: list[np.ndarray] = []
        pending: list[Transition] = []
        while terminal is None and steps < env.time_limit + 1:
            if state.arch == "mlp":
                a = select_action(state, obs, False, cfg)
            else:
                a = select_action(state, (context, obs), False, cfg)
            if collect_labels:
                label = np.atleast_1d(supervisor(env.state))
            tr, owner, terminal = rollout_step(env, gate, a, supervisor)
            if context is not None:
                context.append(tr.obs, tr.action, tr.f_demo)
            if pending:
                _finalize_mid(pending[-1], tr.f_demo, reward_spec)
                rewards += pending[-1].reward
            pending.append(tr)
            if owner == "agent" and collect_labels:
                agent_actions.append(a)
                labels.append(label)
            supervised += tr.f_demo
            fdemo_series.append(tr.f_demo)
            omega_series.append(env.metric_omega(env.state) if env.name == "cartpole"
                                else float(tr.action[1]))
            obs = env.observe()
            steps += 1
        kind = terminal if terminal is not None else TerminalKind.TIME_LIMIT
        _finalize_last(pending[-1], kind, reward_spec)
        rewards += pending[-1].reward
        err = (action_error_metric(agent_actions, labels, state.action_half)
               if agent_actions else None)
        log.append(MetricRow(
            episode=ep, steps=steps, supervised_steps=int(supervised),
            episode_return=rewards,
            avg_abs_angular_acc=(agent_angular_acceleration(omega_series, fdemo_series)
                                 if len(omega_series) > 1 else 0.0),
            action_error=err,
            success=kind is TerminalKind.TASK_SUCCESS,
        ))
    return log


def _spawn_rngs(seed: int):
    master = np.random.default_rng(seed)
    return master.spawn(3)
