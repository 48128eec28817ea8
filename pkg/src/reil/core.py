"""Trajectory records, gating flags, intervention-aware rewards, and the
replay memory that training samples from.

A transition stores the per-step ownership flag (f_demo) raised when the
supervisor generated the action, plus three binary gating flags:
omega_int marks the step at which an intervention begins (ownership flips
0 -> 1 on the next step), omega_task marks environment-reported episode
ends, and omega_mix is their maximum. omega_mix is what stops value
bootstrapping across intervention and termination boundaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional

import numpy as np

from .errors import (
    EmptyBatchError,
    EmptyEpisodeError,
    FlagsUnsetError,
    InvalidCapacityError,
    InvalidGammaError,
    ParseError,
    RewardConstraintError,
)


class TerminalKind(Enum):
    TASK_SUCCESS = "TASK_SUCCESS"
    TASK_FAILURE = "TASK_FAILURE"
    TIME_LIMIT = "TIME_LIMIT"
    INTERVENTION_ONGOING_AT_END = "INTERVENTION_ONGOING_AT_END"


class TaskRewardKind(Enum):
    CONSTANT_ONE = "CONSTANT_ONE"
    EPISODIC_UNIVERSAL = "EPISODIC_UNIVERSAL"
    IARL_VARIANT = "IARL_VARIANT"


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    f_demo: int
    f_tf_s: int = 0
    reward: Optional[float] = None
    omega_int: Optional[int] = None
    omega_task: Optional[int] = None
    omega_mix: Optional[int] = None
    episode_id: int = 0
    step_index: int = 0

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.float64)
        self.action = np.atleast_1d(np.asarray(self.action, dtype=np.float64))

    @property
    def flags_set(self) -> bool:
        return None not in (self.omega_int, self.omega_task, self.omega_mix)


@dataclass
class Episode:
    transitions: list[Transition]
    terminal_kind: Optional[TerminalKind] = None

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def episode_id(self) -> int:
        return self.transitions[0].episode_id

    def f_demo_sequence(self) -> list[int]:
        return [t.f_demo for t in self.transitions]

    def validate(self) -> None:
        if not self.transitions:
            raise EmptyEpisodeError("episode has no transitions")
        eid = self.transitions[0].episode_id
        for i, tr in enumerate(self.transitions):
            if tr.episode_id != eid:
                raise ValueError(f"transition {i} has episode_id {tr.episode_id}, expected {eid}")
            if tr.step_index != i:
                raise ValueError(f"transition {i} has step_index {tr.step_index}")


@dataclass
class RewardSpec:
    r_int: float
    gamma: float
    task_reward_kind: TaskRewardKind = TaskRewardKind.CONSTANT_ONE
    r_task_min: float = 1.0

    def __post_init__(self):
        if isinstance(self.task_reward_kind, str):
            self.task_reward_kind = TaskRewardKind(self.task_reward_kind)
        if self.task_reward_kind is not TaskRewardKind.IARL_VARIANT:
            if not validate_r_int(self.r_int, self.r_task_min, self.gamma):
                bound = self.r_task_min / (1.0 - self.gamma)
                raise RewardConstraintError(
                    f"r_int={self.r_int} must be strictly below {bound}"
                )


def validate_r_int(r_int: float, r_task_min: float, gamma: float) -> bool:
    """True iff r_int < r_task_min / (1 - gamma), strictly."""
    if not (0.0 <= gamma < 1.0):
        raise InvalidGammaError(f"gamma must be in [0, 1), got {gamma}")
    return r_int < r_task_min / (1.0 - gamma)


def compute_gating_flags(episode: Episode) -> Episode:
    """Set omega_int / omega_task / omega_mix on every transition.

    omega_int[t] = max(f_demo[t+1] - f_demo[t], 0), with f_demo past the end
    taken as 0, so an episode ending mid-intervention gets omega_int = 0 at
    its last step. omega_task is 1 only at the final step and only when the
    environment reported an episode end (any terminal kind).
    """
    if len(episode.transitions) == 0:
        raise EmptyEpisodeError("cannot compute flags for an empty episode")
    f = episode.f_demo_sequence()
    last = len(f) - 1
    for t, tr in enumerate(episode.transitions):
        f_next = f[t + 1] if t < last else 0
        tr.omega_int = max(f_next - f[t], 0)
        tr.omega_task = 1 if (t == last and episode.terminal_kind is not None) else 0
        tr.omega_mix = max(tr.omega_int, tr.omega_task)
    return episode


def apply_iarl_flag_override(episode: Episode) -> Episode:
    """Remove intervention gating: omega_int is zeroed so omega_mix only
    reflects task termination. Used by the baseline that does not terminate
    value bootstrapping on interventions."""
    for tr in episode.transitions:
        if tr.omega_task is None:
            raise FlagsUnsetError("compute_gating_flags must run first")
        tr.omega_int = 0
        tr.omega_mix = tr.omega_task
    return episode


def compute_reward(t_index: int, episode: Episode, spec: RewardSpec) -> float:
    """Reward at one step: task reward gated to r_int at intervention onset."""
    tr = episode.transitions[t_index]
    if not tr.flags_set:
        raise FlagsUnsetError("gating flags must be computed before rewards")
    if spec.task_reward_kind is TaskRewardKind.IARL_VARIANT:
        return 1.0 - tr.f_demo
    if tr.omega_int == 1:
        return spec.r_int
    if spec.task_reward_kind is TaskRewardKind.CONSTANT_ONE:
        return 1.0
    # EPISODIC_UNIVERSAL: constant 1, with a 2/(1-gamma) bonus at task success
    is_success_step = (
        t_index == len(episode.transitions) - 1
        and episode.terminal_kind is TerminalKind.TASK_SUCCESS
    )
    return 2.0 / (1.0 - spec.gamma) if is_success_step else 1.0


def apply_rewards(episode: Episode, spec: RewardSpec) -> Episode:
    for t in range(len(episode.transitions)):
        episode.transitions[t].reward = compute_reward(t, episode, spec)
    return episode


# ---------------------------------------------------------------------------
# replay memory


@dataclass
class Batch:
    obs: np.ndarray        # (B, obs_dim) float32
    action: np.ndarray     # (B, act_dim) float32
    reward: np.ndarray     # (B,) float32
    next_obs: np.ndarray   # (B, obs_dim) float32, zeros where absent
    omega_mix: np.ndarray  # (B,) float32
    f_demo: np.ndarray     # (B,) float32
    f_tf_s: np.ndarray     # (B,) float32
    has_next: np.ndarray   # (B,) bool

    def __len__(self) -> int:
        return self.obs.shape[0]


class ReplayMemory:
    """FIFO transition store at fixed capacity with seeded uniform sampling.

    Transitions are kept in arrival order in a ring, so an episode's
    transitions stay adjacent; eviction may trim an episode's oldest steps,
    which leaves the survivors individually trainable (each slot carries
    its own successor observation).
    """

    def __init__(self, capacity: int, rng_seed: int = 0):
        if capacity < 1:
            raise InvalidCapacityError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.rng_seed = rng_seed
        self._rng = np.random.default_rng(rng_seed)
        self._head = 0
        self._count = 0
        self._arrays_ready = False

    def _init_arrays(self, obs_dim: int, act_dim: int) -> None:
        cap = self.capacity
        self.obs = np.zeros((cap, obs_dim))
        self.action = np.zeros((cap, act_dim))
        self.next_obs = np.zeros((cap, obs_dim))
        self.reward = np.zeros(cap)
        self.f_demo = np.zeros(cap, dtype=np.int8)
        self.f_tf_s = np.zeros(cap, dtype=np.int8)
        self.omega_int = np.zeros(cap, dtype=np.int8)
        self.omega_task = np.zeros(cap, dtype=np.int8)
        self.omega_mix = np.zeros(cap, dtype=np.int8)
        self.has_next = np.zeros(cap, dtype=bool)
        self.episode_id = np.zeros(cap, dtype=np.int64)
        self.step_index = np.zeros(cap, dtype=np.int64)
        self.terminal = np.full(cap, "", dtype=object)
        self._arrays_ready = True

    def __len__(self) -> int:
        return self._count

    def append(self, tr: Transition, next_obs: Optional[np.ndarray],
               terminal_kind: Optional[TerminalKind] = None) -> None:
        if not tr.flags_set or tr.reward is None:
            raise FlagsUnsetError("transitions must carry flags and reward")
        if not self._arrays_ready:
            self._init_arrays(tr.obs.shape[0], tr.action.shape[0])
        slot = (self._head + self._count) % self.capacity
        if self._count == self.capacity:
            self._head = (self._head + 1) % self.capacity
        else:
            self._count += 1
        self.obs[slot] = tr.obs
        self.action[slot] = tr.action
        self.reward[slot] = tr.reward
        self.f_demo[slot] = tr.f_demo
        self.f_tf_s[slot] = tr.f_tf_s
        self.omega_int[slot] = tr.omega_int
        self.omega_task[slot] = tr.omega_task
        self.omega_mix[slot] = tr.omega_mix
        self.episode_id[slot] = tr.episode_id
        self.step_index[slot] = tr.step_index
        self.terminal[slot] = terminal_kind.value if terminal_kind else ""
        if next_obs is None:
            self.next_obs[slot] = 0.0
            self.has_next[slot] = False
        else:
            self.next_obs[slot] = next_obs
            self.has_next[slot] = True

    def push_episode(self, episode: Episode) -> None:
        """Append all of an episode's transitions, oldest evicted beyond
        capacity; requires flags and rewards already computed."""
        episode.validate()
        n = len(episode.transitions)
        for i, tr in enumerate(episode.transitions):
            nxt = episode.transitions[i + 1].obs if i + 1 < n else None
            kind = episode.terminal_kind if i == n - 1 else None
            self.append(tr, nxt, kind)

    def _slots(self) -> np.ndarray:
        return (self._head + np.arange(self._count)) % self.capacity

    def get(self, i: int) -> Transition:
        slot = (self._head + i) % self.capacity
        return Transition(
            obs=self.obs[slot].copy(),
            action=self.action[slot].copy(),
            f_demo=int(self.f_demo[slot]),
            f_tf_s=int(self.f_tf_s[slot]),
            reward=float(self.reward[slot]),
            omega_int=int(self.omega_int[slot]),
            omega_task=int(self.omega_task[slot]),
            omega_mix=int(self.omega_mix[slot]),
            episode_id=int(self.episode_id[slot]),
            step_index=int(self.step_index[slot]),
        )

    def __iter__(self) -> Iterator[Transition]:
        for i in range(self._count):
            yield self.get(i)

    def _gather(self, slots: np.ndarray) -> Batch:
        return Batch(
            obs=self.obs[slots].astype(np.float32),
            action=self.action[slots].astype(np.float32),
            reward=self.reward[slots].astype(np.float32),
            next_obs=self.next_obs[slots].astype(np.float32),
            omega_mix=self.omega_mix[slots].astype(np.float32),
            f_demo=self.f_demo[slots].astype(np.float32),
            f_tf_s=self.f_tf_s[slots].astype(np.float32),
            has_next=self.has_next[slots].copy(),
        )

    def sample(self, batch_size: int, rng: Optional[np.random.Generator] = None) -> Batch:
        if self._count == 0:
            raise EmptyBatchError("cannot sample from an empty memory")
        r = rng if rng is not None else self._rng
        slots = (self._head + r.integers(0, self._count, size=batch_size)) % self.capacity
        return self._gather(slots)

    def sample_supervisor(self, batch_size: int,
                          rng: Optional[np.random.Generator] = None) -> Optional[Batch]:
        """Uniform sample restricted to supervisor-generated transitions;
        None when the memory holds no such transitions."""
        slots = self._slots()
        sup = slots[self.f_demo[slots] == 1]
        if sup.size == 0:
            return None
        r = rng if rng is not None else self._rng
        return self._gather(sup[r.integers(0, sup.size, size=batch_size)])

    def gather_ordinals(self, idx: np.ndarray) -> Batch:
        """Batch of the transitions at the given arrival-order positions."""
        return self._gather((self._head + np.asarray(idx)) % self.capacity)

    def episode_slot_runs(self) -> list[np.ndarray]:
        """Contiguous same-episode slot runs in arrival order, for sequence
        training. A partially evicted episode appears as its surviving tail."""
        slots = self._slots()
        if slots.size == 0:
            return []
        eids = self.episode_id[slots]
        breaks = np.flatnonzero(eids[1:] != eids[:-1]) + 1
        return [run for run in np.split(slots, breaks)]

    def episode_batch(self, slots: np.ndarray) -> Batch:
        return self._gather(slots)


# ---------------------------------------------------------------------------
# dataset persistence (one JSON record per line)

_REQUIRED_FIELDS = (
    "episode_id", "step_index", "obs", "action", "f_demo", "f_tf_s",
    "reward", "omega_int", "omega_task", "omega_mix",
)


def save_dataset(memory: ReplayMemory, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, tr in enumerate(memory):
            slot = (memory._head + i) % memory.capacity
            rec = {
                "episode_id": tr.episode_id,
                "step_index": tr.step_index,
                "obs": list(tr.obs),
                "action": list(tr.action),
                "f_demo": tr.f_demo,
                "f_tf_s": tr.f_tf_s,
                "reward": tr.reward,
                "omega_int": tr.omega_int,
                "omega_task": tr.omega_task,
                "omega_mix": tr.omega_mix,
            }
            kind = memory.terminal[slot]
            if kind:
                rec["terminal_kind"] = kind
            fh.write(json.dumps(rec) + "\n")


def load_dataset(path, capacity: Optional[int] = None, rng_seed: int = 0) -> ReplayMemory:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(line_no, f"invalid record: {e.msg}") from e
            missing = [k for k in _REQUIRED_FIELDS if k not in rec]
            if missing:
                raise ParseError(line_no, f"missing fields {missing}")
            records.append(rec)
    memory = ReplayMemory(capacity or max(len(records), 1), rng_seed=rng_seed)
    for i, rec in enumerate(records):
        tr = Transition(
            obs=np.array(rec["obs"], dtype=np.float64),
            action=np.array(rec["action"], dtype=np.float64),
            f_demo=int(rec["f_demo"]),
            f_tf_s=int(rec["f_tf_s"]),
            reward=float(rec["reward"]),
            omega_int=int(rec["omega_int"]),
            omega_task=int(rec["omega_task"]),
            omega_mix=int(rec["omega_mix"]),
            episode_id=int(rec["episode_id"]),
            step_index=int(rec["step_index"]),
        )
        nxt = records[i + 1] if i + 1 < len(records) else None
        same_episode = nxt is not None and nxt["episode_id"] == rec["episode_id"]
        next_obs = np.array(nxt["obs"], dtype=np.float64) if same_episode else None
        kind = TerminalKind(rec["terminal_kind"]) if "terminal_kind" in rec else None
        memory.append(tr, next_obs, kind)
    return memory
