"""Simulation environments, acceptability gates, scripted supervisors, and
the rollout step that mixes agent and supervisor control.

Cartpole: the classic cart/pole balance problem with a continuous action
in [-1, 1] mapped to a +/-10 N force, integrated by explicit Euler at 20 ms.
Navsim: a unicycle-kinematics robot with a forward range-beam fan, bounded
(v, w) commands at 2 Hz, and per-episode random obstacle/goal scenes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import TerminalKind, Transition
from .errors import NonFiniteStateError

# ---------------------------------------------------------------------------
# cartpole

GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
POLE_HALF_LENGTH = 0.5
FORCE_MAG = 10.0
CARTPOLE_DT = 0.02

D_GOOD_X = 2.0
D_GOOD_THETA = 12.0 * math.pi / 180.0
FAIL_X = 2.4
FAIL_THETA = 24.0 * math.pi / 180.0

# Linear state-feedback stabilizer gains, tuned until the closed loop from
# (0, 0, 0.1, 0) re-enters |theta| < 0.017 within 200 steps and then holds
# the acceptable region for 3000 steps; frozen thereafter.
SUPERVISOR_GAINS = np.array([-1.74, -3.0, -17.5, -4.68])


@dataclass
class CartpoleState:
    x: float
    x_dot: float
    theta: float
    theta_dot: float
    step_count: int = 0

    def as_obs(self) -> np.ndarray:
        return np.array([self.x, self.x_dot, self.theta, self.theta_dot])


def cartpole_step(s: CartpoleState, a: float) -> CartpoleState:
    """One 20 ms explicit-Euler step with force = 10 * a newtons."""
    total_mass = CART_MASS + POLE_MASS
    pml = POLE_MASS * POLE_HALF_LENGTH
    force = FORCE_MAG * a
    cos_t, sin_t = math.cos(s.theta), math.sin(s.theta)
    temp = (force + pml * s.theta_dot ** 2 * sin_t) / total_mass
    theta_acc = (GRAVITY * sin_t - cos_t * temp) / (
        POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos_t ** 2 / total_mass)
    )
    x_acc = temp - pml * theta_acc * cos_t / total_mass
    out = CartpoleState(
        x=s.x + CARTPOLE_DT * s.x_dot,
        x_dot=s.x_dot + CARTPOLE_DT * x_acc,
        theta=s.theta + CARTPOLE_DT * s.theta_dot,
        theta_dot=s.theta_dot + CARTPOLE_DT * theta_acc,
        step_count=s.step_count + 1,
    )
    if not all(math.isfinite(v) for v in (out.x, out.x_dot, out.theta, out.theta_dot)):
        raise NonFiniteStateError(f"cartpole state diverged: {out}")
    return out


def in_d_good_cartpole(s: CartpoleState) -> bool:
    return abs(s.x) < D_GOOD_X and abs(s.theta) < D_GOOD_THETA


def cartpole_supervisor(s: CartpoleState) -> float:
    u = -float(SUPERVISOR_GAINS @ s.as_obs())
    return float(np.clip(u, -1.0, 1.0))


@dataclass
class ActionBox:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        self.low = np.asarray(self.low, dtype=np.float64)
        self.high = np.asarray(self.high, dtype=np.float64)

    @property
    def center(self) -> np.ndarray:
        return (self.low + self.high) / 2.0

    @property
    def half(self) -> np.ndarray:
        return (self.high - self.low) / 2.0

    def clip(self, a: np.ndarray) -> np.ndarray:
        return np.clip(a, self.low, self.high)


class CartpoleEnv:
    """Balance task: success after 3000 consecutive agent-controlled steps."""

    name = "cartpole"
    obs_dim = 4
    action_dim = 1
    control_hz = 50.0

    def __init__(self, time_limit: int = 3500, success_steps: int = 3000):
        self.time_limit = time_limit
        self.success_steps = success_steps
        self.box = ActionBox(np.array([-1.0]), np.array([1.0]))
        self.state: Optional[CartpoleState] = None

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        vals = rng.uniform(-0.05, 0.05, size=4)
        self.state = CartpoleState(*vals)
        self._consecutive_agent = 0
        return self.observe()

    def observe(self) -> np.ndarray:
        return self.state.as_obs()

    def in_d_good(self, s: CartpoleState, action: np.ndarray) -> bool:
        return in_d_good_cartpole(s)

    def in_inner(self, s: CartpoleState, margin: float) -> bool:
        return abs(s.x) < D_GOOD_X * margin and abs(s.theta) < D_GOOD_THETA * margin

    def supervisor_action(self, s: CartpoleState) -> np.ndarray:
        return np.array([cartpole_supervisor(s)])

    def step(self, action: np.ndarray, f_demo: int):
        action = self.box.clip(np.asarray(action, dtype=np.float64))
        self.state = cartpole_step(self.state, float(action[0]))
        self._consecutive_agent = 0 if f_demo else self._consecutive_agent + 1
        s = self.state
        if abs(s.x) > FAIL_X or abs(s.theta) > FAIL_THETA:
            return TerminalKind.TASK_FAILURE, 0
        if self._consecutive_agent >= self.success_steps:
            return TerminalKind.TASK_SUCCESS, 1
        if s.step_count >= self.time_limit:
            return TerminalKind.TIME_LIMIT, 0
        return None, 0

    def metric_omega(self, s: CartpoleState) -> float:
        """Series used for the smoothness metric: pole angular velocity."""
        return s.theta_dot


# ---------------------------------------------------------------------------
# navsim

NAV_DT = 0.5
NAV_V_MAX = 0.1
NAV_W_MAX = 0.4
NAV_BEAMS = 16
NAV_FOV = math.pi
NAV_MAX_RANGE = 2.0
NAV_GOAL_RADIUS = 0.15
NAV_CLEARANCE_MIN = 0.05

# Potential-field constants, tuned until the supervisor alone solves at
# least 48/50 random scenes without dropping below the clearance floor.
NAV_REP_GAIN = 0.35
NAV_REP_RANGE = 0.55
NAV_TURN_GAIN = 2.5

# Stall clause of the acceptability gate: the supervisor also claims control
# when the agent has not improved its best goal distance for this many steps.
NAV_STALL_STEPS = 12
NAV_PROGRESS_EPS = 0.015


@dataclass
class NavScene:
    start_pose: np.ndarray  # (x, y, heading)
    goal: np.ndarray        # (x, y)
    obstacles: np.ndarray   # (n, 3) rows of (cx, cy, radius)

    def __post_init__(self):
        self.start_pose = np.asarray(self.start_pose, dtype=np.float64)
        self.goal = np.asarray(self.goal, dtype=np.float64)
        self.obstacles = np.asarray(self.obstacles, dtype=np.float64).reshape(-1, 3)
        if np.any(self.obstacles[:, 2] <= 0):
            raise ValueError("obstacle radii must be positive")


@dataclass
class NavState:
    x: float
    y: float
    heading: float
    goal: np.ndarray
    obstacles: np.ndarray
    step_count: int = 0

    @property
    def pose(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading])

    @classmethod
    def from_scene(cls, scene: NavScene) -> "NavState":
        return cls(
            x=float(scene.start_pose[0]),
            y=float(scene.start_pose[1]),
            heading=float(scene.start_pose[2]),
            goal=scene.goal.copy(),
            obstacles=scene.obstacles.copy(),
        )


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def navsim_step(s: NavState, a) -> NavState:
    """Unicycle kinematics at 2 Hz; heading is updated before translation."""
    v = float(np.clip(a[0], -NAV_V_MAX, NAV_V_MAX))
    w = float(np.clip(a[1], -NAV_W_MAX, NAV_W_MAX))
    heading = _wrap_angle(s.heading + w * NAV_DT) if w != 0.0 else s.heading
    return NavState(
        x=s.x + v * math.cos(heading) * NAV_DT,
        y=s.y + v * math.sin(heading) * NAV_DT,
        heading=heading,
        goal=s.goal,
        obstacles=s.obstacles,
        step_count=s.step_count + 1,
    )


def nav_clearance(s: NavState) -> float:
    if s.obstacles.shape[0] == 0:
        return math.inf
    d = np.hypot(s.obstacles[:, 0] - s.x, s.obstacles[:, 1] - s.y) - s.obstacles[:, 2]
    return float(d.min())


def navsim_observe(s: NavState) -> np.ndarray:
    """16 range beams over the forward 180 degrees, then goal distance and
    goal bearing relative to the heading."""
    angles = s.heading - NAV_FOV / 2.0 + np.arange(NAV_BEAMS) * (NAV_FOV / (NAV_BEAMS - 1))
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)  # (16, 2)
    beams = np.full(NAV_BEAMS, NAV_MAX_RANGE)
    if s.obstacles.shape[0] > 0:
        oc = s.obstacles[:, :2] - np.array([s.x, s.y])  # (n, 2)
        b = dirs @ oc.T  # (16, n)
        c = (oc ** 2).sum(axis=1) - s.obstacles[:, 2] ** 2  # (n,)
        disc = b * b - c[None, :]
        hit = disc >= 0
        t = np.where(hit, b - np.sqrt(np.where(hit, disc, 0.0)), np.inf)
        t = np.where(c[None, :] < 0, 0.0, t)  # origin inside a circle
        t = np.where(t >= 0, t, np.inf)
        beams = np.minimum(t.min(axis=1), NAV_MAX_RANGE)
    dx, dy = s.goal[0] - s.x, s.goal[1] - s.y
    dist = math.hypot(dx, dy)
    bearing = _wrap_angle(math.atan2(dy, dx) - s.heading)
    return np.concatenate([beams, [dist, bearing]])


# Inside this clearance band the supervisor switches to an urgent full-rate
# evasive turn; corrections recorded during interventions are therefore
# abrupt, the way an alarmed human operator's are.
NAV_URGENT_CLEARANCE = 0.09


def navsim_supervisor(s: NavState) -> np.ndarray:
    """Scripted navigation controller.

    Normal mode is a smooth potential field (goal attraction plus obstacle
    repulsion). When clearance drops into the urgent band the controller
    slows down and turns away from the nearest obstacle at the full rate.
    """
    dx, dy = s.goal[0] - s.x, s.goal[1] - s.y
    dist = math.hypot(dx, dy)
    if dist < NAV_GOAL_RADIUS:
        return np.zeros(2)
    if s.obstacles.shape[0] > 0:
        gaps = np.hypot(s.obstacles[:, 0] - s.x, s.obstacles[:, 1] - s.y) - s.obstacles[:, 2]
        nearest = int(np.argmin(gaps))
        if gaps[nearest] < NAV_URGENT_CLEARANCE:
            away = math.atan2(s.y - s.obstacles[nearest, 1], s.x - s.obstacles[nearest, 0])
            err = _wrap_angle(away - s.heading)
            w = NAV_W_MAX if err >= 0 else -NAV_W_MAX
            v = NAV_V_MAX * 0.5 * max(0.0, math.cos(err))
            return np.array([v, w])
    desired = np.array([dx, dy]) / dist
    for cx, cy, r in s.obstacles:
        ox, oy = s.x - cx, s.y - cy
        center_d = math.hypot(ox, oy)
        surf = center_d - r
        if surf < NAV_REP_RANGE:
            strength = NAV_REP_GAIN * (1.0 / max(surf, 1e-3) - 1.0 / NAV_REP_RANGE)
            desired += np.array([ox, oy]) / max(center_d, 1e-9) * strength
    err = _wrap_angle(math.atan2(desired[1], desired[0]) - s.heading)
    w = float(np.clip(NAV_TURN_GAIN * err, -NAV_W_MAX, NAV_W_MAX))
    v = NAV_V_MAX * max(0.0, math.cos(err))
    return np.array([v, w])


def generate_scene(rng: np.random.Generator) -> NavScene:
    """A fresh goal/obstacle configuration with a traversable corridor."""
    heading = rng.uniform(-math.pi / 6, math.pi / 6)
    goal_dist = rng.uniform(1.3, 1.8)
    goal_bearing = rng.uniform(-math.pi / 4, math.pi / 4)
    goal = np.array([goal_dist * math.cos(goal_bearing), goal_dist * math.sin(goal_bearing)])
    n_obs = int(rng.integers(2, 4))
    obstacles = []
    tries = 0
    while len(obstacles) < n_obs and tries < 200:
        tries += 1
        frac = rng.uniform(0.30, 0.75)
        lateral = rng.uniform(-0.45, 0.45)
        along = goal * frac
        perp = np.array([-goal[1], goal[0]]) / np.linalg.norm(goal)
        center = along + perp * lateral
        radius = rng.uniform(0.08, 0.16)
        if np.linalg.norm(center) < radius + 0.35:
            continue
        if np.linalg.norm(center - goal) < radius + 0.35:
            continue
        if any(
            np.linalg.norm(center - o[:2]) < radius + o[2] + 0.45 for o in obstacles
        ):
            continue
        obstacles.append(np.array([center[0], center[1], radius]))
    return NavScene(
        start_pose=np.array([0.0, 0.0, heading]),
        goal=goal,
        obstacles=np.array(obstacles).reshape(-1, 3),
    )


def save_scene(scene: NavScene, path) -> None:
    rec = {
        "start_pose": list(scene.start_pose),
        "goal": list(scene.goal),
        "obstacles": [list(o) for o in scene.obstacles],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rec, fh, indent=2)
        fh.write("\n")


def load_scene(path) -> NavScene:
    with open(path, "r", encoding="utf-8") as fh:
        rec = json.load(fh)
    return NavScene(rec["start_pose"], rec["goal"], rec["obstacles"])


class NavEnv:
    """Goal-reaching with obstacle avoidance; a new scene every episode.

    The acceptability gate has two clauses: a predictive clearance check
    (current clearance and one-lookahead clearance above the floor) and a
    stall check that hands control to the supervisor when the agent has made
    no progress toward the goal for a while, standing in for the human
    judgment of "undesirable" behavior.
    """

    name = "navsim"
    obs_dim = NAV_BEAMS + 2
    action_dim = 2
    control_hz = 2.0

    def __init__(self, time_limit: int = 90):
        self.time_limit = time_limit
        self.box = ActionBox(np.array([-NAV_V_MAX, -NAV_W_MAX]), np.array([NAV_V_MAX, NAV_W_MAX]))
        self.state: Optional[NavState] = None

    def reset(self, rng: np.random.Generator, scene: Optional[NavScene] = None) -> np.ndarray:
        self.state = NavState.from_scene(scene if scene is not None else generate_scene(rng))
        self._best_goal_dist = self._goal_dist(self.state)
        self._last_progress_step = 0
        return self.observe()

    @staticmethod
    def _goal_dist(s: NavState) -> float:
        return math.hypot(s.goal[0] - s.x, s.goal[1] - s.y)

    def observe(self) -> np.ndarray:
        return navsim_observe(self.state)

    def stalled(self, s: NavState) -> bool:
        return s.step_count - self._last_progress_step >= NAV_STALL_STEPS

    def in_d_good(self, s: NavState, action: np.ndarray) -> bool:
        if self.stalled(s):
            return False
        if nav_clearance(s) <= NAV_CLEARANCE_MIN:
            return False
        return nav_clearance(navsim_step(s, action)) > NAV_CLEARANCE_MIN

    def in_inner(self, s: NavState, margin: float) -> bool:
        return (nav_clearance(s) > NAV_CLEARANCE_MIN / margin) and not self.stalled(s)

    def supervisor_action(self, s: NavState) -> np.ndarray:
        return navsim_supervisor(s)

    def step(self, action: np.ndarray, f_demo: int):
        self.state = navsim_step(self.state, self.box.clip(np.asarray(action)))
        s = self.state
        dist = self._goal_dist(s)
        if dist < self._best_goal_dist - NAV_PROGRESS_EPS:
            self._best_goal_dist = dist
            self._last_progress_step = s.step_count
        if nav_clearance(s) <= 0.0:
            return TerminalKind.TASK_FAILURE, 0
        if dist <= NAV_GOAL_RADIUS:
            return TerminalKind.TASK_SUCCESS, 1
        if s.step_count >= self.time_limit:
            return TerminalKind.TIME_LIMIT, 0
        return None, 0

    def metric_omega(self, s: NavState) -> float:
        raise NotImplementedError  # navsim smoothness uses commanded w directly


# ---------------------------------------------------------------------------
# gate and rollout mixing


@dataclass
class SupervisorGate:
    """Intervention state machine.

    The supervisor takes control when the proposed (state, action) pair
    leaves the acceptable set, and releases only after the state has been
    inside the inner hand-back region for `handback_hold` consecutive
    supervised steps.
    """

    d_good: Callable
    inner: Callable
    handback_margin: float = 0.5
    handback_hold: int = 5
    supervisor_owns: bool = field(default=False, init=False)
    _hold: int = field(default=0, init=False)

    def reset(self) -> None:
        self.supervisor_owns = False
        self._hold = 0


def make_gate(env, handback_margin: float = 0.5, handback_hold: int = 5) -> SupervisorGate:
    return SupervisorGate(
        d_good=env.in_d_good,
        inner=lambda s: env.in_inner(s, handback_margin),
        handback_margin=handback_margin,
        handback_hold=handback_hold,
    )


def rollout_step(env, gate: SupervisorGate, agent_action: np.ndarray, supervisor=None):
    """Execute one environment step under the mixing rule.

    Returns (transition, owner, terminal_kind). The transition's gating
    flags are left unset; episode assembly fills them in once the successor
    flag is known.
    """
    s = env.state
    obs = env.observe()
    agent_action = np.atleast_1d(np.asarray(agent_action, dtype=np.float64))
    supervisor_fn = supervisor if supervisor is not None else env.supervisor_action
    if gate.supervisor_owns or not gate.d_good(s, agent_action):
        gate.supervisor_owns = True
        action = np.atleast_1d(np.asarray(supervisor_fn(s), dtype=np.float64))
        f_demo = 1
        if gate.inner(s):
            gate._hold += 1
            if gate._hold >= gate.handback_hold:
                gate.supervisor_owns = False
                gate._hold = 0
        else:
            gate._hold = 0
    else:
        action = agent_action
        f_demo = 0
    terminal, f_tf_s = env.step(action, f_demo)
    tr = Transition(obs=obs, action=action, f_demo=f_demo, f_tf_s=f_tf_s)
    owner = "supervisor" if f_demo else "agent"
    return tr, owner, terminal
