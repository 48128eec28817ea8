"""Live supervision bridge: a websocket session that streams rollout state
and lets a human take control, hand it back, and provide off-policy labels.

One session owns the environment and the training loop. The network side
and the rollout loop exchange data through two ordered queues; inbound
commands are drained once per control tick, so message handling never
blocks stepping. While a takeover is active and the client goes silent,
the environment pauses (same step_index keeps streaming) until traffic
resumes or the abort timeout expires; aborted episodes are excluded from
metrics and the stored dataset.
"""

from __future__ import annotations

import asyncio
import json
import time
from typing import Optional

import numpy as np
from websockets.asyncio.server import serve
from websockets.exceptions import ConnectionClosed

from .core import ReplayMemory, TerminalKind, Transition
from .envs import make_gate, rollout_step
from .metrics import MetricRow, MetricsLog, agent_angular_acceleration
from .training import (
    RolloutContext,
    _finalize_last,
    _finalize_mid,
    _spawn_rngs,
    _updates_dense,
    _updates_episodes,
    select_action,
)

MESSAGE_KINDS = ("HELLO", "STATE", "TAKEOVER", "HUMAN_ACTION", "RELEASE", "LABEL",
                 "EPISODE_END", "CONFIG", "ERROR")
INBOUND_KINDS = ("HELLO", "TAKEOVER", "HUMAN_ACTION", "RELEASE", "LABEL")


def encode_message(kind: str, seq: int, payload: dict) -> str:
    return json.dumps({"kind": kind, "seq": seq, "payload": payload})


def decode_message(raw) -> dict:
    msg = json.loads(raw)
    if not isinstance(msg, dict):
        raise ValueError("message must be an object")
    for field in ("kind", "seq", "payload"):
        if field not in msg:
            raise ValueError(f"missing field {field!r}")
    if msg["kind"] not in MESSAGE_KINDS:
        raise ValueError(f"unknown kind {msg['kind']!r}")
    if not isinstance(msg["seq"], int):
        raise ValueError("seq must be an integer")
    return msg


class LiveSession:
    """Owns one environment rollout and at most one supervising client."""

    def __init__(self, experiment, port: int, control_hz: Optional[float] = None,
                 heartbeat_timeout: float = 2.0, abort_timeout: float = 30.0,
                 max_episodes: Optional[int] = None, train: bool = True):
        from .harness import build_env, build_state, build_supervisor

        self.cfg = experiment
        self.port = port
        self.env = build_env(experiment)
        self.state = build_state(experiment)
        self.supervisor = build_supervisor(experiment)
        self.memory = ReplayMemory(experiment.memory_capacity,
                                   rng_seed=experiment.algorithm.seed)
        # live cartpole runs at 10 Hz: 50 Hz real time is not supervisable
        self.control_period = 1.0 / (control_hz if control_hz is not None
                                     else (10.0 if experiment.env == "cartpole"
                                           else self.env.control_hz))
        self.heartbeat_timeout = heartbeat_timeout
        self.abort_timeout = abort_timeout
        self.max_episodes = max_episodes if max_episodes is not None else experiment.episodes
        self.train = train

        self.metrics = MetricsLog()
        self.labels: list[dict] = []
        self.aborted_episodes: list[int] = []
        self.episode_flags: dict[int, list[int]] = {}

        self._client = None
        self._client_lock = asyncio.Lock()
        self._inbound: asyncio.Queue = asyncio.Queue()
        self._out_seq = 0
        self._last_in_seq = -1
        self._last_inbound_time = time.monotonic()
        self._human_takeover = False
        self._human_action = None
        self._pause_started: Optional[float] = None
        self._stopping = False
        self.ready = asyncio.Event()
        self.finished = asyncio.Event()

    # -- websocket plumbing

    async def _handler(self, websocket) -> None:
        async with self._client_lock:
            if self._client is not None:
                await websocket.send(encode_message(
                    "ERROR", self._next_seq(), {"code": "BUSY",
                                                "detail": "session already has a client"}))
                await websocket.close()
                return
            self._client = websocket
        try:
            async for raw in websocket:
                await self._inbound.put(raw)
        except ConnectionClosed:
            pass
        finally:
            async with self._client_lock:
                if self._client is websocket:
                    self._client = None

    def _next_seq(self) -> int:
        self._out_seq += 1
        return self._out_seq

    async def _send(self, kind: str, payload: dict) -> None:
        client = self._client
        if client is None:
            return
        try:
            await client.send(encode_message(kind, self._next_seq(), payload))
        except ConnectionClosed:
            self._client = None

    # -- inbound processing

    async def _drain_inbound(self, episode_id: int, step_index: int) -> None:
        while not self._inbound.empty():
            raw = self._inbound.get_nowait()
            self._last_inbound_time = time.monotonic()
            try:
                msg = decode_message(raw)
            except (ValueError, json.JSONDecodeError) as e:
                await self._send("ERROR", {"code": "PROTOCOL", "detail": str(e)})
                continue
            if msg["seq"] <= self._last_in_seq:
                await self._send("ERROR", {"code": "PROTOCOL",
                                           "detail": "seq must strictly increase"})
                continue
            self._last_in_seq = msg["seq"]
            await self._apply_message(msg, episode_id, step_index)

    async def _apply_message(self, msg: dict, episode_id: int, step_index: int) -> None:
        kind = msg["kind"]
        payload = msg.get("payload") or {}
        if kind == "HELLO":
            await self._send("CONFIG", {
                "env": self.cfg.env,
                "control_hz": 1.0 / self.control_period,
                "action_low": list(self.env.box.low),
                "action_high": list(self.env.box.high),
                "obs_dim": self.env.obs_dim,
            })
        elif kind == "TAKEOVER":
            if self._human_takeover:
                await self._send("ERROR", {"code": "PROTOCOL",
                                           "detail": "takeover already active"})
                return
            self._human_takeover = True
            self._human_action = np.zeros(self.env.action_dim)
        elif kind == "HUMAN_ACTION":
            if not self._human_takeover:
                await self._send("ERROR", {"code": "PROTOCOL",
                                           "detail": "HUMAN_ACTION outside takeover"})
                return
            try:
                self._human_action = self.env.box.clip(
                    np.asarray(payload["action"], dtype=np.float64))
            except (KeyError, ValueError):
                await self._send("ERROR", {"code": "PROTOCOL", "detail": "bad action"})
        elif kind == "RELEASE":
            if not self._human_takeover:
                await self._send("ERROR", {"code": "PROTOCOL",
                                           "detail": "RELEASE without takeover"})
                return
            # human release is immediate: the human judges feasibility
            self._human_takeover = False
            self._human_action = None
        elif kind == "LABEL":
            try:
                action = self.env.box.clip(np.asarray(payload["action"], dtype=np.float64))
            except (KeyError, ValueError):
                await self._send("ERROR", {"code": "PROTOCOL", "detail": "bad label"})
                return
            self.labels.append({"episode": episode_id, "step": step_index,
                                "action": action})
        else:
            await self._send("ERROR", {"code": "PROTOCOL",
                                       "detail": f"client may not send {kind}"})

    # -- safety pause

    def _paused(self) -> Optional[str]:
        """None, 'pause', or 'abort'."""
        if not self._human_takeover:
            self._pause_started = None
            return None
        silent = time.monotonic() - self._last_inbound_time
        if silent <= self.heartbeat_timeout:
            self._pause_started = None
            return None
        if self._pause_started is None:
            self._pause_started = time.monotonic()
        if time.monotonic() - self._pause_started > self.abort_timeout:
            return "abort"
        return "pause"

    # -- state payloads

    def _state_payload(self, episode_id: int, step_index: int, f_demo: int,
                       action, paused: bool, control: str) -> dict:
        s = self.env.state
        if self.cfg.env == "cartpole":
            env_state = {"x": s.x, "x_dot": s.x_dot, "theta": s.theta,
                         "theta_dot": s.theta_dot}
        else:
            env_state = {"x": s.x, "y": s.y, "heading": s.heading,
                         "goal": list(s.goal),
                         "obstacles": [list(o) for o in s.obstacles],
                         "beams": list(self.env.observe()[:16])}
        return {"episode": episode_id, "step_index": step_index, "f_demo": f_demo,
                "action": list(np.atleast_1d(action)) if action is not None else None,
                "state": env_state, "paused": paused, "control": control}

    # -- main loop

    async def run(self) -> None:
        async with serve(self._handler, "localhost", self.port):
            self.ready.set()
            try:
                await self._run_episodes()
            finally:
                self.finished.set()

    def stop(self) -> None:
        self._stopping = True

    async def _run_episodes(self) -> None:
        rng_env, rng_noise, rng_sample = _spawn_rngs(self.cfg.algorithm.seed)
        episode_id = 0
        while episode_id < self.max_episodes and not self._stopping:
            obs = self.env.reset(rng_env)
            gate = make_gate(self.env)
            context = (RolloutContext(self.env.obs_dim, self.env.action_dim,
                                      self.state.actor.cfg.seq_len)
                       if self.state.arch == "snail" else None)
            pending: list[Transition] = []
            fdemo_series: list[int] = []
            omega_series: list[float] = []
            rewards_sum = 0.0
            terminal = None
            aborted = False
            while terminal is None and not self._stopping:
                tick_start = time.monotonic()
                await self._drain_inbound(episode_id, len(pending))
                pause_state = self._paused()
                if pause_state == "abort":
                    aborted = True
                    self._human_takeover = False
                    self._human_action = None
                    break
                if pause_state == "pause":
                    await self._send("STATE", self._state_payload(
                        episode_id, max(len(pending) - 1, 0), 1, None, True, "human"))
                    await asyncio.sleep(self.control_period)
                    continue
                if self._human_takeover:
                    executed = self.env.box.clip(self._human_action)
                    tr = Transition(obs=self.env.observe(), action=executed, f_demo=1)
                    terminal, tr.f_tf_s = self.env.step(executed, 1)
                    gate.reset()
                    control = "human"
                else:
                    if self.state.arch == "mlp":
                        a = select_action(self.state, obs, True, self.cfg.algorithm,
                                          rng_noise)
                    else:
                        a = select_action(self.state, (context, obs), True,
                                          self.cfg.algorithm, rng_noise)
                    tr, owner, terminal = rollout_step(self.env, gate, a,
                                                       self.supervisor)
                    control = "gate" if tr.f_demo else "agent"
                tr.episode_id = episode_id
                tr.step_index = len(pending)
                if context is not None:
                    context.append(tr.obs, tr.action, tr.f_demo)
                if pending:
                    _finalize_mid(pending[-1], tr.f_demo, self.cfg.reward)
                    self.memory.append(pending[-1], next_obs=tr.obs)
                    rewards_sum += pending[-1].reward
                pending.append(tr)
                fdemo_series.append(tr.f_demo)
                omega_series.append(float(tr.action[-1]))
                obs = self.env.observe()
                if self.train and self.state.arch == "mlp" and terminal is None:
                    _updates_dense(self.state, self.memory, self.cfg.algorithm,
                                   rng_sample)
                await self._send("STATE", self._state_payload(
                    episode_id, tr.step_index, tr.f_demo, tr.action, False, control))
                elapsed = time.monotonic() - tick_start
                await asyncio.sleep(max(0.0, self.control_period - elapsed))
            if aborted or (terminal is None and self._stopping and not pending):
                self.aborted_episodes.append(episode_id)
                await self._send("EPISODE_END", {"terminal_kind": "ABORTED",
                                                 "metrics": None})
                episode_id += 1
                continue
            if not pending:
                break
            kind = terminal
            if kind is None or (kind is TerminalKind.TIME_LIMIT and pending[-1].f_demo):
                kind = (TerminalKind.INTERVENTION_ONGOING_AT_END if pending[-1].f_demo
                        else TerminalKind.TIME_LIMIT)
            _finalize_last(pending[-1], kind, self.cfg.reward)
            self.memory.append(pending[-1], next_obs=None, terminal_kind=kind)
            rewards_sum += pending[-1].reward
            if self.train and self.state.arch == "snail":
                _updates_episodes(self.state, self.memory, self.cfg.algorithm,
                                  rng_sample)
            self.episode_flags[episode_id] = list(fdemo_series)
            row = MetricRow(
                episode=episode_id, steps=len(pending),
                supervised_steps=int(sum(fdemo_series)),
                episode_return=rewards_sum,
                avg_abs_angular_acc=(agent_angular_acceleration(omega_series,
                                                                fdemo_series)
                                     if len(omega_series) > 1 else 0.0),
                action_error=None, success=kind is TerminalKind.TASK_SUCCESS)
            self.metrics.append(row)
            await self._send("EPISODE_END", {
                "terminal_kind": kind.value,
                "metrics": {"episode": row.episode, "steps": row.steps,
                            "supervised_steps": row.supervised_steps,
                            "episode_return": row.episode_return,
                            "success": row.success}})
            episode_id += 1


def serve_session_blocking(experiment, port: int, **kw) -> LiveSession:
    session = LiveSession(experiment, port, **kw)
    asyncio.run(session.run())
    return session
