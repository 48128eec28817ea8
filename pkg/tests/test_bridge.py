import asyncio
import json

import numpy as np
import pytest
from websockets.asyncio.client import connect

from reil.bridge import LiveSession, decode_message, encode_message
from reil.harness import default_experiment
from reil.training import Mode

PORT_BASE = 8931


def live_cfg(seed=0, time_limit=25):
    cfg = default_experiment("cartpole", Mode.REIL, seed=seed)
    cfg.episodes = 1
    cfg.cartpole_time_limit = time_limit
    return cfg


class Client:
    def __init__(self, ws):
        self.ws = ws
        self.seq = 0
        self.received: list[dict] = []

    async def send(self, kind, payload=None):
        self.seq += 1
        await self.ws.send(encode_message(kind, self.seq, payload or {}))

    async def recv(self, timeout=5.0):
        msg = decode_message(await asyncio.wait_for(self.ws.recv(), timeout))
        self.received.append(msg)
        return msg

    def states(self):
        return [m for m in self.received if m["kind"] == "STATE"]


def run_async(coro):
    return asyncio.run(asyncio.wait_for(coro, timeout=60))


def test_scripted_takeover_release_label_trace():
    session = LiveSession(live_cfg(), PORT_BASE, control_hz=100, max_episodes=1,
                          train=False)

    async def scenario():
        task = asyncio.create_task(session.run())
        await session.ready.wait()
        async with connect(f"ws://localhost:{PORT_BASE}") as ws:
            c = Client(ws)
            await c.send("HELLO")
            takeover_at = None
            release_at = None
            label_sent = False
            while True:
                msg = await c.recv()
                if msg["kind"] == "CONFIG":
                    assert msg["payload"]["env"] == "cartpole"
                    continue
                if msg["kind"] == "EPISODE_END":
                    break
                if msg["kind"] != "STATE":
                    continue
                step = msg["payload"]["step_index"]
                if step == 2 and not label_sent:
                    label_sent = True
                    await c.send("LABEL", {"action": [0.5]})
                if step == 5 and takeover_at is None:
                    takeover_at = step
                    await c.send("TAKEOVER")
                    await c.send("HUMAN_ACTION", {"action": [0.2]})
                if takeover_at is not None and release_at is None and step >= 12:
                    release_at = step
                    await c.send("RELEASE")
        await task
        return takeover_at, release_at, c

    takeover_at, release_at, client = run_async(scenario())

    states = client.states()
    # flag fidelity: stored sequence is exactly reconstructible from the log
    observed = {m["payload"]["step_index"]: m["payload"]["f_demo"] for m in states}
    stored = session.episode_flags[0]
    for step, f in observed.items():
        assert stored[step] == f
    # human control happened, bounded by the takeover/release interval
    human_steps = [i for i, f in enumerate(stored) if f == 1]
    assert len(human_steps) >= 3
    assert min(human_steps) > takeover_at
    assert max(human_steps) <= release_at + 2
    # executed action during takeover is the most recent HUMAN_ACTION
    for tr in session.memory:
        if tr.f_demo == 1:
            assert tr.action[0] == pytest.approx(0.2)
    # release bypasses hysteresis: the step after the last human step is agent-owned
    assert stored[max(human_steps) + 1] == 0
    # labels stored out-of-band, never executed
    assert len(session.labels) == 1
    assert session.labels[0]["action"][0] == pytest.approx(0.5)
    assert not any(tr.f_demo == 0 and tr.action[0] == pytest.approx(0.5)
                   for tr in session.memory)
    # server seq strictly increases
    seqs = [m["seq"] for m in client.received]
    assert all(b > a for a, b in zip(seqs, seqs[1:]))
    # one non-aborted episode with a metrics row
    assert len(session.metrics) == 1
    assert session.metrics.rows[0].supervised_steps == len(human_steps)


def test_second_client_rejected_busy():
    session = LiveSession(live_cfg(seed=1), PORT_BASE + 1, control_hz=100,
                          max_episodes=1, train=False)

    async def scenario():
        task = asyncio.create_task(session.run())
        await session.ready.wait()
        async with connect(f"ws://localhost:{PORT_BASE + 1}") as ws1:
            c1 = Client(ws1)
            await c1.send("HELLO")
            await c1.recv()  # CONFIG
            async with connect(f"ws://localhost:{PORT_BASE + 1}") as ws2:
                raw = await asyncio.wait_for(ws2.recv(), 5.0)
                msg = decode_message(raw)
                assert msg["kind"] == "ERROR"
                assert msg["payload"]["code"] == "BUSY"
        session.stop()
        await task

    run_async(scenario())


def test_protocol_violations_are_rejected_and_ignored():
    session = LiveSession(live_cfg(seed=2), PORT_BASE + 2, control_hz=100,
                          max_episodes=1, train=False)

    async def scenario():
        task = asyncio.create_task(session.run())
        await session.ready.wait()
        async with connect(f"ws://localhost:{PORT_BASE + 2}") as ws:
            c = Client(ws)
            # HUMAN_ACTION outside a takeover
            await c.send("HUMAN_ACTION", {"action": [1.0]})
            errors = []
            while len(errors) < 3:
                msg = await c.recv()
                if msg["kind"] == "ERROR":
                    errors.append(msg["payload"]["detail"])
                    if len(errors) == 1:
                        await ws.send("this is not json")
                    elif len(errors) == 2:
                        await ws.send(encode_message("TAKEOVER", 0, {}))  # stale seq
            assert "outside takeover" in errors[0]
            assert any("seq" in e for e in errors)
        session.stop()
        await task
        # no human flag was ever raised
        assert all(f == 0 for flags in session.episode_flags.values() for f in flags) \
            or not session.episode_flags

    run_async(scenario())


def test_heartbeat_pauses_env_until_traffic_resumes():
    session = LiveSession(live_cfg(seed=3, time_limit=400), PORT_BASE + 3,
                          control_hz=100, max_episodes=1, train=False,
                          heartbeat_timeout=0.12, abort_timeout=30.0)

    async def scenario():
        task = asyncio.create_task(session.run())
        await session.ready.wait()
        paused_steps = []
        resumed = False
        async with connect(f"ws://localhost:{PORT_BASE + 3}") as ws:
            c = Client(ws)
            await c.send("TAKEOVER")
            await c.send("HUMAN_ACTION", {"action": [0.0]})
            # go silent; watch for paused frames
            while len(paused_steps) < 3:
                msg = await c.recv()
                if msg["kind"] == "STATE" and msg["payload"]["paused"]:
                    paused_steps.append(msg["payload"]["step_index"])
            assert len(set(paused_steps)) == 1  # step index frozen
            await c.send("HUMAN_ACTION", {"action": [0.1]})
            while not resumed:
                msg = await c.recv()
                if msg["kind"] == "STATE" and not msg["payload"]["paused"]:
                    resumed = True
            await c.send("RELEASE")
        session.stop()
        await task
        return resumed

    assert run_async(scenario())


def test_idle_viewer_does_not_interrupt_rollout():
    session = LiveSession(live_cfg(seed=4, time_limit=30), PORT_BASE + 4,
                          control_hz=200, max_episodes=1, train=False,
                          heartbeat_timeout=0.05)

    async def scenario():
        task = asyncio.create_task(session.run())
        await session.ready.wait()
        async with connect(f"ws://localhost:{PORT_BASE + 4}") as ws:
            c = Client(ws)
            ended = False
            while not ended:
                msg = await c.recv()
                ended = msg["kind"] == "EPISODE_END"
        await task

    run_async(scenario())
    assert len(session.metrics) == 1
    assert session.metrics.rows[0].steps == 30


def test_message_codec_roundtrip():
    raw = encode_message("STATE", 4, {"step_index": 2})
    msg = decode_message(raw)
    assert msg["kind"] == "STATE" and msg["seq"] == 4
    with pytest.raises(ValueError):
        decode_message(json.dumps({"kind": "NOPE", "seq": 1, "payload": {}}))
    with pytest.raises(ValueError):
        decode_message(json.dumps({"seq": 1, "payload": {}}))


def test_disconnect_and_reconnect_resumes_same_step():
    session = LiveSession(live_cfg(seed=5, time_limit=600), PORT_BASE + 5,
                          control_hz=100, max_episodes=1, train=False,
                          heartbeat_timeout=0.1, abort_timeout=30.0)

    async def scenario():
        task = asyncio.create_task(session.run())
        await session.ready.wait()
        async with connect(f"ws://localhost:{PORT_BASE + 5}") as ws:
            c = Client(ws)
            await c.send("TAKEOVER")
            await c.send("HUMAN_ACTION", {"action": [0.0]})
            # observe at least one normal state, then drop the connection
            while True:
                msg = await c.recv()
                if msg["kind"] == "STATE" and not msg["payload"]["paused"]:
                    break
        # disconnected during an active takeover: the env pauses
        await asyncio.sleep(0.3)
        paused_step = None
        async with connect(f"ws://localhost:{PORT_BASE + 5}") as ws:
            c2 = Client(ws)
            c2.seq = 100  # client restarts with a fresh, larger seq window
            while paused_step is None:
                msg = await c2.recv()
                if msg["kind"] == "STATE" and msg["payload"]["paused"]:
                    paused_step = msg["payload"]["step_index"]
            await c2.send("HUMAN_ACTION", {"action": [0.0]})
            resumed_step = None
            while resumed_step is None:
                msg = await c2.recv()
                if msg["kind"] == "STATE" and not msg["payload"]["paused"]:
                    resumed_step = msg["payload"]["step_index"]
            await c2.send("RELEASE")
        session.stop()
        await task
        return paused_step, resumed_step

    paused_step, resumed_step = run_async(scenario())
    # the session resumes from where it paused
    assert resumed_step in (paused_step, paused_step + 1)
