"""Network boundary for the live operator console.

One WebSocket endpoint streams a state frame per simulator tick and accepts
operator commands (intervene, motion, grip, mode toggle, reset). Commands
queue into per-type slots and are applied exactly once at the next tick
boundary, in the order reset > intervene > mode > grip > motion. The tick
loop is the only mutator of simulation state; a slow client just misses
frames (latest wins), never stalls the loop.

Operator motion is a linear velocity plus an absolute orientation, the same
contract as the handheld controller, so every motion passes through the full
constraint pipeline inside the environment.
"""
from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse

from . import hsn as hsn_mod
from .constraints import ConfigMode, OperatorInput
from .demo_store import Packet, RolloutMemory, Trajectory, close_episode, record_packet
from .geometry import UnitQuat, Vec3
from .sim_env import MODE_INDEX, SimEnv, TaskSpec
from .uncertainty import ConservativePlanner, scale_action

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MAX_FRAME_BYTES = 64 * 1024
CLIENT_TYPES = ("intervene", "motion", "grip", "mode_toggle", "reset")
SERVER_TYPES = ("hello", "state", "error")
_PAYLOAD_FIELDS = {
    "intervene": {"engaged"},
    "motion": {"dp", "quat"},
    "grip": {"closed"},
    "mode_toggle": set(),
    "reset": set(),
}


class WireError(Exception):
    pass


def encode_message(msg: dict) -> str:
    return json.dumps(msg, sort_keys=True, separators=(",", ":"))


def decode_message(raw: str) -> dict:
    if len(raw.encode()) > MAX_FRAME_BYTES:
        raise WireError(f"frame exceeds {MAX_FRAME_BYTES} bytes")
    try:
        msg = json.loads(raw)
    except json.JSONDecodeError as e:
        raise WireError(f"invalid JSON at position {e.pos}: {e.msg}")
    if not isinstance(msg, dict):
        raise WireError("message must be an object")
    unknown = set(msg) - {"type", "seq", "tick", "payload"}
    if unknown:
        raise WireError(f"unknown fields {sorted(unknown)}")
    mtype = msg.get("type")
    if mtype not in CLIENT_TYPES + SERVER_TYPES:
        raise WireError(f"unknown message type '{mtype}'")
    if "seq" not in msg or not isinstance(msg["seq"], int):
        raise WireError("missing integer 'seq'")
    payload = msg.get("payload", {})
    if not isinstance(payload, dict):
        raise WireError("'payload' must be an object")
    expected = _PAYLOAD_FIELDS.get(mtype)
    if expected is not None:
        missing = expected - set(payload)
        if missing:
            raise WireError(f"{mtype}: missing payload fields {sorted(missing)}")
        extra = set(payload) - expected
        if extra:
            raise WireError(f"{mtype}: unknown payload fields {sorted(extra)}")
    if mtype == "motion":
        if len(payload["dp"]) != 3 or len(payload["quat"]) != 4:
            raise WireError("motion payload must carry dp[3] and quat[4]")
    return msg


@dataclass
class PendingCommands:
    """One slot per command type; the latest message before a tick wins."""

    reset: bool = False
    intervene: bool | None = None
    mode_toggle: int = 0
    grip: bool | None = None
    motion: tuple | None = None

    def clear(self):
        self.reset = False
        self.intervene = None
        self.mode_toggle = 0
        self.grip = None
        self.motion = None


class LiveSession:
    """Simulator session steered jointly by a policy and a console operator.

    Without policy parameters this is plain teleoperated collection: motion
    only happens while the operator holds intervention (the trigger), and
    only those ticks are recorded. With a policy, disengaged ticks execute
    decoded skill chunks and engaged ticks record human corrections.
    """

    def __init__(self, env: SimEnv, task: TaskSpec, memory: RolloutMemory,
                 params: dict | None = None, cfg: hsn_mod.HsnConfig | None = None,
                 seed: int = 0, conservative: bool = True, mc_samples: int = 16,
                 epsilon: float = 2e-3, record_dir=None):
        self.env = env
        self.task = task
        self.memory = memory
        self.params = params
        self.cfg = cfg
        self.conservative = conservative
        self.mc_samples = mc_samples
        self.epsilon = epsilon
        self.seed = seed
        self.record_dir = record_dir
        self.lock = threading.Lock()
        self.pending = PendingCommands()
        self.engaged = False
        self.grip_closed = False
        self.episode_index = 0
        self.generation = 0
        self.seq = 0
        self.uncertainty = 0.0
        self.owner = "idle"
        self.chunk: np.ndarray | None = None
        self.chunk_pos = 0
        self.owner_log: list = []
        self._begin_episode()

    # -- episode plumbing ---------------------------------------------------

    def _begin_episode(self):
        self.obs, self.state = self.env.reset(self.task, self.seed + self.episode_index)
        self.desired_mode = self.env.mode
        self.traj = Trajectory(task=self.task.name, seed=self.seed + self.episode_index,
                               source="human")
        self.planner = None
        if self.params is not None:
            self.planner = ConservativePlanner(self.params, self.cfg,
                                               mc_samples=self.mc_samples,
                                               epsilon=self.epsilon,
                                               seed=self.seed + self.episode_index,
                                               enabled=self.conservative)
        self.chunk = None
        self.chunk_pos = 0

    def _finish_episode(self):
        if self.traj.packets:
            close_episode(self.traj, self.obs, self.state)
            self.memory.add(self.traj)
            if self.record_dir is not None:
                from .demo_store import save_trajectory
                save_trajectory(self.traj, Path(self.record_dir) /
                                f"ep_{self.traj.traj_id:06d}")
        self.episode_index += 1
        self._begin_episode()

    # -- command intake (any thread) ----------------------------------------

    def submit(self, msg: dict) -> dict | None:
        """Queue one decoded client message; returns an error reply or None."""
        mtype = msg["type"]
        with self.lock:
            if mtype == "motion" and not self.engaged and self.pending.intervene is not True:
                return {"type": "error", "seq": msg["seq"],
                        "payload": {"message": "motion ignored: not engaged"}}
            if mtype == "reset":
                self.pending.reset = True
            elif mtype == "intervene":
                self.pending.intervene = bool(msg["payload"]["engaged"])
            elif mtype == "mode_toggle":
                self.pending.mode_toggle += 1
            elif mtype == "grip":
                self.pending.grip = bool(msg["payload"]["closed"])
            elif mtype == "motion":
                dp = [float(v) for v in msg["payload"]["dp"]]
                quat = [float(v) for v in msg["payload"]["quat"]]
                self.pending.motion = (dp, quat)
        return None

    # -- tick loop (single thread) -------------------------------------------

    def tick(self):
        """Apply queued commands, then advance the simulation one step."""
        with self.lock:
            cmds = self.pending
            self.pending = PendingCommands()
        if cmds.reset:
            self._finish_episode()
        if cmds.intervene is not None and cmds.intervene != self.engaged:
            self.engaged = cmds.intervene
            self.chunk = None  # abandon the rest of the chunk immediately
            if self.engaged and self.planner is not None:
                self.planner.reset()
        if cmds.mode_toggle % 2 == 1:
            flip = {ConfigMode.FORWARD: ConfigMode.DOWNWARD,
                    ConfigMode.DOWNWARD: ConfigMode.FORWARD}
            self.desired_mode = flip[self.desired_mode]
        if cmds.grip is not None:
            self.grip_closed = cmds.grip
        if not self.env.active:
            self._finish_episode()
        if self.engaged:
            self.owner = "expert"
            self._tick_operator(cmds.motion)
        elif self.planner is not None:
            self.owner = "policy"
            self._tick_policy()
        else:
            self.owner = "idle"
            self.obs, self.state, _ = self.env.step_velocity(np.zeros(self.env.chain.n_joints))
        self.owner_log.append((self.env.tick, self.owner))
        self.generation += 1

    def _tick_operator(self, motion):
        pose = self.env.tcp_pose()
        if motion is None:
            dp, quat = np.zeros(3), pose.q
        else:
            dp = np.array(motion[0])
            quat = UnitQuat.from_array(motion[1])
        op = OperatorInput(linear_velocity=Vec3.from_array(dp), orientation=quat,
                           trigger=True, grip=self.grip_closed)
        action = self.env.operator_action(op, self.desired_mode)
        record_packet(self.traj, Packet(t=self.env.tick, o=self.obs, s=self.state,
                                        a=action, u=False))
        self.obs, self.state, _ = self.env.step(action)
        self.desired_mode = self.env.mode

    def _tick_policy(self):
        if self.chunk is None or self.chunk_pos >= self.chunk.shape[0]:
            z_hat, trace = self.planner.infer(self.obs, self.state)
            self.uncertainty = trace.normalized if self.conservative else 0.0
            self.chunk = hsn_mod.decode(self.params, z_hat, self.cfg)
            self.chunk_pos = 0
        action = scale_action(self.chunk[self.chunk_pos], self.uncertainty)
        self.chunk_pos += 1
        self.obs, self.state, _ = self.env.step(action)
        self.desired_mode = self.env.mode

    # -- outbound frames -----------------------------------------------------

    def _next_seq(self) -> int:
        self.seq += 1
        return self.seq

    def hello_message(self) -> dict:
        table = {mode.value: {axis: [self.env.table.bounds(mode, axis).lo,
                                     self.env.table.bounds(mode, axis).hi]
                              for axis in ("x", "y", "z", "alpha", "beta", "gamma")}
                 for mode in ConfigMode}
        return {"type": "hello", "seq": self._next_seq(), "tick": self.env.tick,
                "payload": {"schema_version": SCHEMA_VERSION, "task": self.task.name,
                            "tick_rate_hz": 30,
                            "chain": {"n_joints": self.env.chain.n_joints,
                                      "dh": [{"a": r.a, "d": r.d, "alpha": r.alpha}
                                             for r in self.env.chain.rows],
                                      "tcp_offset": list(
                                          self.env.chain.tcp_offset.as_array())},
                            "table": table}}

    def state_message(self) -> dict:
        pose = self.env.tcp_pose()
        objects = [{"id": o.obj_id, "kind": o.kind,
                    "pos": [float(v) for v in o.position],
                    "yaw": float(o.yaw()), "held": bool(o.held)}
                   for o in self.env.objects.values()]
        return {"type": "state", "seq": self._next_seq(), "tick": self.env.tick,
                "payload": {"joints": [float(v) for v in self.env.theta],
                            "tcp_pos": [float(v) for v in pose.p.as_array()],
                            "tcp_quat": [float(v) for v in pose.q.as_array()],
                            "gripper": float(self.env.gripper),
                            "mode": self.env.mode.value,
                            "uncertainty": float(self.uncertainty),
                            "owner": self.owner,
                            "objects": objects,
                            "episode": {"index": self.episode_index,
                                        "tick": self.env.tick,
                                        "active": self.env.active,
                                        "success": self.env.success_latched}}}


def build_app(session: LiveSession, static_dir=None):
    """FastAPI app exposing the console assets and the operator socket."""
    app = FastAPI()
    app.state.session = session
    app.state.operator_connected = False

    @app.get("/healthz")
    def healthz():
        return JSONResponse({"ok": True, "tick": session.env.tick})

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        import asyncio
        await ws.accept()
        if app.state.operator_connected:
            await ws.send_text(encode_message(
                {"type": "error", "seq": 0,
                 "payload": {"message": "another operator is connected"}}))
            await ws.close()
            return
        app.state.operator_connected = True
        last_gen = -1
        last_client_seq = None
        try:
            await ws.send_text(encode_message(session.hello_message()))

            async def reader():
                nonlocal last_client_seq
                while True:
                    raw = await ws.receive_text()
                    try:
                        msg = decode_message(raw)
                    except WireError as e:
                        await ws.send_text(encode_message(
                            {"type": "error", "seq": 0, "payload": {"message": str(e)}}))
                        continue
                    if last_client_seq is not None and msg["seq"] <= last_client_seq:
                        log.warning("out-of-order seq %s after %s; applying anyway",
                                    msg["seq"], last_client_seq)
                    last_client_seq = max(msg["seq"], last_client_seq or 0)
                    reply = session.submit(msg)
                    if reply is not None:
                        await ws.send_text(encode_message(reply))

            reader_task = asyncio.create_task(reader())
            try:
                while True:
                    if session.generation != last_gen:
                        last_gen = session.generation
                        await ws.send_text(encode_message(session.state_message()))
                    if reader_task.done():
                        break
                    await asyncio.sleep(0.004)
            finally:
                reader_task.cancel()
        except WebSocketDisconnect:
            pass
        finally:
            app.state.operator_connected = False

    if static_dir is not None and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="console")
    return app


def run_server(session: LiveSession, host: str, port: int, static_dir=None,
               tick_rate: float = 30.0):
    """Blocking entry point: background tick thread plus the ASGI server."""
    import uvicorn

    stop = threading.Event()

    def tick_loop():
        interval = 1.0 / tick_rate
        nxt = time.monotonic()
        while not stop.is_set():
            session.tick()
            nxt += interval
            delay = nxt - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            else:
                nxt = time.monotonic()  # fell behind; don't burst

    thread = threading.Thread(target=tick_loop, daemon=True)
    thread.start()
    try:
        uvicorn.run(build_app(session, static_dir), host=host, port=port,
                    log_level="warning")
    finally:
        stop.set()
        thread.join(timeout=2.0)
