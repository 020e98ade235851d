"""Rollout memory: packet schema, episode lifecycle, and on-disk persistence.

Each episode is a directory with a ``manifest.json`` and a ``packets.jsonl``
holding one packet per line. Floats are serialized with Python's shortest
round-trip repr, so save/load is exact. A trajectory ends with exactly one
terminal packet carrying a null action and the end flag.

State vector layout (16): joints(6), TCP position(3), TCP quaternion(4),
normalized gripper(1), configuration-mode one-hot(2).
Action vector layout (9): delta position(3), rotation quaternion(4),
grip command(1), configuration command(1).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

log = logging.getLogger(__name__)

STATE_DIM = 16
ACTION_DIM = 9
SOURCES = ("human", "scripted_expert", "policy", "correction")

# state vector slices
S_JOINTS = slice(0, 6)
S_TCP_POS = slice(6, 9)
S_TCP_QUAT = slice(9, 13)
S_GRIPPER = 13
S_MODE_ONEHOT = slice(14, 16)

# action vector slices
A_DPOS = slice(0, 3)
A_QUAT = slice(3, 7)
A_GRIP = 7
A_MODE = 8


class AppendAfterFinal(Exception):
    pass


class DoubleClose(Exception):
    pass


class SchemaError(Exception):
    pass


def _check_state(s: np.ndarray):
    if s.shape != (STATE_DIM,):
        raise SchemaError(f"state vector must have {STATE_DIM} entries, got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise SchemaError("state vector has non-finite entries")
    qn = float(np.linalg.norm(s[S_TCP_QUAT]))
    if abs(qn - 1.0) > 1e-6:
        raise SchemaError(f"state quaternion norm {qn} not unit")
    if not (0.0 - 1e-9 <= s[S_GRIPPER] <= 1.0 + 1e-9):
        raise SchemaError(f"gripper position {s[S_GRIPPER]} outside [0, 1]")
    if abs(float(np.sum(s[S_MODE_ONEHOT])) - 1.0) > 1e-9:
        raise SchemaError("mode one-hot does not sum to 1")


def _check_action(a: np.ndarray):
    if a.shape != (ACTION_DIM,):
        raise SchemaError(f"action vector must have {ACTION_DIM} entries, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise SchemaError("action vector has non-finite entries")
    qn = float(np.linalg.norm(a[A_QUAT]))
    if abs(qn - 1.0) > 1e-6:
        raise SchemaError(f"action quaternion norm {qn} not unit")
    for idx, name in ((A_GRIP, "grip"), (A_MODE, "mode")):
        if a[idx] not in (0.0, 1.0):
            raise SchemaError(f"{name} action {a[idx]} not in {{0, 1}}")


@dataclass
class Packet:
    t: int
    o: np.ndarray
    s: np.ndarray
    a: Optional[np.ndarray]
    u: bool

    def __post_init__(self):
        self.o = np.asarray(self.o, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        if self.a is not None:
            self.a = np.asarray(self.a, dtype=float)
        if (self.a is None) != self.u:
            raise SchemaError("terminal flag and null action must coincide")
        _check_state(self.s)
        if self.a is not None:
            _check_action(self.a)

    def equals(self, other: "Packet") -> bool:
        if self.t != other.t or self.u != other.u:
            return False
        if (self.a is None) != (other.a is None):
            return False
        same_a = True if self.a is None else bool(np.array_equal(self.a, other.a))
        return bool(np.array_equal(self.o, other.o) and np.array_equal(self.s, other.s) and same_a)


@dataclass
class Trajectory:
    task: str
    seed: int
    source: str
    packets: list = field(default_factory=list)
    traj_id: Optional[int] = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise SchemaError(f"unknown source '{self.source}' (expected one of {SOURCES})")

    @property
    def finalized(self) -> bool:
        return bool(self.packets) and self.packets[-1].u

    def __len__(self) -> int:
        return len(self.packets)

    @property
    def n_actions(self) -> int:
        return sum(1 for p in self.packets if p.a is not None)


def record_packet(traj: Trajectory, packet: Packet) -> Trajectory:
    if traj.finalized:
        raise AppendAfterFinal("trajectory already closed")
    if packet.u or packet.a is None:
        raise SchemaError("terminal packets must be appended via close_episode")
    if traj.packets and packet.t <= traj.packets[-1].t:
        raise SchemaError(f"tick {packet.t} not increasing (last {traj.packets[-1].t})")
    traj.packets.append(packet)
    return traj


def close_episode(traj: Trajectory, o_t: np.ndarray, s_t: np.ndarray) -> Trajectory:
    if traj.finalized:
        raise DoubleClose("trajectory already closed")
    t = traj.packets[-1].t + 1 if traj.packets else 0
    traj.packets.append(Packet(t=t, o=o_t, s=s_t, a=None, u=True))
    return traj


def _packet_to_json(p: Packet) -> str:
    return json.dumps({
        "t": p.t,
        "o": [float(v) for v in p.o],
        "s": [float(v) for v in p.s],
        "a": None if p.a is None else [float(v) for v in p.a],
        "u": p.u,
    }, sort_keys=True)


def save_trajectory(traj: Trajectory, path, extra_manifest: dict | None = None) -> Path:
    """Write one finalized episode as a directory (manifest + packet lines)."""
    if not traj.finalized:
        raise SchemaError("only finalized trajectories can be saved")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": 1,
        "task": traj.task,
        "seed": traj.seed,
        "source": traj.source,
        "tick_rate_hz": 30,
        "obs_dim": int(traj.packets[0].o.shape[0]),
        "packet_count": len(traj.packets),
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    (path / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    with open(path / "packets.jsonl", "w") as f:
        for p in traj.packets:
            f.write(_packet_to_json(p) + "\n")
    return path


def load_trajectory(path) -> Trajectory:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise SchemaError(f"{path}: missing manifest.json")
    traj = Trajectory(task=manifest["task"], seed=manifest["seed"], source=manifest["source"])
    last_t = None
    with open(path / "packets.jsonl") as f:
        for lineno, line in enumerate(f, start=1):
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({e})")
            for fieldname in ("t", "o", "s", "a", "u"):
                if fieldname not in raw:
                    raise SchemaError(f"{path}:{lineno}: missing field '{fieldname}'")
            try:
                packet = Packet(t=raw["t"], o=np.array(raw["o"], dtype=float),
                                s=np.array(raw["s"], dtype=float),
                                a=None if raw["a"] is None else np.array(raw["a"], dtype=float),
                                u=bool(raw["u"]))
            except SchemaError as e:
                raise SchemaError(f"{path}:{lineno}: {e}")
            if traj.finalized:
                raise SchemaError(f"{path}:{lineno}: packet after terminal")
            if last_t is not None and packet.t <= last_t:
                raise SchemaError(f"{path}:{lineno}: field 't' not strictly increasing")
            last_t = packet.t
            traj.packets.append(packet)
    if not traj.finalized:
        raise SchemaError(f"{path}: no terminal packet")
    if manifest.get("packet_count") != len(traj.packets):
        raise SchemaError(f"{path}: manifest packet_count {manifest.get('packet_count')} "
                          f"!= {len(traj.packets)} lines")
    return traj


@dataclass
class RolloutMemory:
    trajectories: dict = field(default_factory=dict)
    next_id: int = 0

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def packet_count(self) -> int:
        return sum(len(t) for t in self.trajectories.values())

    def add(self, traj: Trajectory) -> int:
        traj_id = self.next_id
        traj.traj_id = traj_id
        self.trajectories[traj_id] = traj
        self.next_id += 1
        return traj_id

    def in_order(self) -> list:
        return [self.trajectories[k] for k in sorted(self.trajectories)]


def merge(memory: RolloutMemory, new_trajectories) -> RolloutMemory:
    """Union of the memory and a batch of trajectories; ids stay monotone."""
    for traj in new_trajectories:
        memory.add(traj)
    return memory


def save_memory(memory: RolloutMemory, root, extra_manifest: dict | None = None) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for traj_id, traj in sorted(memory.trajectories.items()):
        save_trajectory(traj, root / f"ep_{traj_id:06d}", extra_manifest)
    return root


def load_memory(root, expected_task: str | None = None) -> RolloutMemory:
    """Load every episode directory under ``root``.

    Episodes whose manifest task does not match ``expected_task`` are skipped
    with a warning, as are degenerate episodes with no recorded actions.
    """
    root = Path(root)
    memory = RolloutMemory()
    for ep_dir in sorted(root.glob("ep_*")):
        traj = load_trajectory(ep_dir)
        if expected_task is not None and traj.task != expected_task:
            log.warning("%s: task '%s' does not match '%s'; skipped",
                        ep_dir, traj.task, expected_task)
            continue
        if traj.n_actions == 0:
            log.warning("%s: episode has no recorded actions; skipped", ep_dir)
            continue
        memory.add(traj)
    return memory


def chunk_for_training(memory: RolloutMemory, horizon: int) -> Iterator[tuple]:
    """Yield (o_t, s_t, actions[t:t+H]) windows with stride 1.

    Windows never cross the terminal packet; episodes shorter than H+1
    packets yield nothing.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    for traj in memory.in_order():
        n = traj.n_actions
        for start in range(0, n - horizon + 1):
            window = traj.packets[start:start + horizon]
            actions = np.stack([p.a for p in window])
            yield traj.packets[start].o, traj.packets[start].s, actions


def training_arrays(memory: RolloutMemory, horizon: int):
    """Stack all chunk_for_training windows into dense arrays."""
    obs, states, chunks = [], [], []
    for o, s, a in chunk_for_training(memory, horizon):
        obs.append(o)
        states.append(s)
        chunks.append(a)
    if not obs:
        return (np.zeros((0, 0)), np.zeros((0, STATE_DIM)), np.zeros((0, horizon, ACTION_DIM)))
    return np.stack(obs), np.stack(states), np.stack(chunks)


def make_state_vector(joints: np.ndarray, tcp_pos: np.ndarray, tcp_quat: np.ndarray,
                      gripper: float, mode_index: int) -> np.ndarray:
    s = np.zeros(STATE_DIM)
    s[S_JOINTS] = joints
    s[S_TCP_POS] = tcp_pos
    s[S_TCP_QUAT] = tcp_quat
    s[S_GRIPPER] = gripper
    s[S_MODE_ONEHOT.start + mode_index] = 1.0
    return s


def make_action_vector(dpos: np.ndarray, quat: np.ndarray, grip: float, mode: float) -> np.ndarray:
    a = np.zeros(ACTION_DIM)
    a[A_DPOS] = dpos
    a[A_QUAT] = quat
    a[A_GRIP] = grip
    a[A_MODE] = mode
    return a
