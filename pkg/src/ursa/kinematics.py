"""Serial-chain forward kinematics and damped-least-squares inverse kinematics.

The chain is described by standard Denavit-Hartenberg rows
(``Rz(theta) Tz(d) Tx(a) Rx(alpha)``) plus a tool offset along the flange z.
The shipped default is a 6-joint UR3-like arm with a 0.127 m tool offset.

IK is Levenberg-style damped least squares with backtracking, so the residual
trace is non-increasing; every iterate is clamped to the joint limits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .constraints import ConfigMode, Pose
from .geometry import UnitQuat, Vec3, mat_to_quat, quat_compose, quat_conjugate, quat_log

DLS_DAMPING = 0.05
DLS_MAX_ITERS = 200
IK_POS_TOL = 1e-3      # meters
IK_ROT_TOL = 1e-2      # radians
SPEED_LIMIT = 1.0      # rad/s per joint
SERVO_SCALE = 30.0     # 1/s; closes the commanded gap within one 30 Hz tick
RESET_NOISE_RAD = 0.05
ROT_RESIDUAL_WEIGHT = 0.2  # meters per radian in the scalar residual


@dataclass(frozen=True)
class DhRow:
    a: float
    d: float
    alpha: float


@dataclass(frozen=True)
class ChainSpec:
    rows: tuple
    limits_lo: np.ndarray
    limits_hi: np.ndarray
    tcp_offset: Vec3

    def __post_init__(self):
        if len(self.rows) < 2:
            raise ValueError("chain needs at least 2 joints")
        if np.any(self.limits_lo > self.limits_hi):
            raise ValueError("joint limits inverted")

    @property
    def n_joints(self) -> int:
        return len(self.rows)

    def clamp(self, theta: np.ndarray) -> np.ndarray:
        return np.clip(theta, self.limits_lo, self.limits_hi)

    @staticmethod
    def default() -> "ChainSpec":
        text = resources.files("ursa.configs").joinpath("chain.yaml").read_text()
        return ChainSpec.from_yaml(text)

    @staticmethod
    def load(path) -> "ChainSpec":
        with open(path) as f:
            return ChainSpec.from_yaml(f.read())

    @staticmethod
    def from_yaml(text: str) -> "ChainSpec":
        raw = yaml.safe_load(text)
        rows = tuple(DhRow(float(r["a"]), float(r["d"]), float(r["alpha"]))
                     for r in raw["joints"])
        lo = np.array([float(r["limit_min"]) for r in raw["joints"]])
        hi = np.array([float(r["limit_max"]) for r in raw["joints"]])
        off = raw.get("tcp_offset", [0.0, 0.0, 0.0])
        return ChainSpec(rows, lo, hi, Vec3(*[float(v) for v in off]))


@dataclass
class JointState:
    theta: np.ndarray
    velocity: np.ndarray | None = None

    def copy(self) -> "JointState":
        return JointState(self.theta.copy(),
                          None if self.velocity is None else self.velocity.copy())


@dataclass
class IkResult:
    theta: np.ndarray
    pos_err: float
    rot_err: float
    converged: bool
    iters: int
    residuals: list = field(default_factory=list)


def _dh_transform(theta: float, row: DhRow) -> np.ndarray:
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(row.alpha), math.sin(row.alpha)
    return np.array([
        [ct, -st * ca, st * sa, row.a * ct],
        [st, ct * ca, -ct * sa, row.a * st],
        [0.0, sa, ca, row.d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _frames(chain: ChainSpec, theta: np.ndarray) -> list:
    """Cumulative transforms: base, after each joint, then the TCP frame."""
    if len(theta) != chain.n_joints:
        raise ValueError(f"theta length {len(theta)} != {chain.n_joints} joints")
    frames = [np.eye(4)]
    t = np.eye(4)
    for angle, row in zip(theta, chain.rows):
        t = t @ _dh_transform(float(angle), row)
        frames.append(t.copy())
    tool = np.eye(4)
    tool[:3, 3] = chain.tcp_offset.as_array()
    frames.append(t @ tool)
    return frames


def forward_kinematics(chain: ChainSpec, state: JointState) -> Pose:
    tcp = _frames(chain, state.theta)[-1]
    return Pose(Vec3.from_array(tcp[:3, 3]), mat_to_quat(tcp[:3, :3]))


def jacobian(chain: ChainSpec, theta: np.ndarray) -> np.ndarray:
    """Geometric Jacobian (6 x n): linear rows on top, angular below."""
    frames = _frames(chain, theta)
    p_tcp = frames[-1][:3, 3]
    jac = np.zeros((6, chain.n_joints))
    for i in range(chain.n_joints):
        z = frames[i][:3, 2]
        p = frames[i][:3, 3]
        jac[:3, i] = np.cross(z, p_tcp - p)
        jac[3:, i] = z
    return jac


def _pose_error(target: Pose, current: Pose) -> np.ndarray:
    dp = target.p.as_array() - current.p.as_array()
    dq = quat_compose(target.q, quat_conjugate(current.q))
    return np.concatenate([dp, quat_log(dq).as_array()])


def _residual(err: np.ndarray) -> float:
    return float(math.sqrt(np.sum(err[:3] ** 2) + (ROT_RESIDUAL_WEIGHT ** 2) * np.sum(err[3:] ** 2)))


def dls_ik(chain: ChainSpec, target: Pose, theta0: JointState,
           damping: float = DLS_DAMPING, max_iters: int = DLS_MAX_ITERS,
           pos_tol: float = IK_POS_TOL, rot_tol: float = IK_ROT_TOL) -> IkResult:
    """Damped-least-squares IK toward ``target`` starting at ``theta0``.

    Never raises on failure: when the tolerance is unmet after ``max_iters``
    the best iterate comes back with ``converged=False`` and the caller treats
    it as a constraint-violation warning.
    """
    def solved(e: np.ndarray) -> bool:
        return bool(np.linalg.norm(e[:3]) < pos_tol and np.linalg.norm(e[3:]) < rot_tol)

    def evaluate(th: np.ndarray):
        e = _pose_error(target, forward_kinematics(chain, JointState(th)))
        return e, _residual(e)

    theta = chain.clamp(theta0.theta.astype(float).copy())
    err, res = evaluate(theta)
    residuals = [res]
    best = (theta.copy(), err, res)
    lam = damping
    restarts = 0
    iters = 0
    while iters < max_iters and not solved(err):
        iters += 1
        jac = jacobian(chain, theta)
        improved = False
        for _ in range(10):
            gram = jac @ jac.T + (lam ** 2) * np.eye(6)
            step = jac.T @ np.linalg.solve(gram, err)
            cand = chain.clamp(theta + step)
            cand_err, cand_res = evaluate(cand)
            if cand_res < res:
                theta, err, res = cand, cand_err, cand_res
                lam = max(lam * 0.5, damping * 1e-3)
                improved = True
                break
            lam *= 4.0  # step overshot: damp harder and retry
        if improved:
            if res < best[2]:
                best = (theta.copy(), err, res)
                residuals.append(res)
        else:
            # Stuck at a stationary point (typically a wrist singularity):
            # restart from a seeded perturbation of the best iterate.
            restarts += 1
            width = min(0.3 * restarts, 1.5)
            jog = np.random.default_rng(restarts).uniform(-width, width, chain.n_joints)
            theta = chain.clamp(best[0] + jog)
            err, res = evaluate(theta)
            lam = damping
    if solved(err) and res < best[2]:
        best = (theta.copy(), err, res)
        residuals.append(res)
    pos_err = float(np.linalg.norm(best[1][:3]))
    rot_err = float(np.linalg.norm(best[1][3:]))
    return IkResult(best[0], pos_err, rot_err,
                    pos_err < pos_tol and rot_err < rot_tol, iters, residuals)


def mode_to_joint(mode: ConfigMode, chain: ChainSpec | None = None,
                  postures: dict | None = None) -> JointState:
    """Canonical base joint vector for a configuration mode."""
    if postures is None:
        postures = default_mode_postures()
    theta = np.array(postures[mode.value], dtype=float)
    if chain is not None and len(theta) != chain.n_joints:
        raise ValueError("mode posture length does not match chain")
    return JointState(theta)


_POSTURE_CACHE: dict = {}


def default_mode_postures() -> dict:
    if not _POSTURE_CACHE:
        text = resources.files("ursa.configs").joinpath("chain.yaml").read_text()
        _POSTURE_CACHE.update(yaml.safe_load(text)["mode_postures"])
    return _POSTURE_CACHE


def joint_velocity_command(theta_goal: np.ndarray, theta_now: np.ndarray,
                           scale: float = 1.0,
                           speed_limit: float = SPEED_LIMIT) -> np.ndarray:
    """Componentwise proportional velocity, clamped to the per-joint limit."""
    if theta_goal.shape != theta_now.shape:
        raise ValueError("joint vector lengths differ")
    vel = (theta_goal - theta_now) * scale
    return np.clip(vel, -speed_limit, speed_limit)
