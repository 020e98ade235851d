"""Deterministic kinematic tabletop world.

Stands in for the physical rig: two task families (pouring into a cup,
placing a fruit in a basket), seeded object placement, one optional
mid-episode goal disturbance, pose/tilt success predicates, and a scripted
waypoint expert with an intervention rule for headless shared-autonomy runs.

Every commanded motion passes through the full constraint pipeline
(desired pose -> position clamp -> orientation clamp -> IK -> speed-limited
servo), so the TCP never leaves the active mode's workspace box. The scene
itself is kinematic: grasping attaches an object to the TCP within a small
radius, releasing drops it straight down.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .constraints import (
    ConfigMode,
    ConstrainedAngles,
    ConstraintTable,
    OperatorInput,
    Pose,
    apply_rotation_action,
    base_orientation,
    constrain_pose,
    extract_orientation_angles,
    extract_rotation_action,
)
from .demo_store import (
    A_DPOS,
    A_GRIP,
    A_MODE,
    A_QUAT,
    make_action_vector,
    make_state_vector,
)
from .geometry import (Axis, UnitQuat, Vec3, frame_axis, quat_from_axis_angle,
                       quat_rotation_angle, quat_slerp)
from .kinematics import (
    RESET_NOISE_RAD,
    SERVO_SCALE,
    ChainSpec,
    JointState,
    dls_ik,
    forward_kinematics,
    joint_velocity_command,
    mode_to_joint,
)

TICK_RATE_HZ = 30
DT = 1.0 / TICK_RATE_HZ
# Per-tick caps on the commanded pose change, applied before the constraint
# clamp. They keep the IK goal within one servo tick of the current joints,
# so the achieved pose hugs the constrained path instead of bowing through
# joint space (the thin downward pitch band makes that visible otherwise).
POS_RATE_CAP = 0.010
ROT_RATE_CAP = 0.03
GRASP_RADIUS = 0.03
OBS_NOISE_STD = 0.005
OBS_DIM = 32
OBJECT_KINDS = ("bottle", "cup", "fruit", "basket")
GRASPABLE = {"bottle", "fruit"}
REST_Z = {"bottle": 0.10, "cup": 0.045, "fruit": 0.025, "basket": 0.0}
HOME_XY = {"bottle": (0.46, -0.12), "cup": (0.46, 0.12),
           "fruit": (0.27, -0.12), "basket": (0.27, 0.12)}
GRASP_OFFSET_Z = {"bottle": 0.0, "fruit": 0.03}  # TCP sits this far above the object
CUP_TOP_Z = 0.09
BASKET_HALF = 0.06
UPRIGHT_TILT_DEG = 20.0
# Tracking tolerance of the safety monitor: the servo follows constrained
# targets through IK, so the achieved pose may sit this far outside the box.
SAFETY_POS_TOL = 1e-3
SAFETY_ANGLE_TOL_DEG = 0.1

MODE_INDEX = {ConfigMode.FORWARD: 0, ConfigMode.DOWNWARD: 1}
INDEX_MODE = {v: k for k, v in MODE_INDEX.items()}


class EpisodeOver(Exception):
    pass


@dataclass
class SceneObject:
    obj_id: str
    kind: str
    position: np.ndarray
    orientation: UnitQuat
    held: bool = False
    was_held: bool = False
    upright: bool = True

    def yaw(self) -> float:
        x_axis = frame_axis(self.orientation, Axis.X)
        return math.atan2(x_axis.y, x_axis.x)


@dataclass(frozen=True)
class TaskSpec:
    name: str
    base_mode: ConfigMode
    max_ticks: int
    spawn: dict
    success: dict
    dynamic: bool = False
    mix: tuple = ()
    disturbance_max_shift: float = 0.08
    typical_ticks: int = 90


def _task_catalog() -> dict:
    text = resources.files("ursa.configs").joinpath("tasks.yaml").read_text()
    return yaml.safe_load(text)


def load_task(name: str, dynamic: bool = False, path=None) -> TaskSpec:
    raw = yaml.safe_load(open(path).read()) if path else _task_catalog()
    if name not in raw["tasks"]:
        raise ValueError(f"unknown task '{name}' (have {sorted(raw['tasks'])})")
    entry = raw["tasks"][name]
    shift = float(raw.get("disturbance", {}).get("max_shift", 0.08))
    if "mix" in entry:
        return TaskSpec(name=name, base_mode=ConfigMode.FORWARD, max_ticks=0,
                        spawn={}, success={}, dynamic=dynamic,
                        mix=tuple(entry["mix"]), disturbance_max_shift=shift)
    spawn = {k: {ax: tuple(float(v) for v in lim) for ax, lim in region.items()}
             for k, region in entry["spawn"].items()}
    return TaskSpec(name=name, base_mode=ConfigMode(entry["mode"]),
                    max_ticks=int(entry["max_ticks"]), spawn=spawn,
                    success=dict(entry["success"]), dynamic=dynamic,
                    disturbance_max_shift=shift,
                    typical_ticks=int(entry.get("typical_ticks", 90)))


class SimEnv:
    """Single-stream environment: exactly one command per 30 Hz tick."""

    def __init__(self, chain: ChainSpec | None = None, table: ConstraintTable | None = None):
        self.chain = chain or ChainSpec.default()
        self.table = table or ConstraintTable.default()
        self.active = False
        self.reset_count = 0

    # -- episode lifecycle ------------------------------------------------

    def reset(self, task: TaskSpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
        self.rng = np.random.default_rng([int(seed), 0xC0FFEE])
        self.task = self._resolve_mix(task)
        self.seed = int(seed)
        self.reset_count += 1
        self.mode = ConfigMode.FORWARD if self.rng.random() < 0.5 else ConfigMode.DOWNWARD
        self.prev_angles = ConstrainedAngles()
        posture = mode_to_joint(self.mode, self.chain).theta
        for _ in range(100):
            noise = self.rng.uniform(-RESET_NOISE_RAD, RESET_NOISE_RAD, self.chain.n_joints)
            self.theta = posture + noise
            if self._pose_in_bounds(strict=True):
                break
        else:
            self.theta = posture.copy()  # noise kept violating the thin angle bands
        self.gripper = 0.0
        self.prev_angles = ConstrainedAngles()
        self.tick = 0
        self.success_hold = 0
        self.success_latched = False
        self.bound_violations = 0
        self.active = True
        self.objects = self._spawn_objects()
        self.disturb_tick, self.disturb_target = self._plan_disturbance()
        return self.observe(), self.state_vector()

    def _resolve_mix(self, task: TaskSpec) -> TaskSpec:
        if not task.mix:
            return task
        pick = task.mix[int(self.rng.integers(len(task.mix)))]
        sub = load_task(pick, dynamic=task.dynamic)
        return sub

    def _spawn_objects(self) -> dict:
        objects = {}
        for kind in OBJECT_KINDS:
            if kind in self.task.spawn:
                region = self.task.spawn[kind]
                x = self.rng.uniform(*region["x"])
                y = self.rng.uniform(*region["y"])
            else:
                x, y = HOME_XY[kind]
            objects[kind] = SceneObject(obj_id=kind, kind=kind,
                                        position=np.array([x, y, REST_Z[kind]]),
                                        orientation=UnitQuat.identity())
        return objects

    def _plan_disturbance(self):
        if not self.task.dynamic:
            return -1, None
        target = "cup" if self.task.success.get("kind") == "pour" else "basket"
        # Middle third of a typical run, so the shift lands mid-manipulation
        # rather than after an early finish.
        lo, hi = self.task.typical_ticks // 3, 2 * self.task.typical_ticks // 3
        tick = int(self.rng.integers(lo, hi))
        region = self.task.spawn[target]
        shift = self.rng.uniform(-self.task.disturbance_max_shift,
                                 self.task.disturbance_max_shift, 2)
        obj = self.objects[target]
        new_xy = np.clip(obj.position[:2] + shift,
                         [region["x"][0], region["y"][0]],
                         [region["x"][1], region["y"][1]])
        return tick, (target, new_xy)

    # -- robot state ------------------------------------------------------

    def tcp_pose(self) -> Pose:
        return forward_kinematics(self.chain, JointState(self.theta))

    def state_vector(self) -> np.ndarray:
        pose = self.tcp_pose()
        return make_state_vector(self.theta, pose.p.as_array(), pose.q.as_array(),
                                 self.gripper, MODE_INDEX[self.mode])

    def observe(self) -> np.ndarray:
        """Scene features: per object (x, y, z, yaw, held), then TCP-to-object
        offsets, with seeded zero-mean noise on the continuous channels."""
        pose = self.tcp_pose()
        tcp = pose.p.as_array()
        feats = []
        held_slots = []
        for kind in OBJECT_KINDS:
            obj = self.objects[kind]
            feats.extend([*obj.position, obj.yaw()])
            held_slots.append(len(feats))
            feats.append(1.0 if obj.held else 0.0)
        for kind in OBJECT_KINDS:
            feats.extend(tcp - self.objects[kind].position)
        obs = np.array(feats)
        noise = self.rng.normal(0.0, OBS_NOISE_STD, obs.shape)
        noise[held_slots] = 0.0
        return obs + noise

    # -- command application ----------------------------------------------

    def operator_action(self, op: OperatorInput, desired_mode: ConfigMode) -> np.ndarray:
        """Convert controller input into the 9-dim action vector that the
        demonstration records: the rotation entry is the difference between
        the controller and TCP orientations."""
        q_act = extract_rotation_action(op.orientation, self.tcp_pose().q)
        return make_action_vector(op.linear_velocity.as_array(), q_act.as_array(),
                                  1.0 if op.grip else 0.0,
                                  float(MODE_INDEX[desired_mode]))

    def step(self, action: np.ndarray) -> tuple[np.ndarray, np.ndarray, list]:
        """Apply one 9-dim action through the constraint pipeline."""
        if not self.active:
            raise EpisodeOver("reset the environment before stepping")
        action = np.asarray(action, dtype=float)
        events = []
        req_mode = INDEX_MODE[int(round(float(action[A_MODE])))]
        if req_mode is not self.mode:
            self.mode = req_mode
            self.theta = mode_to_joint(req_mode, self.chain).theta.copy()
            self.prev_angles = ConstrainedAngles()
            events.append({"type": "mode_change", "mode": req_mode.value})
        else:
            pose = self.tcp_pose()
            q_target = apply_rotation_action(UnitQuat.from_array(action[A_QUAT]), pose.q)
            desired = Pose(Vec3.from_array(pose.p.as_array() + action[A_DPOS]), q_target)
            desired = _rate_limit_pose(pose, desired)
            constrained, angles = constrain_pose(desired, self.mode, self.table,
                                                 self.prev_angles)
            self.prev_angles = angles
            ik = dls_ik(self.chain, constrained, JointState(self.theta),
                        max_iters=60, pos_tol=1e-5, rot_tol=1e-4)
            vel = joint_velocity_command(ik.theta, self.theta, scale=SERVO_SCALE)
            self.theta = self.theta + vel * DT
            self._enforce_pose_bounds()
        self._apply_grip(self._grip_command(float(action[A_GRIP])), events)
        return self._post_motion(events)

    def step_velocity(self, qdot: np.ndarray) -> tuple[np.ndarray, np.ndarray, list]:
        """Low-level joint-velocity tick (zero-velocity holds in place)."""
        if not self.active:
            raise EpisodeOver("reset the environment before stepping")
        self.theta = self.theta + np.clip(qdot, -1.0, 1.0) * DT
        if np.any(qdot):
            self._enforce_pose_bounds()
        return self._post_motion([])

    def _enforce_pose_bounds(self):
        """Servo-layer limit enforcement: when a saturated joint transient
        carries the achieved pose outside the workspace, project it back onto
        the constraint set within the same tick."""
        if self._pose_in_bounds(strict=True):
            return
        target, angles = constrain_pose(self.tcp_pose(), self.mode, self.table,
                                        self.prev_angles)
        ik = dls_ik(self.chain, target, JointState(self.theta),
                    max_iters=40, pos_tol=1e-6, rot_tol=1e-5)
        self.theta = ik.theta
        self.prev_angles = angles

    def _grip_command(self, value: float) -> bool:
        """Debounce the continuous grip channel: a closed gripper reopens only
        below 0.4 and an open one closes only above 0.6."""
        if self.gripper >= 0.5:
            return value >= 0.4
        return value >= 0.6

    def _apply_grip(self, close: bool, events: list):
        was_closed = self.gripper >= 0.5
        if close and not was_closed:
            tcp = self.tcp_pose().p.as_array()
            for kind in sorted(GRASPABLE):
                obj = self.objects[kind]
                grasp_point = obj.position + np.array([0, 0, GRASP_OFFSET_Z[kind]])
                if not obj.held and np.linalg.norm(tcp - grasp_point) <= GRASP_RADIUS:
                    obj.held = True
                    obj.was_held = True
                    events.append({"type": "grasp", "object": kind})
                    break
        elif not close and was_closed:
            for obj in self.objects.values():
                if obj.held:
                    obj.held = False
                    obj.position = np.array([obj.position[0], obj.position[1],
                                             REST_Z[obj.kind]])
                    obj.orientation = UnitQuat.identity()
                    events.append({"type": "release", "object": obj.kind})
        self.gripper = 1.0 if close else 0.0

    def _post_motion(self, events: list) -> tuple[np.ndarray, np.ndarray, list]:
        pose = self.tcp_pose()
        for obj in self.objects.values():
            if obj.held:
                offset = GRASP_OFFSET_Z[obj.kind]
                obj.position = pose.p.as_array() - np.array([0.0, 0.0, offset])
                obj.orientation = pose.q
                obj.upright = self._tilt_deg(obj) < UPRIGHT_TILT_DEG
        if self.tick == self.disturb_tick and self.disturb_target is not None:
            kind, new_xy = self.disturb_target
            obj = self.objects[kind]
            if not obj.held:
                obj.position = np.array([new_xy[0], new_xy[1], obj.position[2]])
                events.append({"type": "disturbance", "object": kind})
        if self._check_bounds():
            self.bound_violations += 1
            events.append({"type": "bound_violation"})
        if self._success_now():
            self.success_hold += 1
        else:
            self.success_hold = 0
        need_hold = self.task.success.get("hold_ticks", 1)
        if self.success_hold >= need_hold:
            self.success_latched = True
        self.tick += 1
        if self.success_latched or self.tick >= self.task.max_ticks:
            self.active = False
            events.append({"type": "episode_end",
                           "reason": "success" if self.success_latched else "timeout"})
        return self.observe(), self.state_vector(), events

    def _check_bounds(self) -> bool:
        return not self._pose_in_bounds(strict=False)

    def _pose_in_bounds(self, strict: bool) -> bool:
        pos_tol = 0.0 if strict else SAFETY_POS_TOL
        ang_tol = 0.0 if strict else SAFETY_ANGLE_TOL_DEG
        pose = self.tcp_pose()
        for axis, v in zip(("x", "y", "z"), pose.p.as_array()):
            b = self.table.bounds(self.mode, axis)
            if v < b.lo - pos_tol or v > b.hi + pos_tol:
                return False
        angles = extract_orientation_angles(pose.q, self.mode, self.prev_angles)
        for axis, v in zip(("alpha", "beta", "gamma"), angles.as_tuple()):
            b = self.table.bounds(self.mode, axis)
            if v < b.lo - ang_tol or v > b.hi + ang_tol:
                return False
        return True

    # -- predicates --------------------------------------------------------

    def _tilt_deg(self, obj: SceneObject) -> float:
        if not obj.held:
            return 0.0
        # A held object's up-axis rides the TCP y-axis (forward-mode grasp).
        up = frame_axis(obj.orientation, Axis.Y)
        return math.degrees(math.acos(max(-1.0, min(1.0, up.z))))

    def _success_now(self) -> bool:
        cfg = self.task.success
        if cfg.get("kind") == "pour":
            bottle, cup = self.objects["bottle"], self.objects["cup"]
            if not bottle.held:
                return False
            tcp = self.tcp_pose().p.as_array()
            aligned = np.linalg.norm(tcp[:2] - cup.position[:2]) <= cfg["radius"]
            high = tcp[2] >= cfg["min_z"]
            tilted = self._tilt_deg(bottle) >= cfg["tilt_deg"]
            return bool(aligned and high and tilted)
        if cfg.get("kind") == "pick_place":
            fruit, basket = self.objects["fruit"], self.objects["basket"]
            if fruit.held or not fruit.was_held:
                return False
            half = BASKET_HALF + cfg["inflate"]
            return bool(np.all(np.abs(fruit.position[:2] - basket.position[:2]) <= half))
        return False

    def success(self) -> bool:
        return self.success_latched


# -- scripted expert -------------------------------------------------------

POS_STEP = 0.008      # meters per tick toward the waypoint
POS_GAIN = 0.6        # proportional taper near the waypoint
ROT_STEP = 0.03       # radians per tick toward the target orientation
ROT_GAIN = 0.3        # proportional taper near the target orientation
POUR_TILT_TARGET = 65.0
PRACTICE_TILT = 30.0
POUR_Z = 0.17
HOVER_Z = 0.10
GRASP_DESCEND_Z = 0.055
CARRY_Z = 0.115
SAFE_CARRY_Z = 0.095  # below this the fruit could drag; climb before moving
DEVIATION_THRESHOLD = 0.05


@dataclass(frozen=True)
class ExpertPlan:
    phase: str
    target_p: np.ndarray
    target_q: UnitQuat
    grip: bool
    mode: ConfigMode


class ScriptedExpert:
    """Waypoint proportional controller over the scene state.

    A seeded fraction of pour episodes practices an early tilt followed by a
    recovery (righting the bottle while still off the cup), so the dataset
    covers the re-aim states a disturbed rollout visits; without those states
    a cloned policy cannot recover when the cup moves mid-tilt.
    """

    def __init__(self, practice_fraction: float = 0.3):
        self.practice_fraction = practice_fraction
        self._episode_key = None
        self._practice = False
        self._practiced = False

    def _episode_quirks(self, env: SimEnv):
        key = (id(env), env.reset_count, env.seed, env.task.name)
        if key != self._episode_key:
            self._episode_key = key
            rng = np.random.default_rng([env.seed, 0xE1])
            self._practice = rng.random() < self.practice_fraction
            self._practiced = False

    def plan(self, env: SimEnv) -> ExpertPlan:
        self._episode_quirks(env)
        task_kind = env.task.success.get("kind")
        if task_kind == "pour":
            return self._plan_pour(env)
        if task_kind == "pick_place":
            return self._plan_pick_place(env)
        raise ValueError(f"no expert for task '{env.task.name}'")

    def _plan_pour(self, env: SimEnv) -> ExpertPlan:
        tcp = env.tcp_pose().p.as_array()
        upright = base_orientation(ConfigMode.FORWARD)
        bottle, cup = env.objects["bottle"], env.objects["cup"]
        if env.mode is not ConfigMode.FORWARD:
            return ExpertPlan("switch_mode", tcp, upright, False, ConfigMode.FORWARD)
        if not bottle.held:
            grasp_point = bottle.position.copy()
            if np.linalg.norm(tcp - grasp_point) > 0.6 * GRASP_RADIUS:
                return ExpertPlan("approach", grasp_point, upright, False, ConfigMode.FORWARD)
            return ExpertPlan("grasp", grasp_point, upright, True, ConfigMode.FORWARD)
        pour_point = np.array([cup.position[0], cup.position[1], POUR_Z])
        horiz = float(np.linalg.norm(tcp[:2] - cup.position[:2]))
        aligned = horiz <= 0.02
        at_height = abs(tcp[2] - POUR_Z) <= 0.02
        tilt_now = env._tilt_deg(bottle)
        if self._practice and not self._practiced and at_height \
                and 0.05 <= horiz <= 0.07 and tilt_now < PRACTICE_TILT:
            hold = np.array([tcp[0], tcp[1], POUR_Z])
            early = apply_rotation_action(_roll_about_tool(PRACTICE_TILT + 5.0), upright)
            return ExpertPlan("tilt_early", hold, early, True, ConfigMode.FORWARD)
        if tilt_now >= PRACTICE_TILT:
            self._practiced = True
        if not (aligned and at_height):
            # also the recovery branch: any tilt is righted while re-aiming
            return ExpertPlan("transport", pour_point, upright, True, ConfigMode.FORWARD)
        tilted = apply_rotation_action(_roll_about_tool(POUR_TILT_TARGET), upright)
        return ExpertPlan("tilt", pour_point, tilted, True, ConfigMode.FORWARD)

    def _plan_pick_place(self, env: SimEnv) -> ExpertPlan:
        tcp = env.tcp_pose().p.as_array()
        down = base_orientation(ConfigMode.DOWNWARD)
        fruit, basket = env.objects["fruit"], env.objects["basket"]
        if env.mode is not ConfigMode.DOWNWARD:
            return ExpertPlan("switch_mode", tcp, down, False, ConfigMode.DOWNWARD)
        if not fruit.held:
            if fruit.was_held and env.success():
                return ExpertPlan("done", tcp, down, False, ConfigMode.DOWNWARD)
            over = np.linalg.norm(tcp[:2] - fruit.position[:2]) <= 0.012
            if not over:
                hover = np.array([fruit.position[0], fruit.position[1], HOVER_Z])
                return ExpertPlan("hover", hover, down, False, ConfigMode.DOWNWARD)
            grasp_point = np.array([fruit.position[0], fruit.position[1], GRASP_DESCEND_Z])
            if tcp[2] > GRASP_DESCEND_Z + 0.008:
                return ExpertPlan("descend", grasp_point, down, False, ConfigMode.DOWNWARD)
            return ExpertPlan("grasp", grasp_point, down, True, ConfigMode.DOWNWARD)
        over_basket = np.linalg.norm(tcp[:2] - basket.position[:2]) <= 0.015
        if tcp[2] < SAFE_CARRY_Z and not over_basket:
            lift = np.array([tcp[0], tcp[1], CARRY_Z])
            return ExpertPlan("lift", lift, down, True, ConfigMode.DOWNWARD)
        if not over_basket:
            drop = np.array([basket.position[0], basket.position[1], CARRY_Z])
            return ExpertPlan("carry", drop, down, True, ConfigMode.DOWNWARD)
        return ExpertPlan("release", tcp, down, False, ConfigMode.DOWNWARD)

    def action(self, env: SimEnv) -> np.ndarray:
        plan = self.plan(env)
        pose = env.tcp_pose()
        tcp = pose.p.as_array()
        if plan.mode is not env.mode:
            return make_action_vector(np.zeros(3), UnitQuat.identity().as_array(),
                                      1.0 if plan.grip else 0.0,
                                      float(MODE_INDEX[plan.mode]))
        delta = plan.target_p - tcp
        dist = float(np.linalg.norm(delta))
        step = min(POS_GAIN * dist, POS_STEP)
        if dist > 1e-12:
            delta = delta * (step / dist)
        gap = quat_rotation_angle(pose.q, plan.target_q)
        rot_step = min(ROT_GAIN * gap, ROT_STEP)
        t = 1.0 if gap <= 1e-9 else rot_step / gap
        q_des = quat_slerp(pose.q, plan.target_q, t)
        q_act = extract_rotation_action(q_des, pose.q)
        return make_action_vector(delta, q_act.as_array(),
                                  1.0 if plan.grip else 0.0,
                                  float(MODE_INDEX[plan.mode]))


def _roll_about_tool(degrees_: float) -> UnitQuat:
    """Rotation action rolling the forward-mode tool about its own z-axis,
    which coincides with world +x at the base orientation."""
    return quat_from_axis_angle(Vec3(1.0, 0.0, 0.0), math.radians(degrees_))


@dataclass
class InterventionTracker:
    """Phase-anchored deviation tracking for the scripted takeover rule."""

    expert: ScriptedExpert
    anchor: np.ndarray | None = None
    phase: str = ""

    def should_intervene(self, env: SimEnv) -> bool:
        plan = self.expert.plan(env)
        tcp = env.tcp_pose().p.as_array()
        if plan.phase != self.phase or self.anchor is None:
            self.phase = plan.phase
            self.anchor = tcp.copy()
        if self._hazard(env, plan):
            return True
        if plan.phase in ("switch_mode", "done"):
            return False
        deviation = _segment_distance(tcp, self.anchor, plan.target_p)
        return deviation > DEVIATION_THRESHOLD

    def _hazard(self, env: SimEnv, plan: ExpertPlan) -> bool:
        cfg = env.task.success
        tcp = env.tcp_pose().p.as_array()
        if cfg.get("kind") == "pour":
            bottle, cup = env.objects["bottle"], env.objects["cup"]
            if bottle.held and env._tilt_deg(bottle) > 25.0:
                misaligned = np.linalg.norm(tcp[:2] - cup.position[:2]) > 1.5 * cfg["radius"]
                too_low = tcp[2] < cfg["min_z"]
                if misaligned or too_low:
                    return True
        z_floor = env.table.bounds(env.mode, "z").lo
        descending_ok = plan.phase in ("descend", "grasp", "approach")
        if tcp[2] <= z_floor + 0.005 and not descending_ok:
            return True
        return False


def _rate_limit_pose(current: Pose, desired: Pose) -> Pose:
    dp = desired.p.as_array() - current.p.as_array()
    dist = float(np.linalg.norm(dp))
    if dist > POS_RATE_CAP:
        dp *= POS_RATE_CAP / dist
    gap = quat_rotation_angle(current.q, desired.q)
    t = 1.0 if gap <= ROT_RATE_CAP else ROT_RATE_CAP / gap
    return Pose(Vec3.from_array(current.p.as_array() + dp),
                quat_slerp(current.q, desired.q, t))


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-12:
        return float(np.linalg.norm(p - a))
    t = max(0.0, min(1.0, float((p - a) @ ab) / denom))
    return float(np.linalg.norm(p - (a + t * ab)))
