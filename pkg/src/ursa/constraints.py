"""Constrained teleoperation kernel.

Synthesizes the desired TCP pose from operator input, clamps the position to
a per-mode box, clamps the orientation through plane-projected angle limits,
and extracts the rotation action recorded in demonstrations.

The three orientation angles are measured by projecting a TCP body axis onto
a fundamental plane and taking the signed angle against a reference axis:

* forward mode: pitch/yaw come from the TCP z-axis (projected on xz / xy,
  both against +x), roll from the TCP y-axis on yz against +z;
* downward mode: pitch/yaw come from the TCP y-axis, roll from the TCP
  z-axis on yz against -z.

Clamped angles are turned back into a quaternion by rebuilding the frame so
that re-projecting it reproduces the clamped angles exactly, which makes the
constraint map idempotent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Optional

import numpy as np
import yaml

from .geometry import (
    Axis,
    DegenerateProjection,
    PlaneId,
    UnitQuat,
    Vec3,
    clamp_scalar,
    frame_axis,
    mat_to_quat,
    quat_compose,
    quat_conjugate,
    signed_projected_angle,
)

X_HAT = Vec3(1.0, 0.0, 0.0)
Z_HAT = Vec3(0.0, 0.0, 1.0)
NEG_Z_HAT = Vec3(0.0, 0.0, -1.0)

POSITION_AXES = ("x", "y", "z")
ANGLE_AXES = ("alpha", "beta", "gamma")


class ConfigMode(Enum):
    FORWARD = "forward"
    DOWNWARD = "downward"


@dataclass(frozen=True)
class Pose:
    p: Vec3
    q: UnitQuat


@dataclass(frozen=True)
class AxisBounds:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError(f"non-finite bounds ({self.lo}, {self.hi})")
        if self.lo > self.hi:
            raise ValueError(f"bounds inverted: min={self.lo} > max={self.hi}")

    def clamp(self, x: float) -> float:
        return clamp_scalar(x, self.lo, self.hi)


@dataclass(frozen=True)
class ConstraintTable:
    """Per-mode bounds for x, y, z (meters) and alpha, beta, gamma (degrees)."""

    modes: dict

    def bounds(self, mode: ConfigMode, axis: str) -> AxisBounds:
        return self.modes[mode][axis]

    @staticmethod
    def default() -> "ConstraintTable":
        text = resources.files("ursa.configs").joinpath("constraints.yaml").read_text()
        return ConstraintTable.from_yaml(text)

    @staticmethod
    def load(path) -> "ConstraintTable":
        with open(path) as f:
            return ConstraintTable.from_yaml(f.read())

    @staticmethod
    def from_yaml(text: str) -> "ConstraintTable":
        raw = yaml.safe_load(text)
        modes = {}
        for mode in ConfigMode:
            if mode.value not in raw:
                raise ValueError(f"constraint table missing section '{mode.value}'")
            section = raw[mode.value]
            axes = {}
            for axis in POSITION_AXES + ANGLE_AXES:
                if axis not in section:
                    raise ValueError(f"constraint table [{mode.value}] missing axis '{axis}'")
                entry = section[axis]
                axes[axis] = AxisBounds(float(entry["min"]), float(entry["max"]))
            modes[mode] = axes
        return ConstraintTable(modes)


@dataclass(frozen=True)
class OperatorInput:
    """One tick of controller input: a linear velocity, an absolute
    orientation, and the four button states."""

    linear_velocity: Vec3
    orientation: UnitQuat
    trigger: bool = False
    grip: bool = False
    mode_toggle: bool = False
    reset: bool = False


@dataclass(frozen=True)
class ConstrainedAngles:
    """Plane-projected roll/pitch/yaw in degrees, as clamped by the table."""

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def as_tuple(self):
        return (self.alpha, self.beta, self.gamma)


def desired_pose(current: Pose, op_input: OperatorInput) -> Pose:
    """Target pose before constraints: position integrates the controller
    velocity, orientation tracks the controller absolutely."""
    return Pose(current.p + op_input.linear_velocity, op_input.orientation)


def constrain_position(p: Vec3, mode: ConfigMode, table: ConstraintTable) -> Vec3:
    return Vec3(table.bounds(mode, "x").clamp(p.x),
                table.bounds(mode, "y").clamp(p.y),
                table.bounds(mode, "z").clamp(p.z))


def extract_orientation_angles(q: UnitQuat, mode: ConfigMode,
                               prev: Optional[ConstrainedAngles] = None) -> ConstrainedAngles:
    """Unclamped plane-projected angles in degrees.

    A degenerate projection (body axis orthogonal to the measurement plane)
    holds the previous angle rather than guessing a sign.
    """
    prev = prev or ConstrainedAngles()
    z_axis = frame_axis(q, Axis.Z)
    y_axis = frame_axis(q, Axis.Y)
    if mode is ConfigMode.FORWARD:
        specs = {
            "beta": (z_axis, PlaneId.XZ, X_HAT, lambda v: v.z < 0),
            "gamma": (z_axis, PlaneId.XY, X_HAT, lambda v: v.y > 0),
            "alpha": (y_axis, PlaneId.YZ, Z_HAT, lambda v: v.y > 0),
        }
    else:
        specs = {
            "beta": (y_axis, PlaneId.XZ, X_HAT, lambda v: v.z < 0),
            "gamma": (y_axis, PlaneId.XY, X_HAT, lambda v: v.y > 0),
            "alpha": (z_axis, PlaneId.YZ, NEG_Z_HAT, lambda v: v.y < 0),
        }
    out = {}
    for name, (vec, plane, ref, pred) in specs.items():
        try:
            out[name] = math.degrees(signed_projected_angle(vec, plane, ref, pred))
        except DegenerateProjection:
            out[name] = getattr(prev, name)
    return ConstrainedAngles(**out)


def _pitch_yaw_axis(beta_rad: float, gamma_rad: float) -> np.ndarray:
    """Unit vector whose xz-projection sits at ``beta`` from +x and whose
    xy-projection sits at ``gamma`` from +x (both projections exact)."""
    cb, sb = math.cos(beta_rad), math.sin(beta_rad)
    cg, sg = math.cos(gamma_rad), math.sin(gamma_rad)
    v = np.array([cb * cg, sg * cb, -sb * cg])
    return v / np.linalg.norm(v)


def _perp_with_plane_direction(u: np.ndarray, comps: tuple, target: tuple) -> np.ndarray:
    """Unit vector orthogonal to ``u`` whose projection onto the plane spanned
    by world axes ``comps`` points along ``target`` (positive multiple)."""
    seed = np.zeros(3)
    seed[int(np.argmin(np.abs(u)))] = 1.0
    m = seed - (seed @ u) * u
    m /= np.linalg.norm(m)
    n = np.cross(u, m)
    a, b = comps
    t = np.array(target, dtype=float)
    cross_m = m[a] * t[1] - m[b] * t[0]
    cross_n = n[a] * t[1] - n[b] * t[0]
    phi = math.atan2(-cross_m, cross_n) if (cross_m != 0.0 or cross_n != 0.0) else 0.0
    w = math.cos(phi) * m + math.sin(phi) * n
    if w[a] * t[0] + w[b] * t[1] < 0.0:
        w = -w
    return w


def _reconstruct_orientation(angles: ConstrainedAngles, mode: ConfigMode) -> UnitQuat:
    al = math.radians(angles.alpha)
    be = math.radians(angles.beta)
    ga = math.radians(angles.gamma)
    if mode is ConfigMode.FORWARD:
        z_dir = _pitch_yaw_axis(be, ga)
        y_dir = _perp_with_plane_direction(z_dir, (1, 2), (math.sin(al), math.cos(al)))
    else:
        y_dir = _pitch_yaw_axis(be, ga)
        z_dir = _perp_with_plane_direction(y_dir, (1, 2), (-math.sin(al), -math.cos(al)))
    x_dir = np.cross(y_dir, z_dir)
    return mat_to_quat(np.column_stack([x_dir, y_dir, z_dir]))


def constrain_orientation(q: UnitQuat, mode: ConfigMode, table: ConstraintTable,
                          prev: Optional[ConstrainedAngles] = None
                          ) -> tuple[UnitQuat, ConstrainedAngles]:
    """Clamp the plane-projected angles of ``q`` to the mode's table and
    rebuild the quaternion realizing the clamped triple."""
    raw = extract_orientation_angles(q, mode, prev)
    clamped = ConstrainedAngles(
        alpha=table.bounds(mode, "alpha").clamp(raw.alpha),
        beta=table.bounds(mode, "beta").clamp(raw.beta),
        gamma=table.bounds(mode, "gamma").clamp(raw.gamma),
    )
    return _reconstruct_orientation(clamped, mode), clamped


def constrain_pose(pose: Pose, mode: ConfigMode, table: ConstraintTable,
                   prev: Optional[ConstrainedAngles] = None
                   ) -> tuple[Pose, ConstrainedAngles]:
    p = constrain_position(pose.p, mode, table)
    q, angles = constrain_orientation(pose.q, mode, table, prev)
    return Pose(p, q), angles


def base_orientation(mode: ConfigMode) -> UnitQuat:
    """Canonical orientation of a mode: all three projected angles zero.

    Forward points the TCP z-axis along +x with its y-axis up; downward
    points the TCP z-axis straight down with its y-axis along +x.
    """
    return _reconstruct_orientation(ConstrainedAngles(), mode)


def extract_rotation_action(q_vr: UnitQuat, q_tcp: UnitQuat) -> UnitQuat:
    """Rotation action relating controller and TCP orientations; composing it
    back onto the TCP orientation recovers the controller orientation."""
    return quat_compose(q_vr, quat_conjugate(q_tcp))


def apply_rotation_action(q_act: UnitQuat, q_tcp: UnitQuat) -> UnitQuat:
    """Inverse of extract_rotation_action: the absolute orientation a recorded
    rotation action asks for."""
    return quat_compose(q_act, q_tcp)
