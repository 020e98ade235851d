"""Quaternion/vector algebra, plane projections, and scalar clamping.

Conventions, fixed once for the whole package:

* quaternion storage order is ``(x, y, z, w)``,
* composition is the Hamilton product, ``quat_compose(a, b)`` applies ``b``
  first and ``a`` second,
* a quaternion rotates body-frame vectors into the world frame,
* angles are radians internally; degrees appear only at I/O boundaries.

3x3 matrices are plain row-major ``numpy`` arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

DEGENERATE_PROJECTION_EPS = 1e-9


class DegenerateProjection(Exception):
    """Projected vector too short to define an angle; caller holds the previous value."""


class Axis(Enum):
    X = 0
    Y = 1
    Z = 2


class PlaneId(Enum):
    XY = (Axis.X, Axis.Y)
    XZ = (Axis.X, Axis.Z)
    YZ = (Axis.Y, Axis.Z)


@dataclass(frozen=True)
class Vec3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError(f"non-finite Vec3 components: ({self.x}, {self.y}, {self.z})")

    @staticmethod
    def from_array(a) -> "Vec3":
        return Vec3(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def __mul__(self, s: float) -> "Vec3":
        return Vec3(self.x * s, self.y * s, self.z * s)

    __rmul__ = __mul__

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def norm(self) -> float:
        return math.sqrt(self.dot(self))


@dataclass(frozen=True)
class UnitQuat:
    """Unit quaternion, renormalized on construction."""

    x: float
    y: float
    z: float
    w: float

    def __post_init__(self):
        n = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z + self.w * self.w)
        if not math.isfinite(n) or n < 1e-12:
            raise ValueError(f"degenerate quaternion ({self.x}, {self.y}, {self.z}, {self.w})")
        if abs(n - 1.0) > 1e-12:
            object.__setattr__(self, "x", self.x / n)
            object.__setattr__(self, "y", self.y / n)
            object.__setattr__(self, "z", self.z / n)
            object.__setattr__(self, "w", self.w / n)

    @staticmethod
    def identity() -> "UnitQuat":
        return UnitQuat(0.0, 0.0, 0.0, 1.0)

    @staticmethod
    def from_array(a) -> "UnitQuat":
        return UnitQuat(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.w], dtype=float)


def clamp_scalar(x: float, lo: float, hi: float) -> float:
    """Clamp ``x`` into ``[lo, hi]``: max(min(x, hi), lo)."""
    if not (math.isfinite(x) and math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError(f"non-finite clamp inputs ({x}, {lo}, {hi})")
    if lo > hi:
        raise ValueError(f"clamp bounds inverted: lo={lo} > hi={hi}")
    return max(min(x, hi), lo)


_BASIS = {Axis.X: np.array([1.0, 0.0, 0.0]),
          Axis.Y: np.array([0.0, 1.0, 0.0]),
          Axis.Z: np.array([0.0, 0.0, 1.0])}


def plane_projection_matrix(plane: PlaneId) -> np.ndarray:
    """Orthogonal projector onto a fundamental plane, built as B (B^T B)^-1 B^T."""
    a, b = plane.value
    basis = np.column_stack([_BASIS[a], _BASIS[b]])  # 3x2
    return basis @ np.linalg.inv(basis.T @ basis) @ basis.T


def signed_projected_angle(v: Vec3, plane: PlaneId, ref_axis: Vec3,
                           sign_positive_when: Callable[[Vec3], bool]) -> float:
    """Angle between the in-plane projection of ``v`` and ``ref_axis``, in radians.

    The unsigned angle comes from the normalized dot product; the sign is +1
    when the predicate holds on the projected vector and -1 otherwise.
    Raises DegenerateProjection when the projection is shorter than 1e-9.
    """
    proj = plane_projection_matrix(plane) @ v.as_array()
    norm = float(np.linalg.norm(proj))
    if norm <= DEGENERATE_PROJECTION_EPS:
        raise DegenerateProjection(f"projection of {v} onto {plane.name} has norm {norm:.3e}")
    ref = ref_axis.as_array()
    cos_angle = float(proj @ ref) / (norm * float(np.linalg.norm(ref)))
    angle = math.acos(clamp_scalar(cos_angle, -1.0, 1.0))
    projected = Vec3.from_array(proj)
    return angle if sign_positive_when(projected) else -angle


def quat_compose(a: UnitQuat, b: UnitQuat) -> UnitQuat:
    """Hamilton product a * b (apply b first, then a)."""
    x1, y1, z1, w1 = a.x, a.y, a.z, a.w
    x2, y2, z2, w2 = b.x, b.y, b.z, b.w
    return UnitQuat(
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
    )


def quat_conjugate(q: UnitQuat) -> UnitQuat:
    return UnitQuat(-q.x, -q.y, -q.z, q.w)


def rotate_vector(q: UnitQuat, v: Vec3) -> Vec3:
    return Vec3.from_array(quat_to_mat(q) @ v.as_array())


def frame_axis(q: UnitQuat, axis: Axis) -> Vec3:
    """Body axis of ``q`` expressed in the world frame (column of its rotation matrix)."""
    return Vec3.from_array(quat_to_mat(q)[:, axis.value])


def quat_to_mat(q: UnitQuat) -> np.ndarray:
    x, y, z, w = q.x, q.y, q.z, q.w
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def mat_to_quat(m: np.ndarray) -> UnitQuat:
    """Rotation matrix to quaternion, canonicalized to w >= 0."""
    t = float(np.trace(m))
    if t > 0.0:
        s = 0.5 / math.sqrt(t + 1.0)
        w = 0.25 / s
        x = (m[2, 1] - m[1, 2]) * s
        y = (m[0, 2] - m[2, 0]) * s
        z = (m[1, 0] - m[0, 1]) * s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    if w < 0.0:
        x, y, z, w = -x, -y, -z, -w
    return UnitQuat(x, y, z, w)


def quat_from_axis_angle(axis: Vec3, angle: float) -> UnitQuat:
    n = axis.norm()
    if n < 1e-12:
        raise ValueError("zero-length rotation axis")
    half = 0.5 * angle
    s = math.sin(half) / n
    return UnitQuat(axis.x * s, axis.y * s, axis.z * s, math.cos(half))


def quat_rotation_angle(a: UnitQuat, b: UnitQuat) -> float:
    """Geodesic angle in radians between two rotations (double cover folded out)."""
    dot = abs(a.x * b.x + a.y * b.y + a.z * b.z + a.w * b.w)
    return 2.0 * math.acos(clamp_scalar(dot, -1.0, 1.0))


def quat_log(q: UnitQuat) -> Vec3:
    """Rotation vector (axis * angle) of ``q``."""
    w = clamp_scalar(q.w, -1.0, 1.0)
    sign = 1.0 if w >= 0.0 else -1.0  # fold the double cover
    w *= sign
    v = np.array([q.x, q.y, q.z]) * sign
    s = float(np.linalg.norm(v))
    if s < 1e-12:
        return Vec3(0.0, 0.0, 0.0)
    angle = 2.0 * math.atan2(s, w)
    return Vec3.from_array(v * (angle / s))


def quat_slerp(a: UnitQuat, b: UnitQuat, t: float) -> UnitQuat:
    """Spherical interpolation from a (t=0) to b (t=1) along the shorter arc."""
    av, bv = a.as_array(), b.as_array()
    dot = float(av @ bv)
    if dot < 0.0:
        bv = -bv
        dot = -dot
    if dot > 1.0 - 1e-12:
        return UnitQuat.from_array(av + t * (bv - av))
    theta = math.acos(clamp_scalar(dot, -1.0, 1.0))
    s = math.sin(theta)
    return UnitQuat.from_array((math.sin((1.0 - t) * theta) / s) * av
                               + (math.sin(t * theta) / s) * bv)


def convert_handedness(p: Vec3, q: UnitQuat) -> tuple[Vec3, UnitQuat]:
    """Map a left-handed (z-mirrored) pose into the right-handed convention.

    Position: negate z. Quaternion: conjugate by the xy-plane mirror, which
    negates the x and y components; the map preserves composition and is its
    own inverse.
    """
    return Vec3(p.x, p.y, -p.z), UnitQuat(-q.x, -q.y, q.z, q.w)
