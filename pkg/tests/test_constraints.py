import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ursa.constraints import (
    ConfigMode,
    ConstrainedAngles,
    ConstraintTable,
    OperatorInput,
    Pose,
    apply_rotation_action,
    base_orientation,
    constrain_orientation,
    constrain_pose,
    constrain_position,
    desired_pose,
    extract_orientation_angles,
    extract_rotation_action,
)
from ursa.geometry import UnitQuat, Vec3, quat_compose, quat_from_axis_angle

TABLE = ConstraintTable.default()
RNG = np.random.default_rng(42)


def random_quat() -> UnitQuat:
    return UnitQuat.from_array(RNG.normal(size=4))


def quat_allclose(a: UnitQuat, b: UnitQuat, atol=1e-9) -> bool:
    av, bv = a.as_array(), b.as_array()
    if float(av @ bv) < 0.0:
        bv = -bv
    return bool(np.allclose(av, bv, atol=atol))


class TestConstraintTable:
    def test_defaults_match_shipped_limits(self):
        expect = {
            ConfigMode.FORWARD: {"x": (0.38, 0.53), "y": (-0.2, 0.2), "z": (0.07, 0.3),
                                 "alpha": (-135.0, 135.0), "beta": (-5.0, 20.0),
                                 "gamma": (-45.0, 45.0)},
            ConfigMode.DOWNWARD: {"x": (0.2, 0.44), "y": (-0.2, 0.2), "z": (0.04, 0.13),
                                  "alpha": (-20.0, 20.0), "beta": (-40.0, 3.0),
                                  "gamma": (-90.0, 90.0)},
        }
        for mode, axes in expect.items():
            for axis, (lo, hi) in axes.items():
                b = TABLE.bounds(mode, axis)
                assert (b.lo, b.hi) == (lo, hi), (mode, axis)

    def test_loader_rejects_inverted_bounds(self):
        text = ConstraintTable.default()  # noqa: F841 - template below is hand-rolled
        bad = """
forward:
  x: {min: 0.6, max: 0.5}
  y: {min: -0.2, max: 0.2}
  z: {min: 0.07, max: 0.3}
  alpha: {min: -135, max: 135}
  beta: {min: -5, max: 20}
  gamma: {min: -45, max: 45}
downward:
  x: {min: 0.2, max: 0.44}
  y: {min: -0.2, max: 0.2}
  z: {min: 0.04, max: 0.13}
  alpha: {min: -20, max: 20}
  beta: {min: -40, max: 3}
  gamma: {min: -90, max: 90}
"""
        with pytest.raises(ValueError, match="inverted"):
            ConstraintTable.from_yaml(bad)

    def test_loader_rejects_missing_axis(self):
        with pytest.raises(ValueError, match="missing"):
            ConstraintTable.from_yaml("forward: {x: {min: 0, max: 1}}\ndownward: {}\n")


class TestDesiredPose:
    def test_zero_velocity_keeps_position(self):
        cur = Pose(Vec3(0.4, 0.0, 0.1), base_orientation(ConfigMode.FORWARD))
        out = desired_pose(cur, OperatorInput(Vec3(0, 0, 0), random_quat()))
        assert np.allclose(out.p.as_array(), cur.p.as_array())

    def test_orientation_tracks_controller_exactly(self):
        cur = Pose(Vec3(0.4, 0.0, 0.1), base_orientation(ConfigMode.FORWARD))
        q_vr = random_quat()
        out = desired_pose(cur, OperatorInput(Vec3(0.01, 0, 0), q_vr))
        assert out.q is q_vr

    def test_position_adds_velocity(self):
        cur = Pose(Vec3(0.4, 0.0, 0.1), UnitQuat.identity())
        out = desired_pose(cur, OperatorInput(Vec3(0.01, 0, 0), UnitQuat.identity()))
        assert np.allclose(out.p.as_array(), [0.41, 0.0, 0.1])


class TestConstrainPosition:
    def test_forward_x_max(self):
        out = constrain_position(Vec3(0.60, 0.0, 0.1), ConfigMode.FORWARD, TABLE)
        assert np.allclose(out.as_array(), [0.53, 0.0, 0.1])

    def test_downward_z_min(self):
        out = constrain_position(Vec3(0.3, 0.0, 0.02), ConfigMode.DOWNWARD, TABLE)
        assert np.allclose(out.as_array(), [0.3, 0.0, 0.04])

    def test_inside_box_unchanged_bitwise(self):
        p = Vec3(0.45, 0.123456789, 0.2)
        out = constrain_position(p, ConfigMode.FORWARD, TABLE)
        assert (out.x, out.y, out.z) == (p.x, p.y, p.z)

    @settings(max_examples=200, derandomize=True)
    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
    def test_always_inside_box_and_idempotent(self, x, y, z):
        for mode in ConfigMode:
            out = constrain_position(Vec3(x, y, z), mode, TABLE)
            for axis, v in zip(("x", "y", "z"), out.as_array()):
                b = TABLE.bounds(mode, axis)
                assert b.lo <= v <= b.hi
            again = constrain_position(out, mode, TABLE)
            assert (again.x, again.y, again.z) == (out.x, out.y, out.z)


class TestConstrainOrientation:
    def test_forward_pitch_clamped_to_20(self):
        # Pitch the TCP z-axis 30 degrees downward from the forward base pose:
        # sign-positive beta, above the +20 limit.
        tilt = quat_from_axis_angle(Vec3(0, 1, 0), math.radians(30))
        q = quat_compose(tilt, base_orientation(ConfigMode.FORWARD))
        raw = extract_orientation_angles(q, ConfigMode.FORWARD)
        assert raw.beta == pytest.approx(30.0, abs=1e-9)
        _, angles = constrain_orientation(q, ConfigMode.FORWARD, TABLE)
        assert angles.beta == pytest.approx(20.0, abs=1e-12)

    def test_forward_base_pose_is_fixed_point(self):
        q0 = base_orientation(ConfigMode.FORWARD)
        out, angles = constrain_orientation(q0, ConfigMode.FORWARD, TABLE)
        assert angles.as_tuple() == pytest.approx((0.0, 0.0, 0.0), abs=1e-12)
        assert quat_allclose(out, q0, atol=1e-12)

    def test_downward_yaw_clamped_to_90(self):
        yaw = quat_from_axis_angle(Vec3(0, 0, 1), math.radians(120))
        q = quat_compose(yaw, base_orientation(ConfigMode.DOWNWARD))
        raw = extract_orientation_angles(q, ConfigMode.DOWNWARD)
        assert raw.gamma == pytest.approx(120.0, abs=1e-9)
        _, angles = constrain_orientation(q, ConfigMode.DOWNWARD, TABLE)
        assert angles.gamma == pytest.approx(90.0, abs=1e-12)

    def test_forward_roll_reaches_table_limits(self):
        roll = quat_from_axis_angle(Vec3(1, 0, 0), math.radians(60))
        q = quat_compose(roll, base_orientation(ConfigMode.FORWARD))
        raw = extract_orientation_angles(q, ConfigMode.FORWARD)
        assert abs(raw.alpha) == pytest.approx(60.0, abs=1e-9)
        _, angles = constrain_orientation(q, ConfigMode.FORWARD, TABLE)
        assert abs(angles.alpha) == pytest.approx(60.0, abs=1e-9)  # inside +-135

    @pytest.mark.parametrize("mode", list(ConfigMode))
    def test_idempotent_on_own_output(self, mode):
        for _ in range(1000):
            q = random_quat()
            q1, a1 = constrain_orientation(q, mode, TABLE)
            q2, a2 = constrain_orientation(q1, mode, TABLE, a1)
            assert quat_allclose(q1, q2, atol=1e-9)
            assert np.allclose(a1.as_tuple(), a2.as_tuple(), atol=1e-9)

    @pytest.mark.parametrize("mode", list(ConfigMode))
    def test_outputs_within_bounds(self, mode):
        for _ in range(1000):
            q1, a1 = constrain_orientation(random_quat(), mode, TABLE)
            back = extract_orientation_angles(q1, mode, a1)
            for axis, v in zip(("alpha", "beta", "gamma"), back.as_tuple()):
                b = TABLE.bounds(mode, axis)
                assert b.lo - 1e-6 <= v <= b.hi + 1e-6, (mode, axis, v)

    def test_in_bounds_orientation_unchanged(self):
        # Compose a mild in-bounds rotation; the constraint must not move it.
        q = quat_compose(quat_from_axis_angle(Vec3(0, 1, 0), math.radians(8)),
                         base_orientation(ConfigMode.FORWARD))
        out, _ = constrain_orientation(q, ConfigMode.FORWARD, TABLE)
        assert quat_allclose(out, q, atol=1e-9)

    def test_degenerate_projection_holds_previous_angle(self):
        # Downward with the TCP y-axis pointing along +y (identity): its
        # xz-projection vanishes, so pitch must hold the supplied value.
        prev = ConstrainedAngles(alpha=0.0, beta=-12.5, gamma=45.0)
        raw = extract_orientation_angles(UnitQuat.identity(), ConfigMode.DOWNWARD, prev)
        assert raw.beta == prev.beta
        # Without a previous value the angle defaults to zero.
        raw0 = extract_orientation_angles(UnitQuat.identity(), ConfigMode.DOWNWARD)
        assert raw0.beta == 0.0


class TestRotationAction:
    def test_equal_orientations_give_identity(self):
        q = random_quat()
        act = extract_rotation_action(q, q)
        assert quat_allclose(act, UnitQuat.identity())

    def test_round_trip(self):
        for _ in range(300):
            q_vr, q_tcp = random_quat(), random_quat()
            act = extract_rotation_action(q_vr, q_tcp)
            assert quat_allclose(apply_rotation_action(act, q_tcp), q_vr)

    def test_identity_tcp_returns_controller(self):
        q_vr = random_quat()
        act = extract_rotation_action(q_vr, UnitQuat.identity())
        assert quat_allclose(act, q_vr)


class TestConstrainPose:
    def test_combined_pipeline(self):
        pose = Pose(Vec3(0.9, -0.5, 0.01), random_quat())
        out, angles = constrain_pose(pose, ConfigMode.FORWARD, TABLE)
        assert np.allclose(out.p.as_array(), [0.53, -0.2, 0.07])
        back = extract_orientation_angles(out.q, ConfigMode.FORWARD, angles)
        for axis, v in zip(("alpha", "beta", "gamma"), back.as_tuple()):
            b = TABLE.bounds(ConfigMode.FORWARD, axis)
            assert b.lo - 1e-6 <= v <= b.hi + 1e-6

    @pytest.mark.parametrize("mode", list(ConfigMode))
    def test_mode_switch_safety(self, mode):
        # Constraining any pose under either mode satisfies that mode's table.
        for _ in range(200):
            pose = Pose(Vec3.from_array(RNG.uniform(-1, 1, 3)), random_quat())
            out, angles = constrain_pose(pose, mode, TABLE)
            for axis, v in zip(("x", "y", "z"), out.p.as_array()):
                b = TABLE.bounds(mode, axis)
                assert b.lo <= v <= b.hi
            back = extract_orientation_angles(out.q, mode, angles)
            for axis, v in zip(("alpha", "beta", "gamma"), back.as_tuple()):
                b = TABLE.bounds(mode, axis)
                assert b.lo - 1e-6 <= v <= b.hi + 1e-6
