import math

import numpy as np
import pytest

from ursa.constraints import ConfigMode, ConstraintTable, Pose, base_orientation, constrain_pose, extract_orientation_angles
from ursa.geometry import UnitQuat, Vec3, quat_from_axis_angle, quat_rotation_angle
from ursa.kinematics import (
    ChainSpec,
    DhRow,
    JointState,
    dls_ik,
    forward_kinematics,
    jacobian,
    joint_velocity_command,
    mode_to_joint,
)

CHAIN = ChainSpec.default()
TABLE = ConstraintTable.default()
RNG = np.random.default_rng(1234)


def planar_two_link() -> ChainSpec:
    rows = (DhRow(a=1.0, d=0.0, alpha=0.0), DhRow(a=1.0, d=0.0, alpha=0.0))
    lim = np.array([-2 * math.pi, -2 * math.pi]), np.array([2 * math.pi, 2 * math.pi])
    return ChainSpec(rows, lim[0], lim[1], Vec3(0.0, 0.0, 0.0))


class TestForwardKinematics:
    def test_planar_two_link_hand_computed(self):
        pose = forward_kinematics(planar_two_link(), JointState(np.array([0.0, math.pi / 2])))
        assert np.allclose(pose.p.as_array(), [1.0, 1.0, 0.0], atol=1e-12)

    def test_home_pose_golden(self):
        # Computed once from the shipped DH table and frozen.
        pose = forward_kinematics(CHAIN, JointState(np.zeros(6)))
        assert np.allclose(pose.p.as_array(), [-0.4569, -0.32125, 0.06655], atol=1e-12)
        want_q = quat_from_axis_angle(Vec3(1, 0, 0), math.pi / 2)
        assert quat_rotation_angle(pose.q, want_q) < 1e-9

    def test_deterministic(self):
        theta = RNG.uniform(-math.pi, math.pi, 6)
        a = forward_kinematics(CHAIN, JointState(theta))
        b = forward_kinematics(CHAIN, JointState(theta.copy()))
        assert (a.p.as_array() == b.p.as_array()).all()
        assert (a.q.as_array() == b.q.as_array()).all()

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="length"):
            forward_kinematics(CHAIN, JointState(np.zeros(5)))


class TestJacobian:
    def test_matches_finite_differences(self):
        theta = RNG.uniform(-1.5, 1.5, 6)
        jac = jacobian(CHAIN, theta)
        h = 1e-7
        for i in range(6):
            dp = np.zeros(6)
            dp[i] = h
            plus = forward_kinematics(CHAIN, JointState(theta + dp)).p.as_array()
            minus = forward_kinematics(CHAIN, JointState(theta - dp)).p.as_array()
            fd = (plus - minus) / (2 * h)
            assert np.allclose(jac[:3, i], fd, atol=1e-6)


class TestDlsIk:
    def test_already_solved_returns_immediately(self):
        theta = RNG.uniform(-1.0, 1.0, 6)
        target = forward_kinematics(CHAIN, JointState(theta))
        result = dls_ik(CHAIN, target, JointState(theta))
        assert result.converged
        assert result.iters <= 1
        assert np.allclose(result.theta, theta)

    def test_self_consistency_from_perturbed_seeds(self):
        ok = 0
        for _ in range(100):
            theta = RNG.uniform(-math.pi, math.pi, 6)
            target = forward_kinematics(CHAIN, JointState(theta))
            seed = theta + RNG.uniform(-0.3, 0.3, 6)
            result = dls_ik(CHAIN, target, JointState(seed))
            if result.converged and result.pos_err < 1e-3:
                ok += 1
        assert ok == 100

    def test_unreachable_target_not_converged_monotone(self):
        target = Pose(Vec3(2.0, 0.0, 0.5), UnitQuat.identity())  # beyond reach
        result = dls_ik(CHAIN, target, JointState(np.zeros(6)))
        assert not result.converged
        assert result.pos_err > 0.5
        diffs = np.diff(result.residuals)
        assert (diffs <= 1e-12).all(), "residual trace must be non-increasing"

    def test_iterates_respect_joint_limits(self):
        rows = CHAIN.rows
        tight = ChainSpec(rows, np.full(6, -1.0), np.full(6, 1.0), CHAIN.tcp_offset)
        theta = RNG.uniform(-0.9, 0.9, 6)
        target = forward_kinematics(CHAIN, JointState(RNG.uniform(-3, 3, 6)))
        result = dls_ik(tight, target, JointState(theta))
        assert (result.theta >= -1.0).all() and (result.theta <= 1.0).all()


class TestModePostures:
    @pytest.mark.parametrize("mode", list(ConfigMode))
    def test_fk_inside_mode_box_with_zero_angles(self, mode):
        pose = forward_kinematics(CHAIN, mode_to_joint(mode, CHAIN))
        for axis, v in zip(("x", "y", "z"), pose.p.as_array()):
            b = TABLE.bounds(mode, axis)
            assert b.lo < v < b.hi
        angles = extract_orientation_angles(pose.q, mode)
        assert np.allclose(angles.as_tuple(), (0, 0, 0), atol=1e-9)

    @pytest.mark.parametrize("mode", list(ConfigMode))
    def test_fixed_point_of_constraint_map(self, mode):
        pose = forward_kinematics(CHAIN, mode_to_joint(mode, CHAIN))
        constrained, _ = constrain_pose(pose, mode, TABLE)
        assert np.allclose(constrained.p.as_array(), pose.p.as_array(), atol=1e-12)
        assert quat_rotation_angle(constrained.q, pose.q) < 1e-7

    def test_pure_function(self):
        a = mode_to_joint(ConfigMode.FORWARD)
        b = mode_to_joint(ConfigMode.FORWARD)
        assert (a.theta == b.theta).all()
        assert a.theta is not b.theta


class TestJointVelocityCommand:
    def test_zero_at_goal(self):
        theta = RNG.uniform(-1, 1, 6)
        assert (joint_velocity_command(theta, theta) == 0).all()

    def test_componentwise_scale(self):
        goal = np.array([0.1, 0, 0, 0, 0, 0])
        vel = joint_velocity_command(goal, np.zeros(6), scale=2.0)
        assert np.allclose(vel, [0.2, 0, 0, 0, 0, 0])

    def test_speed_clamp_preserves_sign(self):
        goal = np.array([5.0, -5.0, 0, 0, 0, 0])
        vel = joint_velocity_command(goal, np.zeros(6), scale=1.0, speed_limit=1.0)
        assert np.allclose(vel, [1.0, -1.0, 0, 0, 0, 0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            joint_velocity_command(np.zeros(5), np.zeros(6))
