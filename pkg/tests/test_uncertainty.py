import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ursa.demo_store import make_action_vector
from ursa.geometry import UnitQuat, quat_from_axis_angle, quat_rotation_angle, Vec3
from ursa.hsn import HsnConfig, SkillGaussian, init_params
from ursa.uncertainty import (
    ConservativePlanner,
    blend_skill,
    covariance_determinant,
    mc_sample_prior,
    normalize_uncertainty,
    scale_action,
    skill_uncertainty,
)

CFG = HsnConfig(obs_dim=12)
PARAMS = init_params(CFG, seed=0)
RNG = np.random.default_rng(606)


def gaussian_with_det(det: float, dims: int = 12) -> SkillGaussian:
    sigma = np.full(dims, det ** (1.0 / (2 * dims)))
    return SkillGaussian(np.zeros(dims), sigma)


class TestMcSamplePrior:
    def setup_method(self):
        self.obs = RNG.normal(size=CFG.obs_dim)
        self.state = RNG.normal(size=16)

    def test_same_seed_identical(self):
        a = mc_sample_prior(self.obs, self.state, PARAMS, CFG, k=4, seed=9)
        b = mc_sample_prior(self.obs, self.state, PARAMS, CFG, k=4, seed=9)
        for ga, gb in zip(a, b):
            assert np.array_equal(ga.mu, gb.mu) and np.array_equal(ga.sigma, gb.sigma)

    def test_keep_prob_one_degenerates(self):
        cfg = HsnConfig(obs_dim=12, dropout_keep=1.0)
        params = init_params(cfg, seed=0)
        gs = mc_sample_prior(self.obs, self.state, params, cfg, k=5, seed=0)
        for g in gs[1:]:
            assert np.array_equal(g.mu, gs[0].mu)

    def test_distinct_masks_give_distinct_gaussians(self):
        gs = mc_sample_prior(self.obs, self.state, PARAMS, CFG, k=16, seed=0)
        mus = np.stack([g.mu for g in gs])
        assert len(np.unique(mus.round(12), axis=0)) == 16

    def test_k_too_small(self):
        with pytest.raises(ValueError):
            mc_sample_prior(self.obs, self.state, PARAMS, CFG, k=1)


class TestSkillUncertainty:
    def test_identical_gaussians_zero(self):
        g = gaussian_with_det(2.0)
        trace = skill_uncertainty([g, g, g])
        assert trace.raw == 0.0 and trace.normalized == 0.0

    def test_two_point_population_std(self):
        # dets {1, 3}: mean 2, population std 1.
        trace = skill_uncertainty([gaussian_with_det(1.0), gaussian_with_det(3.0)])
        assert trace.raw == pytest.approx(1.0, rel=1e-9)

    def test_determinant_homogeneity(self):
        # Scaling every variance by c scales each det by c^12 and the spread
        # by c^12 as well.
        base = [gaussian_with_det(1.0), gaussian_with_det(3.0)]
        c = 1.3
        scaled = [SkillGaussian(g.mu, g.sigma * math.sqrt(c)) for g in base]
        t0 = skill_uncertainty(base)
        t1 = skill_uncertainty(scaled)
        assert t1.raw == pytest.approx(t0.raw * c ** 12, rel=1e-9)

    def test_log_space_determinant_survives_small_sigmas(self):
        # det = 1e-144: the naive running product would hit denormals long
        # before the 12th factor; the log-space sum keeps full precision.
        g = SkillGaussian(np.zeros(12), np.full(12, 1e-6))
        det = covariance_determinant(g)
        assert det == pytest.approx(1e-144, rel=1e-9)


class TestNormalizeUncertainty:
    def test_zero_maps_to_zero(self):
        assert normalize_uncertainty(0.0) == 0.0

    def test_reference_point(self):
        # With the default squash constant, a spread of 500 lands at 1 - 1/e.
        got = normalize_uncertainty(500.0, 2e-3)
        assert got == pytest.approx(1.0 - math.exp(-1.0), abs=1e-12)

    def test_monotone_and_bounded(self):
        prev = -1.0
        for raw in np.logspace(-3, 3, 40):
            u = normalize_uncertainty(float(raw))
            assert prev < u < 1.0
            prev = u

    def test_saturates_toward_one(self):
        # Far past the knee the float value rounds to 1.0 but never exceeds it.
        assert normalize_uncertainty(1e9) <= 1.0

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            normalize_uncertainty(-0.1)


class TestBlendSkill:
    def test_endpoints(self):
        z_t, z_prev = RNG.normal(size=12), RNG.normal(size=12)
        assert np.array_equal(blend_skill(z_t, z_prev, 0.0), z_t)
        assert np.array_equal(blend_skill(z_t, z_prev, 1.0), z_prev)

    def test_midpoint(self):
        z_t, z_prev = RNG.normal(size=12), RNG.normal(size=12)
        assert np.allclose(blend_skill(z_t, z_prev, 0.5), (z_t + z_prev) / 2)

    @settings(max_examples=100, derandomize=True)
    @given(st.floats(0.0, 1.0))
    def test_output_between_inputs(self, u):
        z_t, z_prev = np.array([1.0, -2.0]), np.array([3.0, 4.0])
        out = blend_skill(z_t, z_prev, u)
        lo, hi = np.minimum(z_t, z_prev), np.maximum(z_t, z_prev)
        assert ((out >= lo - 1e-12) & (out <= hi + 1e-12)).all()


class TestScaleAction:
    def make_action(self, angle=0.3):
        q = quat_from_axis_angle(Vec3(0, 0, 1), angle)
        return make_action_vector(np.array([0.01, -0.02, 0.005]), q.as_array(), 1.0, 0.0)

    def test_zero_uncertainty_identity(self):
        a = self.make_action()
        out = scale_action(a, 0.0)
        assert np.allclose(out, a, atol=1e-12)

    def test_full_uncertainty_halves_translation(self):
        a = self.make_action()
        out = scale_action(a, 1.0)
        assert np.allclose(out[:3], a[:3] * 0.5)

    def test_quarter_gives_point_eight(self):
        a = self.make_action()
        out = scale_action(a, 0.25)
        assert np.allclose(out[:3], a[:3] * 0.8)

    def test_rotation_shortened_by_same_factor(self):
        a = self.make_action(angle=0.4)
        out = scale_action(a, 1.0)
        got = quat_rotation_angle(UnitQuat.from_array(out[3:7]), UnitQuat.identity())
        assert got == pytest.approx(0.2, abs=1e-9)

    def test_discrete_entries_pass_through(self):
        a = self.make_action()
        out = scale_action(a, 0.7)
        assert out[7] == a[7] and out[8] == a[8]

    @settings(max_examples=100, derandomize=True)
    @given(st.floats(0.0, 1.0))
    def test_never_speeds_up_and_factor_bounded(self, u):
        a = self.make_action()
        out = scale_action(a, u)
        assert (np.abs(out[:3]) <= np.abs(a[:3]) + 1e-15).all()
        factor = np.linalg.norm(out[:3]) / np.linalg.norm(a[:3])
        assert 0.5 - 1e-12 <= factor <= 1.0 + 1e-12


class TestConservativePlanner:
    def test_deterministic(self):
        obs, state = RNG.normal(size=CFG.obs_dim), RNG.normal(size=16)

        def run():
            planner = ConservativePlanner(PARAMS, CFG, mc_samples=4, seed=3)
            zs = []
            for _ in range(3):
                z, trace = planner.infer(obs, state)
                zs.append((z.copy(), trace.normalized))
            return zs

        a, b = run(), run()
        for (za, ua), (zb, ub) in zip(a, b):
            assert np.array_equal(za, zb) and ua == ub

    def test_first_step_blend_is_identity(self):
        # With no history the blend must not invent conservatism: the output
        # equals the deterministic prior mean regardless of uncertainty.
        from ursa.hsn import prior as hsn_prior
        obs, state = RNG.normal(size=CFG.obs_dim), RNG.normal(size=16)
        planner = ConservativePlanner(PARAMS, CFG, mc_samples=4, seed=3)
        z, _ = planner.infer(obs, state)
        mean = hsn_prior(PARAMS, obs, state, CFG).mu
        assert np.allclose(z, mean)

    def test_disabled_planner_skips_blending(self):
        obs, state = RNG.normal(size=CFG.obs_dim), RNG.normal(size=16)
        from ursa.hsn import prior as hsn_prior
        planner = ConservativePlanner(PARAMS, CFG, mc_samples=4, seed=3, enabled=False)
        planner.infer(obs, state)
        z2, _ = planner.infer(RNG.normal(size=CFG.obs_dim), state)
        # with blending disabled the latent is exactly the prior mean
        assert planner.z_prev is not None
        assert np.array_equal(z2, planner.z_prev)
