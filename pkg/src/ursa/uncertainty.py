"""Dropout-ensemble skill uncertainty and conservative inference.

The prior is evaluated K times under independent dropout masks; the spread
(population standard deviation) of the covariance determinants is squashed
into [0, 1) and used to blend the current latent toward the previous one and
to slow the executed actions down by up to half.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import DropoutMask
from .demo_store import A_DPOS, A_GRIP, A_MODE, A_QUAT
from .geometry import UnitQuat, quat_slerp
from .hsn import HsnConfig, SkillGaussian, prior

EPSILON_DEFAULT = 2e-3
MC_SAMPLES_DEFAULT = 16


@dataclass(frozen=True)
class UncertaintyTrace:
    """One inference step's uncertainty record."""

    dets: np.ndarray          # covariance determinants, one per dropout sample
    raw: float                # population std of the determinants
    normalized: float         # 1 - exp(-epsilon * raw), in [0, 1)
    samples: int
    epsilon: float

    def as_dict(self) -> dict:
        return {"raw": self.raw, "normalized": self.normalized,
                "samples": self.samples, "epsilon": self.epsilon}


def mc_sample_prior(obs: np.ndarray, state: np.ndarray, params: dict, cfg: HsnConfig,
                    k: int = MC_SAMPLES_DEFAULT, seed: int = 0, step: int = 0) -> list:
    """K prior evaluations, one per dropout mask; deterministic in all inputs."""
    if k < 2:
        raise ValueError("need at least 2 dropout samples")
    return [prior(params, obs, state, cfg, DropoutMask(seed, [step, i], cfg.dropout_keep))
            for i in range(k)]


def covariance_determinant(g: SkillGaussian) -> float:
    """|Sigma| of a diagonal Gaussian, accumulated in log space to survive
    the 12-dimensional product."""
    return float(math.exp(2.0 * np.sum(np.log(g.sigma))))


def skill_uncertainty(gaussians, epsilon: float = EPSILON_DEFAULT) -> UncertaintyTrace:
    """Population standard deviation of the sample determinants, normalized."""
    if len(gaussians) < 2:
        raise ValueError("need at least 2 samples to measure spread")
    dets = np.array([covariance_determinant(g) for g in gaussians])
    raw = float(np.std(dets))  # population std (ddof=0)
    return UncertaintyTrace(dets=dets, raw=raw,
                            normalized=normalize_uncertainty(raw, epsilon),
                            samples=len(dets), epsilon=epsilon)


def normalize_uncertainty(raw: float, epsilon: float = EPSILON_DEFAULT) -> float:
    """Squash [0, inf) into [0, 1): 1 - exp(-epsilon * raw)."""
    if raw < 0.0:
        raise ValueError(f"uncertainty must be nonnegative, got {raw}")
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return 1.0 - math.exp(-epsilon * raw)


def blend_skill(z_t: np.ndarray, z_prev: np.ndarray, u: float) -> np.ndarray:
    """Convex blend toward the previous latent: (1-u) z_t + u z_prev."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"blend weight must be in [0, 1], got {u}")
    return (1.0 - u) * np.asarray(z_t) + u * np.asarray(z_prev)


def scale_action(action: np.ndarray, u: float) -> np.ndarray:
    """Slow one action row down by 1/(1+u).

    The translation scales directly; the rotation is shortened by slerping
    from identity by the same factor (componentwise scaling of a quaternion
    is not a rotation); the discrete grip/mode entries pass through.
    """
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"slow-down weight must be in [0, 1], got {u}")
    factor = 1.0 / (1.0 + u)
    out = np.array(action, dtype=float, copy=True)
    out[A_DPOS] = action[A_DPOS] * factor
    q = UnitQuat.from_array(action[A_QUAT])
    out[A_QUAT] = quat_slerp(UnitQuat.identity(), q, factor).as_array()
    out[A_GRIP] = action[A_GRIP]
    out[A_MODE] = action[A_MODE]
    return out


@dataclass
class ConservativePlanner:
    """Stateful wrapper running the full conservative-inference pipeline.

    Per inference: K dropout samples of the prior give the uncertainty; the
    executed latent is the deterministic prior mean blended toward the
    previous inference's latent; the decoded chunk rows are slowed down by
    the caller via `scale_action` with this step's normalized uncertainty.
    """

    params: dict
    cfg: HsnConfig
    mc_samples: int = MC_SAMPLES_DEFAULT
    epsilon: float = EPSILON_DEFAULT
    seed: int = 0
    enabled: bool = True
    z_prev: np.ndarray | None = None
    step_count: int = field(default=0)

    def reset(self):
        self.z_prev = None
        self.step_count = 0

    def infer(self, obs: np.ndarray, state: np.ndarray) -> tuple[np.ndarray, UncertaintyTrace]:
        gaussians = mc_sample_prior(obs, state, self.params, self.cfg,
                                    self.mc_samples, self.seed, self.step_count)
        trace = skill_uncertainty(gaussians, self.epsilon)
        if not math.isfinite(trace.normalized):
            raise FloatingPointError(f"non-finite uncertainty at step {self.step_count}: {trace}")
        z_t = prior(self.params, obs, state, self.cfg, mask=None).mu
        if self.enabled:
            z_prev = z_t if self.z_prev is None else self.z_prev  # first step: no history
            z_hat = blend_skill(z_t, z_prev, trace.normalized)
        else:
            z_hat = z_t
        self.z_prev = z_hat
        self.step_count += 1
        return z_hat, trace
