"""Hierarchical skill networks: recurrent chunk encoder, observation-conditioned
skill prior, and chunk decoder over a 12-dimensional latent skill space.

The encoder consumes an H x 9 action chunk through a single-gate recurrent
cell and a 256/128 linear stack into a diagonal Gaussian. The prior maps the
concatenated observation and robot state through three 256-wide leaky-ReLU
layers (dropout between the hidden layers) into the same Gaussian family.
The decoder expands a latent through three 256-wide layers into the H x 9
chunk, with the grip/mode columns squashed by a sigmoid.

Training minimizes chunk reconstruction (quaternion columns compared after
sign alignment) plus a KL term tying the posterior and the prior together.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DropoutMask, Tensor, constant, param
from .demo_store import ACTION_DIM, STATE_DIM

LATENT_DIM = 12
HORIZON = 10
CONT_COLS = 7   # delta position + quaternion per action row
DISC_COLS = 2   # grip + mode per action row


@dataclass(frozen=True)
class HsnConfig:
    obs_dim: int
    latent_dim: int = LATENT_DIM
    horizon: int = HORIZON
    action_dim: int = ACTION_DIM
    hidden: int = 256
    enc_hidden: int = 256
    enc_hidden2: int = 128
    rnn_hidden: int = 128
    dropout_keep: float = 0.9
    beta_kl: float = 5e-4
    lr: float = 1e-3
    batch_size: int = 64
    # Translation entries are centimeters-per-tick while quaternion entries
    # are O(1); this factor rescales them into a comparable range for the
    # encoder input and the reconstruction loss.
    dpos_scale: float = 100.0

    @property
    def prior_in(self) -> int:
        return self.obs_dim + STATE_DIM


@dataclass(frozen=True)
class SkillGaussian:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        if self.mu.shape != self.sigma.shape:
            raise ValueError("mu/sigma shape mismatch")
        if not (self.sigma > 0).all():
            raise ValueError("sigma must be strictly positive")


def init_params(cfg: HsnConfig, seed: int) -> dict:
    rng = np.random.default_rng(seed)

    def glorot(n_in, n_out):
        return param(rng.normal(size=(n_in, n_out)) * math.sqrt(2.0 / (n_in + n_out)))

    def zeros(n):
        return param(np.zeros(n))

    p = {}
    # recurrent chunk encoder
    p["enc.rnn.wx_f"] = glorot(cfg.action_dim, cfg.rnn_hidden)
    p["enc.rnn.wh_f"] = glorot(cfg.rnn_hidden, cfg.rnn_hidden)
    p["enc.rnn.b_f"] = zeros(cfg.rnn_hidden)
    p["enc.rnn.wx_c"] = glorot(cfg.action_dim, cfg.rnn_hidden)
    p["enc.rnn.wh_c"] = glorot(cfg.rnn_hidden, cfg.rnn_hidden)
    p["enc.rnn.b_c"] = zeros(cfg.rnn_hidden)
    p["enc.l1.w"] = glorot(cfg.rnn_hidden, cfg.enc_hidden)
    p["enc.l1.b"] = zeros(cfg.enc_hidden)
    p["enc.l2.w"] = glorot(cfg.enc_hidden, cfg.enc_hidden2)
    p["enc.l2.b"] = zeros(cfg.enc_hidden2)
    p["enc.mu.w"] = glorot(cfg.enc_hidden2, cfg.latent_dim)
    p["enc.mu.b"] = zeros(cfg.latent_dim)
    p["enc.sigma.w"] = glorot(cfg.enc_hidden2, cfg.latent_dim)
    p["enc.sigma.b"] = zeros(cfg.latent_dim)
    # skill prior
    p["prior.l1.w"] = glorot(cfg.prior_in, cfg.hidden)
    p["prior.l1.b"] = zeros(cfg.hidden)
    p["prior.l2.w"] = glorot(cfg.hidden, cfg.hidden)
    p["prior.l2.b"] = zeros(cfg.hidden)
    p["prior.l3.w"] = glorot(cfg.hidden, cfg.hidden)
    p["prior.l3.b"] = zeros(cfg.hidden)
    p["prior.mu.w"] = glorot(cfg.hidden, cfg.latent_dim)
    p["prior.mu.b"] = zeros(cfg.latent_dim)
    p["prior.sigma.w"] = glorot(cfg.hidden, cfg.latent_dim)
    p["prior.sigma.b"] = zeros(cfg.latent_dim)
    # chunk decoder
    p["dec.l1.w"] = glorot(cfg.latent_dim, cfg.hidden)
    p["dec.l1.b"] = zeros(cfg.hidden)
    p["dec.l2.w"] = glorot(cfg.hidden, cfg.hidden)
    p["dec.l2.b"] = zeros(cfg.hidden)
    p["dec.l3.w"] = glorot(cfg.hidden, cfg.hidden)
    p["dec.l3.b"] = zeros(cfg.hidden)
    p["dec.cont.w"] = glorot(cfg.hidden, cfg.horizon * CONT_COLS)
    p["dec.cont.b"] = zeros(cfg.horizon * CONT_COLS)
    p["dec.disc.w"] = glorot(cfg.hidden, cfg.horizon * DISC_COLS)
    p["dec.disc.b"] = zeros(cfg.horizon * DISC_COLS)
    return p


def scale_chunk(chunks: np.ndarray, cfg: HsnConfig) -> np.ndarray:
    """Rescale translation columns into the network's O(1) working range."""
    scaled = np.array(chunks, dtype=float, copy=True)
    scaled[..., :3] *= cfg.dpos_scale
    return scaled


def encode_t(params: dict, chunks: np.ndarray, cfg: HsnConfig) -> tuple[Tensor, Tensor]:
    """Graph-building encoder over a (B, H, 9) batch of chunks."""
    if chunks.ndim != 3 or chunks.shape[1:] != (cfg.horizon, cfg.action_dim):
        raise ValueError(f"chunk batch must be (B, {cfg.horizon}, {cfg.action_dim}), "
                         f"got {chunks.shape}")
    chunks = scale_chunk(chunks, cfg)
    batch = chunks.shape[0]
    h = constant(np.zeros((batch, cfg.rnn_hidden)))
    for t in range(cfg.horizon):
        h = ad.recurrent_cell(constant(chunks[:, t, :]), h,
                              params["enc.rnn.wx_f"], params["enc.rnn.wh_f"], params["enc.rnn.b_f"],
                              params["enc.rnn.wx_c"], params["enc.rnn.wh_c"], params["enc.rnn.b_c"])
    h = ad.leaky_relu(ad.linear(h, params["enc.l1.w"], params["enc.l1.b"]))
    h = ad.leaky_relu(ad.linear(h, params["enc.l2.w"], params["enc.l2.b"]))
    return ad.gaussian_head(h, params["enc.mu.w"], params["enc.mu.b"],
                            params["enc.sigma.w"], params["enc.sigma.b"])


def prior_t(params: dict, x: np.ndarray, cfg: HsnConfig,
            mask: DropoutMask | None = None) -> tuple[Tensor, Tensor]:
    """Graph-building prior over a (B, obs+state) batch; dropout sits between
    the hidden layers and is disabled when ``mask`` is None."""
    if x.ndim != 2 or x.shape[1] != cfg.prior_in:
        raise ValueError(f"prior input must be (B, {cfg.prior_in}), got {x.shape}")
    h = ad.leaky_relu(ad.linear(constant(x), params["prior.l1.w"], params["prior.l1.b"]))
    if mask is not None:
        h = ad.dropout_apply(h, mask.materialize(h.shape, layer=0))
    h = ad.leaky_relu(ad.linear(h, params["prior.l2.w"], params["prior.l2.b"]))
    if mask is not None:
        h = ad.dropout_apply(h, mask.materialize(h.shape, layer=1))
    h = ad.leaky_relu(ad.linear(h, params["prior.l3.w"], params["prior.l3.b"]))
    return ad.gaussian_head(h, params["prior.mu.w"], params["prior.mu.b"],
                            params["prior.sigma.w"], params["prior.sigma.b"])


def decode_t(params: dict, z: Tensor) -> tuple[Tensor, Tensor]:
    """Graph-building decoder: continuous columns raw, discrete columns sigmoid."""
    h = ad.leaky_relu(ad.linear(z, params["dec.l1.w"], params["dec.l1.b"]))
    h = ad.leaky_relu(ad.linear(h, params["dec.l2.w"], params["dec.l2.b"]))
    h = ad.leaky_relu(ad.linear(h, params["dec.l3.w"], params["dec.l3.b"]))
    cont = ad.linear(h, params["dec.cont.w"], params["dec.cont.b"])
    disc = ad.sigmoid(ad.linear(h, params["dec.disc.w"], params["dec.disc.b"]))
    return cont, disc


def encode(params: dict, chunk: np.ndarray, cfg: HsnConfig) -> SkillGaussian:
    mu, sigma = encode_t(params, chunk[None, :, :], cfg)
    return SkillGaussian(mu.data[0], sigma.data[0])


def prior(params: dict, obs: np.ndarray, state: np.ndarray, cfg: HsnConfig,
          mask: DropoutMask | None = None) -> SkillGaussian:
    x = np.concatenate([obs, state])[None, :]
    mu, sigma = prior_t(params, x, cfg, mask)
    return SkillGaussian(mu.data[0], sigma.data[0])


def reparameterize(g: SkillGaussian, noise: np.ndarray) -> np.ndarray:
    return g.mu + g.sigma * noise


def decode(params: dict, z: np.ndarray, cfg: HsnConfig) -> np.ndarray:
    """(H, 9) action chunk with unit quaternion rows and [0,1] grip/mode."""
    cont, disc = decode_t(params, constant(np.asarray(z, dtype=float)[None, :]))
    chunk = assemble_chunk(cont.data[0], disc.data[0], cfg)
    return chunk


def assemble_chunk(cont_row: np.ndarray, disc_row: np.ndarray, cfg: HsnConfig) -> np.ndarray:
    chunk = np.zeros((cfg.horizon, cfg.action_dim))
    cont = cont_row.reshape(cfg.horizon, CONT_COLS)
    disc = disc_row.reshape(cfg.horizon, DISC_COLS)
    chunk[:, :CONT_COLS] = cont
    chunk[:, :3] /= cfg.dpos_scale
    chunk[:, CONT_COLS:] = disc
    for row in chunk:
        norm = np.linalg.norm(row[3:7])
        if norm < 1e-6:
            row[3:7] = (0.0, 0.0, 0.0, 1.0)  # unrecoverable quaternion: identity
        else:
            row[3:7] /= norm
    return chunk


def kl_gaussians(q: SkillGaussian, p: SkillGaussian) -> float:
    """Closed-form KL(q || p) for diagonal Gaussians, summed over dimensions."""
    if q.mu.shape != p.mu.shape:
        raise ValueError("gaussian dimension mismatch")
    var_q, var_p = q.sigma ** 2, p.sigma ** 2
    terms = np.log(p.sigma / q.sigma) + (var_q + (q.mu - p.mu) ** 2) / (2.0 * var_p) - 0.5
    return float(np.sum(terms))


def _kl_t(mu_q: Tensor, sigma_q: Tensor, mu_p: Tensor, sigma_p: Tensor) -> Tensor:
    """Differentiable diagonal-Gaussian KL, mean over batch, sum over dims."""
    log_ratio = ad.sub(ad.log(sigma_p), ad.log(sigma_q))
    var_p2 = ad.scale(ad.square(sigma_p), 2.0)
    quad = ad.div(ad.add(ad.square(sigma_q), ad.square(ad.sub(mu_q, mu_p))), var_p2)
    per_dim = ad.sub(ad.add(log_ratio, quad), constant(np.float64(0.5)))
    batch = mu_q.data.shape[0]
    return ad.scale(ad.tsum(per_dim), 1.0 / batch)


def _align_quat_signs(target: np.ndarray, pred_cont: np.ndarray, cfg: HsnConfig) -> np.ndarray:
    """Flip target quaternion rows whose sign opposes the prediction; q and -q
    encode the same rotation, so the regression should not fight the cover."""
    aligned = target.copy()
    pred = pred_cont.reshape(-1, cfg.horizon, CONT_COLS)
    dots = np.sum(pred[:, :, 3:7] * aligned[:, :, 3:7], axis=2)
    aligned[:, :, 3:7] *= np.where(dots < 0.0, -1.0, 1.0)[:, :, None]
    return aligned


def composed_loss(params: dict, batch: tuple, cfg: HsnConfig, seed: int,
                  step_index: int = 0, beta_kl: float | None = None) -> tuple[Tensor, dict]:
    """Full training loss for one batch; returns (loss tensor, float parts)."""
    obs, states, chunks = batch
    beta = cfg.beta_kl if beta_kl is None else beta_kl
    batch_n = chunks.shape[0]
    rng = np.random.default_rng([seed, step_index])
    noise = rng.standard_normal((batch_n, cfg.latent_dim))

    mu_q, sigma_q = encode_t(params, chunks, cfg)
    z = ad.add(mu_q, ad.mul(sigma_q, constant(noise)))
    pred_cont, pred_disc = decode_t(params, z)

    target = _align_quat_signs(scale_chunk(chunks, cfg), pred_cont.data, cfg)
    target_cont = target[:, :, :CONT_COLS].reshape(batch_n, -1)
    target_disc = target[:, :, CONT_COLS:].reshape(batch_n, -1)
    mse_cont = ad.tmean(ad.square(ad.sub(pred_cont, constant(target_cont))))
    mse_disc = ad.tmean(ad.square(ad.sub(pred_disc, constant(target_disc))))
    n_cont, n_disc = cfg.horizon * CONT_COLS, cfg.horizon * DISC_COLS
    rec = ad.scale(ad.add(ad.scale(mse_cont, n_cont), ad.scale(mse_disc, n_disc)),
                   1.0 / (n_cont + n_disc))

    x = np.concatenate([obs, states], axis=1)
    mask = DropoutMask(seed, ("train", step_index), cfg.dropout_keep)
    mu_p, sigma_p = prior_t(params, x, cfg, mask)
    kl = _kl_t(mu_q, sigma_q, mu_p, sigma_p)

    loss = ad.add(rec, ad.scale(kl, beta))
    parts = {"rec": float(rec.data), "kl": float(kl.data), "loss": float(loss.data)}
    return loss, parts


def train_step(params: dict, opt_state: ad.AdamState, batch: tuple, cfg: HsnConfig,
               seed: int, step_index: int = 0) -> dict:
    ad.zero_grads(params)
    loss, parts = composed_loss(params, batch, cfg, seed, step_index)
    if not math.isfinite(parts["loss"]):
        raise FloatingPointError(f"non-finite training loss at step {step_index}: {parts}")
    loss.backward()
    ad.optimizer_step(params, opt_state, lr=cfg.lr)
    return parts


def save_hsn_checkpoint(path, params: dict, cfg: HsnConfig, extra_meta: dict | None = None):
    meta = {"hsn_config": asdict(cfg)}
    if extra_meta:
        meta.update(extra_meta)
    ad.save_checkpoint(path, params, meta)


def load_hsn_checkpoint(path) -> tuple[dict, HsnConfig, dict]:
    params, meta = ad.load_checkpoint(path)
    if "hsn_config" not in meta:
        raise ValueError(f"{path}: checkpoint missing the network configuration")
    cfg = HsnConfig(**meta["hsn_config"])
    probe = init_params(cfg, seed=0)
    if set(probe) != set(params):
        raise ValueError(f"{path}: checkpoint layers do not match the configuration")
    for name in probe:
        if probe[name].data.shape != params[name].data.shape:
            raise ValueError(f"{path}: shape mismatch for '{name}'")
    return params, cfg, meta
