"""Denoising diffusion over shape latents.

A linear variance schedule drives a fixed Gaussian forward process with the
usual closed form; the learned reverse process is ancestral sampling with the
posterior variance, using an 8-layer softplus MLP denoiser with layer-1 skip
concatenations at layers 3/5/7 and per-layer sinusoidal time-embedding
injection. Conditioning is plain concatenation of a condition vector to the
noisy latent at the network input; width 0 reduces bit-exactly to the
unconditional path.

Two prediction targets are supported: the standard unit-Gaussian noise
(default) and the cumulative displacement z_t - z_0 behind the
``target="total-noise"`` flag, each paired with the matching posterior-mean
formula.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    AdamState,
    MlpArch,
    MlpParams,
    ShapeError,
    adam_step,
    init_params,
    make_rng,
    mlp_backward_batch,
    mlp_forward_batch,
    spawn_rng,
)

__all__ = [
    "VarianceSchedule",
    "DenoiserConfig",
    "LatentScaler",
    "make_schedule",
    "forward_sample",
    "time_embedding",
    "denoiser_arch",
    "denoiser_eval",
    "train_diffusion",
    "reverse_step",
    "generate",
]

TARGET_EPSILON = "epsilon"
TARGET_TOTAL_NOISE = "total-noise"


@dataclass(frozen=True)
class LatentScaler:
    """Per-coordinate affine map between decoder latent space and the unit
    scale the diffusion model trains at.

    Auto-decoder latent tables come out much smaller than the unit-variance
    noise the forward process injects, which makes noise prediction needlessly
    hard; standardizing the table before training and undoing the map after
    sampling removes that mismatch. The statistics are frozen at training time
    and persisted alongside the denoiser weights.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, latent_table: np.ndarray) -> "LatentScaler":
        table = np.asarray(latent_table, dtype=np.float64)
        std = table.std(axis=0)
        # guard degenerate coordinates (constant across the table)
        std = np.where(std > 1e-8, std, 1.0)
        return cls(mean=table.mean(axis=0), std=std)

    @classmethod
    def identity(cls, dim: int) -> "LatentScaler":
        return cls(mean=np.zeros(dim), std=np.ones(dim))

    def normalize(self, z: np.ndarray) -> np.ndarray:
        return (np.asarray(z, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


@dataclass(frozen=True)
class VarianceSchedule:
    beta: np.ndarray  # (T,) index t-1 holds beta_t
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma2: np.ndarray

    @property
    def T(self) -> int:
        return self.beta.shape[0]

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar_t with the alpha_bar_0 = 1 convention."""
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02,
                  scale_to_reference: bool = True) -> VarianceSchedule:
    """Linear beta schedule. With ``scale_to_reference`` the endpoints are
    scaled by 1000/T so the total signal decay matches the common 1000-step
    schedule at any T.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("require 0 < beta_start <= beta_end < 1")
    if scale_to_reference:
        s = 1000.0 / T
        beta_start, beta_end = beta_start * s, beta_end * s
        if beta_end >= 1.0:
            raise ValueError("scaled beta_end leaves (0, 1); pass explicit endpoints")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    sigma2 = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
    return VarianceSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma2=sigma2)


def forward_sample(schedule: VarianceSchedule, z0: np.ndarray, t, rng: np.random.Generator):
    """Closed-form q(z^t | z^0) draw. ``t`` may be an int or an (B,) array when
    z0 is (B, D). Returns (z_t, eps) where eps is the injected unit noise.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > schedule.T):
        raise ValueError(f"t must lie in [1, {schedule.T}]")
    ab = schedule.alpha_bar[t_arr - 1]
    if z0.ndim == 2 and np.ndim(ab) > 0:
        ab = np.asarray(ab).reshape(-1, 1)
    eps = rng.standard_normal(z0.shape)
    zt = np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps
    return zt, eps


def time_embedding(t, width: int) -> np.ndarray:
    """Transformer-style sinusoidal embedding of integer steps.

    Layout is interleaved (sin, cos) pairs: entry 2k is sin(t / 10000^(2k/width)),
    entry 2k+1 the matching cos. ``t`` may be scalar or (B,).
    """
    if width % 2 != 0:
        raise ValueError("embedding width must be even")
    t = np.asarray(t, dtype=np.float64)
    k = np.arange(width // 2)
    freq = 1.0 / (10000.0 ** (2.0 * k / width))
    ang = t[..., None] * freq
    emb = np.empty(t.shape + (width,), dtype=np.float64)
    emb[..., 0::2] = np.sin(ang)
    emb[..., 1::2] = np.cos(ang)
    return emb


@dataclass
class DenoiserConfig:
    latent_dim: int = 256
    hidden_dim: int = 512
    num_layers: int = 8
    time_embed_dim: int = 64
    cond_dim: int = 0
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    scale_betas: bool = True
    lr: float = 1e-4
    batch_size: int = 10
    epochs: int = 1000
    target: str = TARGET_EPSILON
    seed: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**d)


def denoiser_arch(cfg: DenoiserConfig) -> MlpArch:
    return MlpArch(
        input_dim=cfg.latent_dim + cfg.cond_dim,
        hidden_dim=cfg.hidden_dim,
        num_layers=cfg.num_layers,
        output_dim=cfg.latent_dim,
        activation="softplus",
        skips=(("layer1", 3), ("layer1", 5), ("layer1", 7)),
        time_embed_dim=cfg.time_embed_dim,
    )


def _denoiser_input(z_t: np.ndarray, cond: np.ndarray | None) -> np.ndarray:
    if cond is None or (hasattr(cond, "shape") and np.asarray(cond).shape[-1] == 0):
        return z_t
    cond = np.asarray(cond)
    if cond.ndim == 1:
        cond = np.broadcast_to(cond, (z_t.shape[0], cond.shape[0]))
    return np.concatenate([z_t, cond], axis=1)


def denoiser_eval(
    params: MlpParams,
    cfg: DenoiserConfig,
    z_t: np.ndarray,
    t,
    cond: np.ndarray | None = None,
    want_tape: bool = False,
):
    """Predicted noise for (B, latent_dim) inputs (or a single vector).

    Returns the prediction, or (prediction, tape) when ``want_tape``.
    """
    z_t = np.asarray(z_t)
    single = z_t.ndim == 1
    if single:
        z_t = z_t[None, :]
        if cond is not None and np.asarray(cond).ndim == 1:
            cond = np.asarray(cond)[None, :]
    arch = denoiser_arch(cfg)
    x = _denoiser_input(z_t, cond)
    if x.shape[1] != arch.input_dim:
        raise ShapeError(
            f"denoiser input width {x.shape[1]} != {arch.input_dim} "
            f"(latent {cfg.latent_dim} + cond {cfg.cond_dim})"
        )
    temb = time_embedding(np.broadcast_to(np.asarray(t), (z_t.shape[0],)), cfg.time_embed_dim)
    out, tape = mlp_forward_batch(params, arch, x, temb, want_tape=want_tape)
    if single:
        out = out[0]
    return (out, tape) if want_tape else out


def train_diffusion(
    latent_table: np.ndarray,
    conds: np.ndarray | None,
    cfg: DenoiserConfig,
    rng: np.random.Generator | None = None,
    callback=None,
):
    """Train the denoiser on a frozen latent table.

    ``latent_table`` is (N, latent_dim); ``conds`` is (N, cond_dim) or None.
    One epoch draws every latent once in shuffled minibatches. Returns
    (params, per-epoch mean loss history).
    """
    if rng is None:
        rng = make_rng(cfg.seed)
    Z = np.asarray(latent_table, dtype=np.float64)
    n = Z.shape[0]
    if conds is not None:
        conds = np.asarray(conds, dtype=np.float64)
        if conds.shape != (n, cfg.cond_dim):
            raise ShapeError(f"conds: expected ({n}, {cfg.cond_dim}), got {conds.shape}")
    elif cfg.cond_dim != 0:
        raise ShapeError("cfg.cond_dim > 0 but no condition vectors given")

    schedule = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end, cfg.scale_betas)
    arch = denoiser_arch(cfg)
    params = init_params(arch, rng, dtype=np.float32, final_scale=0.01)
    state = AdamState.zeros_like(params)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            z0 = Z[idx]
            t = rng.integers(1, schedule.T + 1, size=len(idx))
            zt, eps = forward_sample(schedule, z0, t, rng)
            if cfg.target == TARGET_TOTAL_NOISE:
                target = zt - z0
            else:
                target = eps
            x = _denoiser_input(zt, None if conds is None else conds[idx]).astype(np.float32)
            temb = time_embedding(t, cfg.time_embed_dim).astype(np.float32)
            pred, tape = mlp_forward_batch(params, arch, x, temb, want_tape=True)
            resid = pred - target.astype(np.float32)
            loss = float(np.mean(np.sum(resid**2, axis=1)))
            # d/dpred of mean_b sum_d resid^2
            upstream = (2.0 / len(idx)) * resid
            grads, _ = mlp_backward_batch(tape, upstream.astype(np.float32))
            params, state = adam_step(params, grads, state, cfg.lr)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if not np.isfinite(history[-1]):
            raise RuntimeError(f"non-finite diffusion loss at epoch {epoch}")
        if callback is not None:
            callback(epoch, history[-1])
    return params, history


def _posterior_mean(schedule: VarianceSchedule, z_t, t: int, pred, target: str):
    a_t = schedule.alpha[t - 1]
    ab_t = schedule.alpha_bar[t - 1]
    if target == TARGET_TOTAL_NOISE:
        # pred approximates z_t - z_0, so the implied z_0 is z_t - pred;
        # the posterior mean in terms of z_0 is
        # (sqrt(ab_{t-1}) beta_t z_0 + sqrt(a_t)(1 - ab_{t-1}) z_t) / (1 - ab_t)
        ab_prev = schedule.alpha_bar_at(t - 1)
        beta_t = schedule.beta[t - 1]
        z0_hat = z_t - pred
        return (
            np.sqrt(ab_prev) * beta_t * z0_hat
            + np.sqrt(a_t) * (1.0 - ab_prev) * z_t
        ) / (1.0 - ab_t)
    return (z_t - (1.0 - a_t) / np.sqrt(1.0 - ab_t) * pred) / np.sqrt(a_t)


def reverse_step(
    params: MlpParams,
    cfg: DenoiserConfig,
    schedule: VarianceSchedule,
    z_t: np.ndarray,
    t: int,
    cond: np.ndarray | None,
    rng: np.random.Generator,
    eps_fn=None,
) -> np.ndarray:
    """One ancestral step z_t -> z_{t-1}; deterministic at t = 1 (sigma_1 = 0).

    ``eps_fn(z_t, t)`` overrides the network prediction (analytic oracles).
    """
    if not (1 <= t <= schedule.T):
        raise ValueError(f"t must lie in [1, {schedule.T}]")
    z_t = np.asarray(z_t, dtype=np.float64)
    if eps_fn is not None:
        pred = eps_fn(z_t, t)
    else:
        pred = denoiser_eval(params, cfg, z_t.astype(np.float32), t, cond).astype(np.float64)
    mean = _posterior_mean(schedule, z_t, t, pred, cfg.target)
    sigma = np.sqrt(schedule.sigma2[t - 1])
    if sigma == 0.0:
        return mean
    return mean + sigma * rng.standard_normal(z_t.shape)


def generate(
    params: MlpParams,
    cfg: DenoiserConfig,
    schedule: VarianceSchedule,
    n: int,
    cond: np.ndarray | None = None,
    seed: int = 0,
    z_start: np.ndarray | None = None,
    t_start: int | None = None,
) -> np.ndarray:
    """Sample ``n`` latents by running the reverse chain from t_start (default
    T) down to 1. Chains are batched but each owns its RNG stream derived from
    (seed, chain index), so results are independent of batching.
    """
    t_start = schedule.T if t_start is None else t_start
    rngs = [spawn_rng(seed, i) for i in range(n)]
    if z_start is None:
        z = np.stack([r.standard_normal(cfg.latent_dim) for r in rngs])
    else:
        z = np.array(z_start, dtype=np.float64)
        if z.ndim == 1:
            z = np.broadcast_to(z, (n, cfg.latent_dim)).copy()
    if cond is not None:
        cond = np.asarray(cond)
        if cond.ndim == 1:
            cond = np.broadcast_to(cond, (n, cond.shape[0]))
    for t in range(t_start, 0, -1):
        pred = denoiser_eval(params, cfg, z.astype(np.float32), t, cond).astype(np.float64)
        mean = _posterior_mean(schedule, z, t, pred, cfg.target)
        sigma = np.sqrt(schedule.sigma2[t - 1])
        if sigma == 0.0:
            z = mean
        else:
            noise = np.stack([r.standard_normal(cfg.latent_dim) for r in rngs])
            z = mean + sigma * noise
    return z
