"""Encoder-less SDF decoder: shared MLP weights plus one learned latent per
training shape, optimized jointly under a clamped-L1 reconstruction loss with
latent magnitude regularization weighted by 1/lambda^2.

Architecture: 8 fully-connected layers, ReLU activations, the raw
(point, latent) input concatenated onto the fourth layer's input, linear
scalar output. No dropout, no weight normalization, no output tanh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (
    AdamState,
    MlpArch,
    MlpParams,
    adam_step,
    init_params,
    make_rng,
    mlp_backward_batch,
    mlp_forward_batch,
)
from .shapes import SampleBank, balanced_batch

__all__ = [
    "AutodecoderConfig",
    "decoder_arch",
    "decode_sdf",
    "decode_sdf_grid",
    "recon_loss",
    "train_autodecoder",
    "fit_latent",
]


@dataclass
class AutodecoderConfig:
    latent_dim: int = 256
    hidden_dim: int = 512
    num_layers: int = 8
    clamp: float = 0.1  # delta
    reg_lambda: float = 100.0
    lr_net: float = 5e-4
    lr_latent: float = 1e-3
    lr_halve_every: int = 1000  # epochs; 0 disables the step schedule
    epochs: int = 3000
    batch_shapes: int = 20
    points_per_shape: int = 128
    latent_init_std: float = 0.01  # N(0, 0.01) read as a standard deviation
    seed: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "AutodecoderConfig":
        return cls(**d)


def decoder_arch(cfg: AutodecoderConfig) -> MlpArch:
    return MlpArch(
        input_dim=3 + cfg.latent_dim,
        hidden_dim=cfg.hidden_dim,
        num_layers=cfg.num_layers,
        output_dim=1,
        activation="relu",
        skips=(("input", 4),),
        time_embed_dim=0,
    )


def decode_sdf(params: MlpParams, cfg: AutodecoderConfig, z: np.ndarray, p: np.ndarray):
    """Predicted signed distance at ``p`` ((3,) or (N, 3)) for latent ``z``."""
    p = np.asarray(p, dtype=np.float32)
    single = p.ndim == 1
    if single:
        p = p[None, :]
    z = np.asarray(z, dtype=np.float32)
    x = np.concatenate([p, np.broadcast_to(z, (p.shape[0], z.shape[-1]))], axis=1)
    out, _ = mlp_forward_batch(params, decoder_arch(cfg), x, want_tape=False)
    return float(out[0, 0]) if single else out[:, 0]


def decode_sdf_grid(
    params: MlpParams,
    cfg: AutodecoderConfig,
    z: np.ndarray,
    grid_points: np.ndarray,
    chunk: int = 131072,
) -> np.ndarray:
    """Chunked decode for large point sets (keeps activations bounded)."""
    out = np.empty(grid_points.shape[0], dtype=np.float32)
    for s in range(0, grid_points.shape[0], chunk):
        out[s : s + chunk] = decode_sdf(params, cfg, z, grid_points[s : s + chunk])
    return out


def _clamp(x, delta):
    return np.clip(x, -delta, delta)


def recon_loss(
    params: MlpParams,
    cfg: AutodecoderConfig,
    z: np.ndarray,
    points: np.ndarray,
    gt: np.ndarray,
    include_reg: bool = True,
):
    """Clamped-L1 reconstruction loss plus latent regularization.

    loss = mean_b |clamp(pred) - clamp(gt)| + (1/lambda^2) ||z||^2, applied
    once per shape per evaluation. Returns (loss, param grads, z grad). The
    clamp contributes zero gradient where it is active on the prediction.
    """
    dtype = params.dtype  # f32 in training; f64 under gradient checks
    points = np.asarray(points, dtype=dtype)
    gt = np.asarray(gt, dtype=dtype)
    if points.shape[0] == 0:
        raise ValueError("empty batch")
    z = np.asarray(z, dtype=dtype)
    arch = decoder_arch(cfg)
    x = np.concatenate([points, np.broadcast_to(z, (points.shape[0], z.shape[-1]))], axis=1)
    pred, tape = mlp_forward_batch(params, arch, x, want_tape=True)
    pred = pred[:, 0]
    delta = cfg.clamp
    cp = _clamp(pred, delta)
    cg = _clamp(gt, delta)
    n = points.shape[0]
    loss = float(np.mean(np.abs(cp - cg)))
    # subgradient: straight sign inside the clamp band, zero where clamped
    dpred = np.sign(cp - cg) * (np.abs(pred) < delta) / n
    grads, dinput = mlp_backward_batch(tape, dpred[:, None].astype(dtype))
    dz = dinput[:, 3:].sum(axis=0)
    if include_reg:
        w = 1.0 / cfg.reg_lambda**2
        loss += float(w * np.sum(z.astype(np.float64) ** 2))
        dz = dz + 2.0 * w * z
    return loss, grads, dz


def _fused_step(params, cfg, arch, dataset, latents, idx, rng):
    """One minibatch over shapes ``idx``, evaluated as a single batched
    forward/backward. Network gradients are the mean of per-shape losses;
    each latent receives the gradient of its own shape's loss (reconstruction
    mean over its point batch plus the regularizer).
    """
    B = cfg.points_per_shape
    pts_all, d_all = [], []
    for i in idx:
        pts, d, _ = balanced_batch(dataset[i], B, rng)
        pts_all.append(pts)
        d_all.append(d)
    pts = np.concatenate(pts_all)
    gt = np.concatenate(d_all)
    zrows = np.repeat(latents[idx], [len(p) for p in pts_all], axis=0)
    x = np.concatenate([pts, zrows], axis=1)
    pred, tape = mlp_forward_batch(params, arch, x, want_tape=True)
    pred = pred[:, 0]
    delta = cfg.clamp
    cp = _clamp(pred, delta)
    cg = _clamp(gt, delta)
    # per-row subgradient of |clamp(pred) - clamp(gt)|, mean over each
    # shape's rows
    row_counts = np.asarray([len(p) for p in pts_all])
    row_shape = np.repeat(np.arange(len(idx)), row_counts)
    dpred = np.sign(cp - cg) * (np.abs(pred) < delta) / row_counts[row_shape]
    grads, dinput = mlp_backward_batch(tape, dpred[:, None].astype(np.float32))
    w = 1.0 / cfg.reg_lambda**2
    lat_grads = np.zeros_like(latents)
    np.add.at(lat_grads, idx[row_shape], dinput[:, 3:])
    lat_grads[idx] += 2.0 * w * latents[idx]
    net_grads = grads.map(lambda g: g / len(idx))
    recon = np.abs(cp - cg) / row_counts[row_shape]
    per_shape = np.zeros(len(idx))
    np.add.at(per_shape, row_shape, recon)
    per_shape += w * np.sum(latents[idx].astype(np.float64) ** 2, axis=1)
    return float(per_shape.mean()), net_grads, lat_grads


def train_autodecoder(dataset: list[SampleBank], cfg: AutodecoderConfig, rng=None,
                      callback=None):
    """Joint optimization of decoder weights and the per-shape latent table.

    Each epoch visits every shape once in shuffled minibatches of
    ``batch_shapes`` shapes; per-shape point batches are sign-balanced draws
    from the shape's sample bank. Returns (params, latent table (N, latent_dim)
    as f32, per-epoch loss history).
    """
    if not dataset:
        raise ValueError("empty dataset")
    if rng is None:
        rng = make_rng(cfg.seed)
    n = len(dataset)
    arch = decoder_arch(cfg)
    params = init_params(arch, rng, dtype=np.float32, final_scale=0.01)
    latents = rng.normal(scale=cfg.latent_init_std, size=(n, cfg.latent_dim)).astype(
        np.float32
    )
    net_state = AdamState.zeros_like(params)
    lat_params = MlpParams({"Z": latents})
    lat_state = AdamState.zeros_like(lat_params)
    history = []
    for epoch in range(cfg.epochs):
        if cfg.lr_halve_every > 0:
            decay = 0.5 ** (epoch // cfg.lr_halve_every)
        else:
            decay = 1.0
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_shapes):
            idx = order[start : start + cfg.batch_shapes]
            loss, net_grads, lat_grads = _fused_step(
                params, cfg, arch, dataset, latents, idx, rng
            )
            params, net_state = adam_step(params, net_grads, net_state, cfg.lr_net * decay)
            lat_params, lat_state = adam_step(
                lat_params, MlpParams({"Z": lat_grads}), lat_state, cfg.lr_latent * decay
            )
            latents = lat_params.arrays["Z"]
            epoch_loss += loss * len(idx)
        history.append(epoch_loss / n)
        if not np.isfinite(history[-1]):
            raise RuntimeError(f"non-finite autodecoder loss at epoch {epoch}")
        if callback is not None:
            callback(epoch, history[-1])
    return params, latents, history


def fit_latent(
    params: MlpParams,
    cfg: AutodecoderConfig,
    bank: SampleBank,
    iterations: int = 800,
    rng=None,
    lr: float | None = None,
) -> np.ndarray:
    """Optimize a latent for a new shape with the decoder weights frozen."""
    if rng is None:
        rng = make_rng(cfg.seed)
    z = rng.normal(scale=cfg.latent_init_std, size=cfg.latent_dim).astype(np.float32)
    zp = MlpParams({"z": z})
    state = AdamState.zeros_like(zp)
    lr = cfg.lr_latent if lr is None else lr
    initial_loss = None
    for _ in range(iterations):
        pts, d, _ = balanced_batch(bank, cfg.points_per_shape, rng)
        loss, _, dz = recon_loss(params, cfg, zp.arrays["z"], pts, d)
        if initial_loss is None:
            initial_loss = loss
        elif loss > 10.0 * initial_loss:
            raise RuntimeError(f"latent fit diverged: loss {loss} > 10x initial")
        zp, state = adam_step(zp, MlpParams({"z": dz}), state, lr)
    return zp.arrays["z"]
