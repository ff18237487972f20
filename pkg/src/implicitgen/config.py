"""Run configuration: a flat JSON document covering both training stages, the
dataset, the metric protocol, and output options. Unknown keys are rejected
so typos fail loudly. Two profiles ship: ``desk`` (small nets, T=1000,
20-shape dataset) and ``paper-fidelity`` (256-d latents, 512 hidden, T=30000,
lr 1e-5, batch 10).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .autodecoder import AutodecoderConfig
from .diffusion import DenoiserConfig

__all__ = ["RunConfig", "desk_profile", "paper_fidelity_profile", "PROFILES"]


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 0
    # dataset
    n_shapes: int = 20
    n_holdout: int = 30
    bank_size: int = 20000
    # stage one
    autodecoder: AutodecoderConfig = field(default_factory=AutodecoderConfig)
    # stage two
    diffusion: DenoiserConfig = field(default_factory=DenoiserConfig)
    # meshing / metrics protocol
    mesh_resolution: int = 128
    metric_points: int = 256
    metric_set_size: int = 30
    # exploration
    t_noise_default: int = 0  # 0 means T // 15
    # outputs
    out_dir: str = "out"

    def default_t_noise(self) -> int:
        return self.t_noise_default or max(1, self.diffusion.T // 15)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "autodecoder" in d:
            _check_keys(AutodecoderConfig, d["autodecoder"], "autodecoder")
            d["autodecoder"] = AutodecoderConfig.from_dict(d["autodecoder"])
        if "diffusion" in d:
            _check_keys(DenoiserConfig, d["diffusion"], "diffusion")
            d["diffusion"] = DenoiserConfig.from_dict(d["diffusion"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))


def _check_keys(cfg_cls, d: dict, where: str):
    known = {f.name for f in fields(cfg_cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config keys in {where}: {sorted(unknown)}")


def desk_profile(seed: int = 0) -> RunConfig:
    return RunConfig(
        profile="desk",
        seed=seed,
        n_shapes=20,
        n_holdout=30,
        bank_size=20000,
        autodecoder=AutodecoderConfig(
            latent_dim=8,
            hidden_dim=128,
            epochs=3000,
            batch_shapes=4,
            points_per_shape=256,
            lr_net=1e-3,
            lr_latent=2e-3,
            lr_halve_every=1000,
            seed=seed,
        ),
        diffusion=DenoiserConfig(
            latent_dim=8,
            hidden_dim=48,
            time_embed_dim=32,
            T=1000,
            lr=1e-3,
            batch_size=10,
            epochs=2000,
            seed=seed,
        ),
        mesh_resolution=128,
        metric_points=256,
        metric_set_size=30,
    )


def paper_fidelity_profile(seed: int = 0) -> RunConfig:
    return RunConfig(
        profile="paper-fidelity",
        seed=seed,
        n_shapes=20,
        n_holdout=30,
        bank_size=500000,
        autodecoder=AutodecoderConfig(
            latent_dim=256,
            hidden_dim=512,
            epochs=3000,
            points_per_shape=16384,
            reg_lambda=100.0,
            seed=seed,
        ),
        diffusion=DenoiserConfig(
            latent_dim=256,
            hidden_dim=512,
            time_embed_dim=64,
            T=30000,
            lr=1e-5,
            batch_size=10,
            epochs=7000,
            seed=seed,
        ),
        mesh_resolution=128,
        metric_points=2048,
        metric_set_size=500,
    )


PROFILES = {"desk": desk_profile, "paper-fidelity": paper_fidelity_profile}
