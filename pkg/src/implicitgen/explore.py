"""Guided shape exploration: partially noise a latent, denoise it back, and
collect the variations. t_noise = 0 is the identity; t_noise = T forgets the
source entirely and matches unconditional generation. Sessions track the
pick-and-renoise history as a tree.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field

import numpy as np

from .diffusion import DenoiserConfig, LatentScaler, VarianceSchedule, generate
from .numerics import MlpParams, spawn_rng

__all__ = ["ExploreRequest", "ExploreNode", "ExploreSession", "perturb", "variations"]


def perturb(schedule: VarianceSchedule, z0: np.ndarray, t_noise: int,
            rng: np.random.Generator) -> np.ndarray:
    """Forward-noise ``z0`` by ``t_noise`` steps; 0 returns it unchanged."""
    if not (0 <= t_noise <= schedule.T):
        raise ValueError(f"t_noise must lie in [0, {schedule.T}]")
    z0 = np.asarray(z0, dtype=np.float64)
    if t_noise == 0:
        return z0.copy()
    ab = schedule.alpha_bar[t_noise - 1]
    eps = rng.standard_normal(z0.shape)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def variations(
    params: MlpParams,
    cfg: DenoiserConfig,
    schedule: VarianceSchedule,
    z0: np.ndarray,
    t_noise: int,
    k: int,
    seed: int = 0,
    cond: np.ndarray | None = None,
    scaler: LatentScaler | None = None,
) -> np.ndarray:
    """k independent perturb-then-denoise chains from ``z0``.

    Each chain owns the RNG stream derived from (seed, chain index); the
    reverse chain re-enters at t = t_noise, so t_noise = 0 returns k copies
    (bit-identical, even with a scaler). When a ``scaler`` is given, ``z0`` is
    in decoder latent space and the noise/denoise round trip runs at the unit
    scale the denoiser was trained at.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not (0 <= t_noise <= schedule.T):
        raise ValueError(f"t_noise must lie in [0, {schedule.T}]")
    z0 = np.asarray(z0, dtype=np.float64)
    if t_noise == 0:
        return np.tile(z0, (k, 1))
    zn = z0 if scaler is None else scaler.normalize(z0)
    # the forward-noise streams are keyed apart from the reverse-chain streams
    # inside generate(), so the injected noise and the reverse noise draws are
    # independent
    starts = np.stack(
        [perturb(schedule, zn, t_noise, spawn_rng(seed, 1, i)) for i in range(k)]
    )
    out = generate(
        params, cfg, schedule, k, cond=cond, seed=seed, z_start=starts, t_start=t_noise
    )
    return out if scaler is None else scaler.denormalize(out)


@dataclass
class ExploreNode:
    node_id: str
    latent: np.ndarray
    parent_id: str | None
    t_noise: int
    seed: int


@dataclass
class ExploreSession:
    """History tree of a pick-and-renoise exploration run."""

    session_id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])
    nodes: dict = field(default_factory=dict)
    root_id: str | None = None
    current_id: str | None = None

    @classmethod
    def start(cls, latent: np.ndarray) -> "ExploreSession":
        s = cls()
        node = ExploreNode(uuid.uuid4().hex[:12], np.asarray(latent, dtype=np.float64),
                           None, 0, 0)
        s.nodes[node.node_id] = node
        s.root_id = s.current_id = node.node_id
        return s

    def add_variations(self, latents: np.ndarray, t_noise: int, seed: int) -> list[str]:
        ids = []
        for z in latents:
            node = ExploreNode(uuid.uuid4().hex[:12], np.asarray(z), self.current_id,
                               t_noise, seed)
            self.nodes[node.node_id] = node
            ids.append(node.node_id)
        return ids

    def rebase(self, node_id: str) -> None:
        if node_id not in self.nodes:
            raise KeyError(f"unknown node {node_id}")
        self.current_id = node_id

    def history(self) -> dict:
        return {
            "session_id": self.session_id,
            "root_id": self.root_id,
            "current_id": self.current_id,
            "nodes": [
                {
                    "id": n.node_id,
                    "parent": n.parent_id,
                    "t_noise": n.t_noise,
                    "seed": n.seed,
                }
                for n in self.nodes.values()
            ],
        }
