"""HTTP/JSON API behind the exploration UI.

Endpoints:
  POST /sessions                      create a session from a table index or latent
  GET  /sessions/{id}                 history tree
  POST /sessions/{id}/variations      {t_noise, k, seed} -> variation node ids
  POST /sessions/{id}/seed            {node_id} -> rebase the session
  GET  /meshes/{id}                   OBJ bytes for a node's decoded mesh

Model checkpoints load once at startup and are never mutated; meshes are
extracted lazily and cached by (checkpoint fingerprint, latent hash,
resolution).
"""

from __future__ import annotations

import hashlib
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from .autodecoder import decode_sdf_grid
from .checkpoint import KIND_AUTODECODER, KIND_DIFFUSION, load_checkpoint
from .config import RunConfig, desk_profile
from .diffusion import make_schedule
from .explore import ExploreSession, variations
from .meshing import export_obj, marching_cubes

__all__ = ["create_app"]


class CreateSession(BaseModel):
    source_index: int | None = None
    latent: list[float] | None = None


class VariationsRequest(BaseModel):
    t_noise: int
    k: int = Field(default=4)
    seed: int = 0


class RebaseRequest(BaseModel):
    node_id: str


class ModelBundle:
    def __init__(self, out_dir: Path, cfg: RunConfig, mesh_resolution: int | None = None):
        self.cfg = cfg
        self.ad = load_checkpoint(out_dir / "autodecoder.ckpt", expect_kind=KIND_AUTODECODER)
        self.dn = load_checkpoint(out_dir / "diffusion.ckpt", expect_kind=KIND_DIFFUSION)
        self.acfg = self.ad.autodecoder_config()
        self.dcfg = self.dn.denoiser_config()
        self.schedule = make_schedule(
            self.dcfg.T, self.dcfg.beta_start, self.dcfg.beta_end, self.dcfg.scale_betas
        )
        self.resolution = mesh_resolution or cfg.mesh_resolution
        self.fingerprint = self.ad.dataset_fingerprint
        self.scaler = self.dn.latent_scaler()

    def decode(self, z: np.ndarray):
        return marching_cubes(
            lambda pts: decode_sdf_grid(self.ad.params, self.acfg, z.astype(np.float32), pts),
            resolution=self.resolution,
        )


def create_app(out_dir: Path, cfg: RunConfig | None = None,
               mesh_resolution: int | None = None, frontend_dir: Path | None = None) -> FastAPI:
    cfg = cfg or desk_profile()
    app = FastAPI(title="shape exploration API")
    state = {"bundle": None}
    try:
        state["bundle"] = ModelBundle(Path(out_dir), cfg, mesh_resolution)
    except FileNotFoundError:
        pass  # surfaced as 503 per request
    sessions: dict[str, ExploreSession] = {}
    locks: dict[str, threading.Lock] = {}
    mesh_cache: dict[str, bytes] = {}
    node_latents: dict[str, np.ndarray] = {}

    def bundle() -> ModelBundle:
        b = state["bundle"]
        if b is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        return b

    def latent_key(z: np.ndarray) -> str:
        b = bundle()
        h = hashlib.sha256(np.ascontiguousarray(z, dtype=np.float64).tobytes())
        return f"{b.fingerprint}:{h.hexdigest()[:24]}:{b.resolution}"

    def mesh_bytes(node_id: str) -> bytes:
        z = node_latents.get(node_id)
        if z is None:
            raise HTTPException(status_code=404, detail=f"unknown mesh {node_id}")
        key = latent_key(z)
        if key not in mesh_cache:
            mesh_cache[key] = export_obj(bundle().decode(z))
        return mesh_cache[key]

    @app.post("/sessions")
    def create_session(req: CreateSession):
        b = bundle()
        if req.latent is not None:
            z = np.asarray(req.latent, dtype=np.float64)
            if z.shape != (b.dcfg.latent_dim,):
                raise HTTPException(status_code=422, detail="latent has wrong width")
        elif req.source_index is not None:
            if b.ad.latents is None or not (0 <= req.source_index < len(b.ad.latents)):
                raise HTTPException(status_code=404, detail="source index out of range")
            z = b.ad.latents[req.source_index].astype(np.float64)
        else:
            raise HTTPException(status_code=422, detail="need source_index or latent")
        session = ExploreSession.start(z)
        sessions[session.session_id] = session
        locks[session.session_id] = threading.Lock()
        node_latents[session.root_id] = z
        return {"session_id": session.session_id, "root_id": session.root_id}

    def get_session(session_id: str) -> ExploreSession:
        s = sessions.get(session_id)
        if s is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return s

    @app.get("/sessions/{session_id}")
    def session_history(session_id: str):
        return get_session(session_id).history()

    @app.post("/sessions/{session_id}/variations")
    def session_variations(session_id: str, req: VariationsRequest):
        b = bundle()
        s = get_session(session_id)
        if not (0 <= req.t_noise <= b.schedule.T):
            raise HTTPException(
                status_code=422, detail=f"t_noise must lie in [0, {b.schedule.T}]"
            )
        if req.k < 1 or req.k > 64:
            raise HTTPException(status_code=422, detail="k must lie in [1, 64]")
        with locks[session_id]:
            z0 = node_latents[s.current_id]
            latents = variations(
                b.dn.params, b.dcfg, b.schedule, z0, req.t_noise, req.k,
                seed=req.seed, scaler=b.scaler,
            )
            ids = s.add_variations(latents, req.t_noise, req.seed)
            for nid, z in zip(ids, latents):
                node_latents[nid] = np.asarray(z, dtype=np.float64)
        return {"variation_ids": ids, "t_noise": req.t_noise, "seed": req.seed}

    @app.post("/sessions/{session_id}/seed")
    def session_rebase(session_id: str, req: RebaseRequest):
        s = get_session(session_id)
        with locks[session_id]:
            try:
                s.rebase(req.node_id)
            except KeyError:
                raise HTTPException(status_code=404, detail=f"unknown node {req.node_id}")
        return {"current_id": s.current_id}

    @app.get("/meshes/{node_id}")
    def get_mesh(node_id: str):
        return Response(content=mesh_bytes(node_id), media_type="model/obj")

    @app.get("/meta")
    def meta():
        b = bundle()
        return {
            "latent_dim": b.dcfg.latent_dim,
            "T": b.schedule.T,
            "default_t_noise": cfg.default_t_noise(),
            "mesh_resolution": b.resolution,
            "n_table_latents": 0 if b.ad.latents is None else len(b.ad.latents),
        }

    if frontend_dir is not None and Path(frontend_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="ui")

    return app
