"""Command-line pipeline: dataset construction, the two training stages,
generation, exploration, evaluation, latent re-fitting, novelty lookups, and
the HTTP service. Every report path writes figures next to its delimited
output. Errors exit nonzero with a single machine-parseable line on stderr.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .autodecoder import AutodecoderConfig, decode_sdf_grid, fit_latent, train_autodecoder
from .checkpoint import (
    KIND_AUTODECODER,
    KIND_DIFFUSION,
    Checkpoint,
    dataset_fingerprint,
    load_checkpoint,
    save_checkpoint,
)
from .config import PROFILES, RunConfig, desk_profile
from .diffusion import LatentScaler, make_schedule, train_diffusion
from .diffusion import generate as diffusion_generate
from .explore import variations
from .meshing import TriangleMesh, export_obj, import_obj, marching_cubes, sample_surface
from .metrics import evaluate_sets, novelty_nn
from .numerics import make_rng, spawn_rng
from .report import save_distance_matrix_csv, save_loss_curve, save_metrics_report
from .shapes import ShapeSpec, load_bank, procedural_family, sample_bank, save_bank

__all__ = ["main", "cli"]


def _load_config(config_path, seed) -> RunConfig:
    if config_path:
        cfg = RunConfig.from_json(Path(config_path).read_text())
    else:
        cfg = desk_profile()
    if seed is not None:
        cfg.seed = seed
        cfg.autodecoder.seed = seed
        cfg.diffusion.seed = seed
    return cfg


def _common(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="run configuration JSON")(fn)
    fn = click.option("--seed", type=int, default=None, help="override the config seed")(fn)
    fn = click.option("--out", "out_dir", type=click.Path(), default="out",
                      help="output directory")(fn)
    return fn


@click.group()
@click.version_option(__version__)
def cli():
    """Two-stage latent generative pipeline for implicit 3D shapes."""


# -- dataset ---------------------------------------------------------------


@cli.group()
def dataset():
    """Dataset construction commands."""


@dataset.command("build")
@_common
def dataset_build(config_path, seed, out_dir):
    """Build the procedural shape dataset and per-shape SDF sample banks."""
    cfg = _load_config(config_path, seed)
    out = Path(out_dir) / "dataset"
    out.mkdir(parents=True, exist_ok=True)
    rng = make_rng(cfg.seed)
    train = procedural_family(cfg.n_shapes, rng)
    holdout = procedural_family(cfg.n_holdout, spawn_rng(cfg.seed, 101))
    manifest = {
        "train": [{"spec": s.to_dict(), "descriptor": d.tolist()} for s, d in train],
        "holdout": [{"spec": s.to_dict(), "descriptor": d.tolist()} for s, d in holdout],
        "bank_size": cfg.bank_size,
        "seed": cfg.seed,
    }
    (out / "shapes.json").write_text(json.dumps(manifest, indent=2))
    for i, (spec, _) in enumerate(train):
        bank = sample_bank(spec, cfg.bank_size, spawn_rng(cfg.seed, 200 + i),
                           shape_id=f"train-{i:03d}")
        save_bank(bank, out / f"bank_{i:03d}.sdfb")
    click.echo(f"wrote {len(train)} banks and shapes.json to {out}")


def _load_dataset(out_dir):
    out = Path(out_dir) / "dataset"
    manifest = json.loads((out / "shapes.json").read_text())
    train = [
        (ShapeSpec.from_dict(e["spec"]), np.asarray(e["descriptor"], dtype=np.float32))
        for e in manifest["train"]
    ]
    holdout = [
        (ShapeSpec.from_dict(e["spec"]), np.asarray(e["descriptor"], dtype=np.float32))
        for e in manifest["holdout"]
    ]
    banks = [load_bank(out / f"bank_{i:03d}.sdfb") for i in range(len(train))]
    return train, holdout, banks


# -- training --------------------------------------------------------------


@cli.command("train-autodecoder")
@_common
def cmd_train_autodecoder(config_path, seed, out_dir):
    """Stage one: train decoder weights and the latent table."""
    cfg = _load_config(config_path, seed)
    train, _, banks = _load_dataset(out_dir)
    params, latents, history = train_autodecoder(banks, cfg.autodecoder)
    ckpt = Checkpoint(
        kind=KIND_AUTODECODER,
        params=params,
        config=cfg.autodecoder.to_dict(),
        latents=latents,
        dataset_fingerprint=dataset_fingerprint([s for s, _ in train]),
        seed=cfg.seed,
    )
    out = Path(out_dir)
    save_checkpoint(ckpt, out / "autodecoder.ckpt")
    save_loss_curve(history, out / "autodecoder_loss.png", "stage one: reconstruction loss")
    click.echo(f"final loss {history[-1]:.6f}; checkpoint at {out / 'autodecoder.ckpt'}")


@cli.command("train-diffusion")
@click.option("--conditional", is_flag=True, help="condition on shape descriptors")
@_common
def cmd_train_diffusion(conditional, config_path, seed, out_dir):
    """Stage two: train the latent denoiser on the frozen table."""
    cfg = _load_config(config_path, seed)
    out = Path(out_dir)
    ad = load_checkpoint(out / "autodecoder.ckpt", expect_kind=KIND_AUTODECODER)
    dcfg = cfg.diffusion
    dcfg.latent_dim = ad.latents.shape[1]
    conds = None
    if conditional:
        train, _, _ = _load_dataset(out_dir)
        conds = np.stack([d for _, d in train])
        dcfg.cond_dim = conds.shape[1]
    scaler = LatentScaler.fit(ad.latents)
    params, history = train_diffusion(scaler.normalize(ad.latents), conds, dcfg)
    ckpt = Checkpoint(
        kind=KIND_DIFFUSION,
        params=params,
        config=dcfg.to_dict(),
        dataset_fingerprint=ad.dataset_fingerprint,
        seed=cfg.seed,
        extras={"latent_mean": scaler.mean, "latent_std": scaler.std},
    )
    save_checkpoint(ckpt, out / "diffusion.ckpt")
    save_loss_curve(history, out / "diffusion_loss.png", "stage two: denoising loss")
    click.echo(f"final loss {history[-1]:.6f}; checkpoint at {out / 'diffusion.ckpt'}")


# -- inference -------------------------------------------------------------


def _decode_mesh(ad_ckpt, z, resolution):
    acfg = ad_ckpt.autodecoder_config()
    return marching_cubes(
        lambda pts: decode_sdf_grid(ad_ckpt.params, acfg, z, pts),
        resolution=resolution,
    )


@cli.command("generate")
@click.option("--n", type=int, default=5, help="number of shapes")
@_common
def cmd_generate(n, config_path, seed, out_dir):
    """Sample latents with the reverse chain and decode them to OBJ meshes."""
    cfg = _load_config(config_path, seed)
    out = Path(out_dir)
    ad = load_checkpoint(out / "autodecoder.ckpt", expect_kind=KIND_AUTODECODER)
    dn = load_checkpoint(out / "diffusion.ckpt", expect_kind=KIND_DIFFUSION)
    dcfg = dn.denoiser_config()
    schedule = make_schedule(dcfg.T, dcfg.beta_start, dcfg.beta_end, dcfg.scale_betas)
    scaler = dn.latent_scaler()
    latents = scaler.denormalize(
        diffusion_generate(dn.params, dcfg, schedule, n, seed=cfg.seed)
    )
    gen_dir = out / "generated"
    gen_dir.mkdir(parents=True, exist_ok=True)
    np.save(gen_dir / "latents.npy", latents.astype(np.float32))
    for i, z in enumerate(latents):
        mesh = _decode_mesh(ad, z.astype(np.float32), cfg.mesh_resolution)
        (gen_dir / f"shape_{i:03d}.obj").write_bytes(export_obj(mesh))
    click.echo(f"wrote {n} meshes and latents.npy to {gen_dir}")


@cli.command("explore")
@click.option("--source-index", type=int, default=0,
              help="index into the latent table used as the seed shape")
@click.option("--t-noise", type=int, default=None, help="forward steps to add")
@click.option("--k", type=int, default=4, help="number of variations")
@_common
def cmd_explore(source_index, t_noise, k, config_path, seed, out_dir):
    """Perturb a latent and denoise it back into k shape variations."""
    cfg = _load_config(config_path, seed)
    out = Path(out_dir)
    ad = load_checkpoint(out / "autodecoder.ckpt", expect_kind=KIND_AUTODECODER)
    dn = load_checkpoint(out / "diffusion.ckpt", expect_kind=KIND_DIFFUSION)
    dcfg = dn.denoiser_config()
    schedule = make_schedule(dcfg.T, dcfg.beta_start, dcfg.beta_end, dcfg.scale_betas)
    if t_noise is None:
        t_noise = cfg.default_t_noise()
    z0 = ad.latents[source_index].astype(np.float64)
    vars_ = variations(dn.params, dcfg, schedule, z0, t_noise, k, seed=cfg.seed,
                       scaler=dn.latent_scaler())
    exp_dir = out / "explore"
    exp_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"parent_index": source_index, "t_noise": t_noise, "variations": []}
    for i, z in enumerate(vars_):
        mesh = _decode_mesh(ad, z.astype(np.float32), cfg.mesh_resolution)
        name = f"variation_{i:03d}.obj"
        (exp_dir / name).write_bytes(export_obj(mesh))
        manifest["variations"].append({"file": name, "seed": cfg.seed, "chain": i})
    (exp_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    click.echo(f"wrote {k} variations to {exp_dir}")


@cli.command("reconstruct")
@click.option("--mesh", "mesh_path", type=click.Path(exists=True), default=None,
              help="OBJ mesh to re-fit (defaults to a held-out procedural shape)")
@click.option("--holdout-index", type=int, default=0)
@click.option("--iterations", type=int, default=800)
@_common
def cmd_reconstruct(mesh_path, holdout_index, iterations, config_path, seed, out_dir):
    """Fit a latent for an unseen shape with frozen decoder weights."""
    cfg = _load_config(config_path, seed)
    out = Path(out_dir)
    ad = load_checkpoint(out / "autodecoder.ckpt", expect_kind=KIND_AUTODECODER)
    acfg = ad.autodecoder_config()
    if mesh_path:
        from .shapes import SampleBank, mesh_sdf
        from .numerics import make_rng as _mk

        mesh = import_obj(Path(mesh_path).read_bytes())
        rng = make_rng(cfg.seed)
        cloud = sample_surface(mesh, cfg.bank_size, rng)
        noise = rng.normal(scale=np.sqrt(2.5e-3), size=cloud.points.shape)
        pts = cloud.points + noise
        d = mesh_sdf(mesh.vertices, mesh.triangles, pts)
        bank = SampleBank(points=pts.astype(np.float32),
                          distances=np.asarray(d, dtype=np.float32),
                          tags=np.zeros(len(pts), dtype=np.uint8), shape_id="user-mesh")
    else:
        _, holdout, _ = _load_dataset(out_dir)
        spec, _ = holdout[holdout_index]
        bank = sample_bank(spec, cfg.bank_size, spawn_rng(cfg.seed, 300 + holdout_index),
                           shape_id=f"holdout-{holdout_index:03d}")
    z = fit_latent(ad.params, acfg, bank, iterations=iterations)
    rec_dir = out / "reconstruct"
    rec_dir.mkdir(parents=True, exist_ok=True)
    np.save(rec_dir / "latent.npy", z)
    mesh = _decode_mesh(ad, z, cfg.mesh_resolution)
    (rec_dir / "reconstruction.obj").write_bytes(export_obj(mesh))
    click.echo(f"wrote reconstruction to {rec_dir}")


@cli.command("evaluate")
@click.option("--gen", "gen_dir", type=click.Path(exists=True), required=True,
              help="directory of generated OBJ meshes")
@click.option("--ref", "ref_dir", type=click.Path(exists=True), required=True,
              help="directory of reference OBJ meshes")
@_common
def cmd_evaluate(gen_dir, ref_dir, config_path, seed, out_dir):
    """MMD/COV/1-NNA report between two mesh directories."""
    cfg = _load_config(config_path, seed)

    def load_clouds(d):
        # fresh stream per directory: identical mesh sets yield identical
        # clouds regardless of which side they are loaded on
        rng = make_rng(cfg.seed)
        files = sorted(Path(d).glob("*.obj"))
        if not files:
            raise click.ClickException(f"no OBJ files in {d}")
        clouds = []
        for f in files:
            mesh = import_obj(f.read_bytes())
            clouds.append(sample_surface(mesh, cfg.metric_points, rng))
        return clouds

    Sg = load_clouds(gen_dir)
    St = load_clouds(ref_dir)
    report = evaluate_sets(Sg, St)
    out = Path(out_dir) / "evaluation"
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    payload["config"] = cfg.to_dict()
    (out / "metrics.json").write_text(json.dumps(payload, indent=2))
    for name, mat in report.distance_matrices.items():
        save_distance_matrix_csv(mat, out / f"distances_{name}.csv")
    save_metrics_report(report, out)
    click.echo(json.dumps(report.to_dict()))


@cli.command("novelty")
@click.option("--latents", "latents_path", type=click.Path(exists=True), required=True,
              help="npy file of query latents (from generate)")
@click.option("--k", type=int, default=3)
@_common
def cmd_novelty(latents_path, k, config_path, seed, out_dir):
    """Cosine-similarity nearest training latents for each query latent."""
    out = Path(out_dir)
    ad = load_checkpoint(out / "autodecoder.ckpt", expect_kind=KIND_AUTODECODER)
    queries = np.load(latents_path)
    rows = []
    for i, z in enumerate(np.atleast_2d(queries)):
        rows.append({"query": i, "neighbors": [
            {"index": j, "cosine": s} for j, s in novelty_nn(z, ad.latents, k=k)
        ]})
    nov_dir = out / "novelty"
    nov_dir.mkdir(parents=True, exist_ok=True)
    (nov_dir / "novelty.json").write_text(json.dumps(rows, indent=2))
    click.echo(json.dumps(rows))


@cli.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
@click.option("--ui", "ui_dir", type=click.Path(), default="frontend/dist",
              help="built UI directory to serve at / (skipped when absent)")
@_common
def cmd_serve(host, port, ui_dir, config_path, seed, out_dir):
    """Serve the exploration HTTP API (and the UI, when built)."""
    import uvicorn

    from .server import create_app

    cfg = _load_config(config_path, seed)
    app = create_app(Path(out_dir), cfg, frontend_dir=Path(ui_dir))
    uvicorn.run(app, host=host, port=port, log_level="warning")


@cli.group("config")
def config_group():
    """Configuration helpers."""


@config_group.command("print-defaults")
@click.option("--profile", type=click.Choice(sorted(PROFILES)), default="desk")
@click.option("--seed", type=int, default=None)
def config_print_defaults(profile, seed):
    """Print the full default configuration for a profile."""
    cfg = PROFILES[profile](seed or 0)
    click.echo(cfg.to_json(), nl=False)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as e:
        print(f"error: {e.format_message()}", file=sys.stderr)
        return e.exit_code or 1
    except click.exceptions.Abort:
        print("error: aborted", file=sys.stderr)
        return 130
    except SystemExit as e:
        return int(e.code or 0)
    except Exception as e:  # single-line machine-parseable failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
