"""Shared fixtures: a fully trained miniature pipeline (tiny nets, three
shapes, short chain) that the CLI and HTTP-API tests exercise end to end."""

import json
from pathlib import Path

import pytest

from implicitgen.cli import main

TINY_CONFIG = {
    "profile": "desk",
    "seed": 0,
    "n_shapes": 3,
    "n_holdout": 2,
    "bank_size": 600,
    "mesh_resolution": 32,
    "metric_points": 64,
    "metric_set_size": 3,
    "autodecoder": {
        "latent_dim": 8,
        "hidden_dim": 32,
        "epochs": 400,
        "batch_shapes": 3,
        "points_per_shape": 128,
        "lr_net": 1e-3,
        "lr_latent": 2e-3,
        "lr_halve_every": 200,
        "seed": 0,
    },
    "diffusion": {
        "latent_dim": 8,
        "hidden_dim": 32,
        "time_embed_dim": 16,
        "T": 50,
        "lr": 2e-3,
        "batch_size": 3,
        "epochs": 4000,
        "seed": 0,
    },
}


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory) -> tuple[Path, Path]:
    """Dataset + both training stages in a session temp dir.

    Returns (out_dir, config_path).
    """
    out = tmp_path_factory.mktemp("pipeline")
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps(TINY_CONFIG))
    common = ["--config", str(cfg_path), "--out", str(out)]
    assert main(["dataset", "build", *common]) == 0
    assert main(["train-autodecoder", *common]) == 0
    assert main(["train-diffusion", *common]) == 0
    return out, cfg_path
