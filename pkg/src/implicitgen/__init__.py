"""Two-stage generative pipeline for 3D shapes as neural signed distance
fields: an auto-decoder maps latent codes to SDFs, a latent denoising
diffusion model generates and perturbs those codes, marching cubes extracts
surfaces, and point-cloud distribution metrics evaluate the results.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    autodecoder,
    checkpoint,
    config,
    diffusion,
    explore,
    meshing,
    metrics,
    numerics,
    shapes,
)
