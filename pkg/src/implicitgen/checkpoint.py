"""Model checkpoints: magic + version, a JSON header describing the model
kind, architecture, schedule, training config echo, dataset fingerprint and
seed, followed by little-endian f32 parameter blobs in sorted key order and a
trailing CRC32 over everything before it.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .autodecoder import AutodecoderConfig
from .diffusion import DenoiserConfig, LatentScaler
from .numerics import MlpParams

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint", "CheckpointError",
           "dataset_fingerprint"]

MAGIC = b"3DLDM"
VERSION = 1

KIND_AUTODECODER = "autodecoder"
KIND_DIFFUSION = "diffusion"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str  # autodecoder | diffusion
    params: MlpParams
    config: dict  # AutodecoderConfig / DenoiserConfig as dict
    latents: np.ndarray | None = None  # latent table (autodecoder only)
    dataset_fingerprint: str = ""
    seed: int = 0
    # auxiliary named arrays outside the MLP parameter set, e.g. the latent
    # standardization statistics a diffusion checkpoint needs at sampling time
    extras: dict = field(default_factory=dict)

    def autodecoder_config(self) -> AutodecoderConfig:
        if self.kind != KIND_AUTODECODER:
            raise CheckpointError(f"expected autodecoder checkpoint, got {self.kind}")
        return AutodecoderConfig.from_dict(self.config)

    def denoiser_config(self) -> DenoiserConfig:
        if self.kind != KIND_DIFFUSION:
            raise CheckpointError(f"expected diffusion checkpoint, got {self.kind}")
        return DenoiserConfig.from_dict(self.config)

    def latent_scaler(self) -> LatentScaler:
        """Latent standardization stats stored with a diffusion checkpoint, or
        the identity map for checkpoints trained directly at unit scale."""
        if "latent_mean" in self.extras and "latent_std" in self.extras:
            return LatentScaler(
                mean=np.asarray(self.extras["latent_mean"], dtype=np.float64),
                std=np.asarray(self.extras["latent_std"], dtype=np.float64),
            )
        return LatentScaler.identity(self.denoiser_config().latent_dim)


def dataset_fingerprint(specs) -> str:
    blob = json.dumps([s.to_dict() for s in specs], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    keys = sorted(ckpt.params.arrays.keys())
    header = {
        "kind": ckpt.kind,
        "config": ckpt.config,
        "dataset_fingerprint": ckpt.dataset_fingerprint,
        "seed": ckpt.seed,
        "params": [
            {
                "key": k,
                "shape": list(ckpt.params.arrays[k].shape),
                "crc32": zlib.crc32(
                    np.ascontiguousarray(ckpt.params.arrays[k], dtype="<f4").tobytes()
                ),
            }
            for k in keys
        ],
        "has_latents": ckpt.latents is not None,
        "latents_shape": list(ckpt.latents.shape) if ckpt.latents is not None else None,
        "extras": [
            {"key": k, "shape": list(np.asarray(ckpt.extras[k]).shape)}
            for k in sorted(ckpt.extras)
        ],
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(hdr)))
    buf.write(hdr)
    for k in keys:
        buf.write(np.ascontiguousarray(ckpt.params.arrays[k], dtype="<f4").tobytes())
    if ckpt.latents is not None:
        buf.write(np.ascontiguousarray(ckpt.latents, dtype="<f4").tobytes())
    for k in sorted(ckpt.extras):
        buf.write(np.ascontiguousarray(ckpt.extras[k], dtype="<f4").tobytes())
    payload = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_checkpoint(path, expect_kind: str | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 12:
        raise CheckpointError("truncated checkpoint file")
    payload, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    actual = zlib.crc32(payload)
    corrupt = actual != crc
    if payload[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hdr_len = struct.unpack("<II", payload[5:13])
    if version != VERSION:
        raise CheckpointError(
            f"checkpoint version {version} is not supported (expected {VERSION}); "
            "no silent migration is attempted"
        )
    off = 13
    try:
        header = json.loads(payload[off : off + hdr_len])
    except ValueError:
        raise CheckpointError(
            f"checksum mismatch (stored {crc:#010x}, computed {actual:#010x}) "
            "and header unreadable"
        ) from None
    off += hdr_len
    if corrupt:
        # narrow the diagnostic down to the offending blob via per-blob CRCs
        blob_off = off
        for entry in header.get("params", []):
            nbytes = int(np.prod(entry["shape"]) if entry["shape"] else 1) * 4
            blob = payload[blob_off : blob_off + nbytes]
            if "crc32" in entry and zlib.crc32(blob) != entry["crc32"]:
                raise CheckpointError(
                    f"checksum mismatch in blob {entry['key']!r} at byte offset "
                    f"{blob_off}..{blob_off + nbytes}"
                )
            blob_off += nbytes
        raise CheckpointError(
            f"checksum mismatch: stored {crc:#010x}, computed {actual:#010x}"
        )
    if expect_kind is not None and header["kind"] != expect_kind:
        raise CheckpointError(
            f"checkpoint kind mismatch: expected {expect_kind}, got {header['kind']}"
        )
    arrays = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if off + nbytes > len(payload):
            raise CheckpointError(f"blob for {entry['key']} overruns the file")
        arrays[entry["key"]] = (
            np.frombuffer(payload, dtype="<f4", count=count, offset=off)
            .reshape(shape)
            .copy()
        )
        off += nbytes
    latents = None
    if header.get("has_latents"):
        shape = tuple(header["latents_shape"])
        count = int(np.prod(shape))
        latents = (
            np.frombuffer(payload, dtype="<f4", count=count, offset=off)
            .reshape(shape)
            .copy()
        )
        off += count * 4
    extras = {}
    for entry in header.get("extras", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if off + nbytes > len(payload):
            raise CheckpointError(f"extra blob for {entry['key']} overruns the file")
        extras[entry["key"]] = (
            np.frombuffer(payload, dtype="<f4", count=count, offset=off)
            .reshape(shape)
            .copy()
        )
        off += nbytes
    if off != len(payload):
        raise CheckpointError("trailing bytes after parameter blobs")
    return Checkpoint(
        kind=header["kind"],
        params=MlpParams(arrays),
        config=header["config"],
        latents=latents,
        dataset_fingerprint=header.get("dataset_fingerprint", ""),
        seed=header.get("seed", 0),
        extras=extras,
    )
