import numpy as np
import pytest

from implicitgen.autodecoder import AutodecoderConfig, decoder_arch
from implicitgen.checkpoint import (
    Checkpoint,
    CheckpointError,
    dataset_fingerprint,
    load_checkpoint,
    save_checkpoint,
)
from implicitgen.numerics import init_params, make_rng
from implicitgen.shapes import ShapeSpec


@pytest.fixture
def ckpt():
    cfg = AutodecoderConfig(latent_dim=8, hidden_dim=16)
    params = init_params(decoder_arch(cfg), make_rng(0))
    latents = make_rng(1).normal(size=(5, 8)).astype(np.float32)
    return Checkpoint(kind="autodecoder", params=params, config=cfg.to_dict(),
                      latents=latents, dataset_fingerprint="abc123", seed=42)


def test_round_trip_bit_identical(tmp_path, ckpt):
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(ckpt, p1)
    back = load_checkpoint(p1)
    save_checkpoint(back, p2)
    assert p1.read_bytes() == p2.read_bytes()
    for k in ckpt.params.arrays:
        assert np.array_equal(back.params.arrays[k], ckpt.params.arrays[k])
    assert np.array_equal(back.latents, ckpt.latents)
    assert back.config == ckpt.config
    assert back.dataset_fingerprint == "abc123" and back.seed == 42


def test_corruption_names_offending_blob(tmp_path, ckpt):
    path = tmp_path / "a.ckpt"
    save_checkpoint(ckpt, path)
    data = bytearray(path.read_bytes())
    # flip a byte well into the parameter blobs (past the JSON header)
    hdr_end = 13 + int.from_bytes(data[9:13], "little")
    data[hdr_end + 100] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match=r"byte offset \d+"):
        load_checkpoint(path)


def test_kind_mismatch(tmp_path, ckpt):
    path = tmp_path / "a.ckpt"
    save_checkpoint(ckpt, path)
    with pytest.raises(CheckpointError, match="kind mismatch"):
        load_checkpoint(path, expect_kind="diffusion")
    with pytest.raises(CheckpointError, match="diffusion"):
        load_checkpoint(path).denoiser_config()


def test_version_mismatch_is_explicit(tmp_path, ckpt):
    path = tmp_path / "a.ckpt"
    save_checkpoint(ckpt, path)
    data = bytearray(path.read_bytes())
    data[5] = 99  # bump the version field
    # re-seal the trailing checksum so only the version differs
    import struct
    import zlib

    payload = bytes(data[:-4])
    data[-4:] = struct.pack("<I", zlib.crc32(payload))
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="version 99"):
        load_checkpoint(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "a.ckpt"
    path.write_bytes(b"NOTCK" + b"\x00" * 64)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_truncated_file(tmp_path):
    path = tmp_path / "a.ckpt"
    path.write_bytes(b"3DL")
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_no_latents_round_trip(tmp_path, ckpt):
    ckpt.latents = None
    ckpt.kind = "diffusion"
    path = tmp_path / "a.ckpt"
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path, expect_kind="diffusion")
    assert back.latents is None


def test_dataset_fingerprint_sensitivity():
    a = [ShapeSpec("sphere", (0.5,))]
    b = [ShapeSpec("sphere", (0.5000001,))]
    assert dataset_fingerprint(a) == dataset_fingerprint(a)
    assert dataset_fingerprint(a) != dataset_fingerprint(b)
