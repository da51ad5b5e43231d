"""Checkpoint container: round trips, corruption guards, shape validation."""

import numpy as np
import pytest

from m2d import checkpoint
from m2d.cli import load_models, load_models_into, save_models
from m2d.models import ModelConfig, build_models


def test_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "a.weight": rng.standard_normal((3, 4)).astype(np.float32),
        "b.scalar": np.array(2.5, dtype=np.float32),
        "M.transition": rng.random((5, 5)).astype(np.float64),
    }
    path = tmp_path / "c.m2dc"
    checkpoint.save(path, arrays)
    back = checkpoint.load(path)
    assert sorted(back) == sorted(arrays)
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype
        assert back[k].tobytes() == arrays[k].tobytes()


def test_truncated_file_checksum_mismatch(tmp_path):
    path = tmp_path / "t.m2dc"
    checkpoint.save(path, {"x": np.ones(64, dtype=np.float32)})
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(checkpoint.ChecksumMismatch):
        checkpoint.load(path)


def test_flipped_byte_checksum_mismatch(tmp_path):
    path = tmp_path / "f.m2dc"
    checkpoint.save(path, {"x": np.ones(16, dtype=np.float32)})
    blob = bytearray(path.read_bytes())
    blob[20] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(checkpoint.ChecksumMismatch):
        checkpoint.load(path)


def test_version_guard(tmp_path):
    path = tmp_path / "v.m2dc"
    checkpoint.save(path, {"x": np.ones(4, dtype=np.float32)})
    blob = bytearray(path.read_bytes())
    blob[4] = 99  # version field
    import struct
    import zlib

    body = bytes(blob[:-4])
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    with pytest.raises(checkpoint.VersionUnsupported):
        checkpoint.load(path)


def test_missing_component(tmp_path):
    path = tmp_path / "m.m2dc"
    checkpoint.save(path, {"E.stem.weight": np.zeros((2, 1, 7, 7), dtype=np.float32)})
    arrays = checkpoint.load(path)
    assert checkpoint.require_prefix(arrays, "E")
    with pytest.raises(checkpoint.MissingComponent):
        checkpoint.require_prefix(arrays, "T")


def test_model_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig(embed_dim=32, depth_multiplier=0.125, n_classes=7)
    models = build_models(cfg, seed=3)
    m = np.clip(np.random.default_rng(1).random((7, 7)), 0.01, 1.0)
    path = tmp_path / "model.m2dc"
    save_models(path, models, m=m)
    back, m_back = load_models(path)
    assert back.cfg.n_classes == 7 and back.cfg.embed_dim == 32
    assert m_back.dtype == np.float64
    np.testing.assert_array_equal(m_back, m)
    orig = models.state_dict()
    got = back.state_dict()
    for k in orig:
        assert got[k].tobytes() == orig[k].tobytes(), k


def test_wrong_k_names_predictor_output(tmp_path):
    small = build_models(ModelConfig(embed_dim=32, depth_multiplier=0.125, n_classes=12), seed=0)
    path = tmp_path / "k12.m2dc"
    save_models(path, small)
    from m2d.autodiff import ShapeMismatch

    with pytest.raises(ShapeMismatch) as err:
        load_models_into(path, ModelConfig(embed_dim=32, depth_multiplier=0.125, n_classes=24))
    assert "t.output" in str(err.value).lower()
