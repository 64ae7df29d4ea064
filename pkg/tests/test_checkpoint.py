import numpy as np
import pytest

from mgil.checkpoint import (
    MAGIC,
    VERSION,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)


def sample_payload():
    return dict(
        config_json='{"seed": 3}',
        epoch=4,
        optim_steps=120,
        rng_state=(1, 2, 3, 2 ** 64 - 1),
        model_tensors=[("stem.weight", np.arange(12, dtype=np.float32).reshape(3, 4)),
                       ("stem.bias", np.array([0.5, -0.5, 0.0], np.float32))],
        optim_tensors=[("stem.weight#m", np.zeros((3, 4), np.float32))],
    )


def test_roundtrip(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    payload = sample_payload()
    save_checkpoint(path, **payload)
    out = load_checkpoint(path)
    assert out["config_json"] == payload["config_json"]
    assert out["epoch"] == 4
    assert out["optim_steps"] == 120
    assert out["rng_state"] == payload["rng_state"]
    for name, arr in payload["model_tensors"]:
        assert np.array_equal(out["model_tensors"][name], arr)
    assert np.array_equal(out["optim_tensors"]["stem.weight#m"],
                          np.zeros((3, 4), np.float32))


def test_save_is_byte_deterministic(tmp_path):
    a = str(tmp_path / "a.bin")
    b = str(tmp_path / "b.bin")
    save_checkpoint(a, **sample_payload())
    save_checkpoint(b, **sample_payload())
    assert open(a, "rb").read() == open(b, "rb").read()


def test_header_layout(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    save_checkpoint(path, **sample_payload())
    blob = open(path, "rb").read()
    assert blob[:len(MAGIC)] == MAGIC
    assert int.from_bytes(blob[len(MAGIC):len(MAGIC) + 4], "little") == VERSION


def test_bad_magic_rejected(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    save_checkpoint(path, **sample_payload())
    blob = bytearray(open(path, "rb").read())
    blob[0] ^= 0xFF
    open(path, "wb").write(bytes(blob))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_bad_version_rejected(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    save_checkpoint(path, **sample_payload())
    blob = bytearray(open(path, "rb").read())
    blob[len(MAGIC)] = 99
    open(path, "wb").write(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_corrupted_config_detected(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    save_checkpoint(path, **sample_payload())
    blob = bytearray(open(path, "rb").read())
    blob[len(MAGIC) + 8] ^= 0x01  # first byte of the config JSON
    open(path, "wb").write(bytes(blob))
    with pytest.raises(CheckpointError, match="hash"):
        load_checkpoint(path)


def test_truncated_file_rejected(tmp_path):
    path = str(tmp_path / "ckpt.bin")
    save_checkpoint(path, **sample_payload())
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)
