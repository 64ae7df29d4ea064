"""Custom little-endian binary checkpoint with explicit magic and version.

Layout (all integers little-endian):

    magic        9 bytes  b"MGILCKPT1"
    version      u32
    config_len   u32, then config JSON (utf-8)
    config_hash  32 bytes (sha256 of the canonical config JSON)
    epoch        u32
    optim_steps  u64
    rng_state    4 x u64 (xoshiro256** words)
    model tensors, then optimizer tensors, each as:
        count    u32
        entry:   name_len u16, name utf-8, ndim u8, dims u32 each,
                 raw little-endian float32 payload

Explicit byte layout keeps save -> load -> continue bitwise equal to an
uninterrupted run.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

MAGIC = b"MGILCKPT1"
VERSION = 1


class CheckpointError(ValueError):
    """Raised on magic/version mismatch or a malformed checkpoint."""


def config_hash(config_json: str) -> bytes:
    return hashlib.sha256(config_json.encode("utf-8")).digest()


def _write_tensors(parts: list[bytes], tensors: list[tuple[str, np.ndarray]]) -> None:
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        data = np.ascontiguousarray(arr, dtype=np.float32)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.astype("<f4").tobytes())


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_tensors(r: _Reader) -> dict[str, np.ndarray]:
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
        tensors[name] = data.astype(np.float32)
    return tensors


def save_checkpoint(path: str, *, config_json: str, epoch: int, optim_steps: int,
                    rng_state: tuple[int, int, int, int],
                    model_tensors: list[tuple[str, np.ndarray]],
                    optim_tensors: list[tuple[str, np.ndarray]]) -> None:
    parts: list[bytes] = [MAGIC, struct.pack("<I", VERSION)]
    encoded = config_json.encode("utf-8")
    parts.append(struct.pack("<I", len(encoded)))
    parts.append(encoded)
    parts.append(config_hash(config_json))
    parts.append(struct.pack("<I", epoch))
    parts.append(struct.pack("<Q", optim_steps))
    parts.append(struct.pack("<4Q", *rng_state))
    _write_tensors(parts, model_tensors)
    _write_tensors(parts, optim_tensors)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path: str) -> dict:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    magic = r.take(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (config_len,) = r.unpack("<I")
    config_json = r.take(config_len).decode("utf-8")
    stored_hash = r.take(32)
    if stored_hash != config_hash(config_json):
        raise CheckpointError("config hash mismatch: checkpoint corrupted")
    (epoch,) = r.unpack("<I")
    (optim_steps,) = r.unpack("<Q")
    rng_state = r.unpack("<4Q")
    model_tensors = _read_tensors(r)
    optim_tensors = _read_tensors(r)
    return {
        "config_json": config_json,
        "epoch": epoch,
        "optim_steps": optim_steps,
        "rng_state": rng_state,
        "model_tensors": model_tensors,
        "optim_tensors": optim_tensors,
    }
