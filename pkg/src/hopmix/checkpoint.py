"""HMX1 checkpoints: config echo plus every parameter and buffer as raw f64.

Layout (little-endian)::

    magic   b"HMX1"
    u32     format version (= 1)
    u32     config length, then that many UTF-8 bytes (``key = value`` lines)
    u32     entry count
    entries, in registry order (parameters, then buffers such as the
    power-iteration vectors and input normalization statistics):
        u8   kind (0 = parameter, 1 = buffer)
        u32  name length, then UTF-8 name
        u32  ndim, then ndim x u32 dims
        f64  data, row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import load_config
from .mixer import MixerModel

MAGIC = b"HMX1"
VERSION = 1
_KINDS = {"param": 0, "buffer": 1}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config_text: str
    entries: list[tuple[str, str, np.ndarray]]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: a for _, name, a in self.entries}

    def build_model(self) -> MixerModel:
        model = MixerModel(load_config(text=self.config_text).model_config(), init=False)
        try:
            model.load_entries(self.arrays())
        except KeyError as exc:
            raise CheckpointError(f"checkpoint does not match its config: {exc}") from None
        return model

    @classmethod
    def from_model(cls, model: MixerModel, config_text: str) -> "Checkpoint":
        return cls(config_text, [(k, n, np.array(a, dtype=np.float64)) for k, n, a in model.state_entries()])


def encode(ckpt: Checkpoint) -> bytes:
    out = bytearray(MAGIC)
    cfg = ckpt.config_text.encode("utf-8")
    out += struct.pack("<II", VERSION, len(cfg)) + cfg
    out += struct.pack("<I", len(ckpt.entries))
    for kind, name, arr in ckpt.entries:
        raw = name.encode("utf-8")
        out += struct.pack("<BI", _KINDS[kind], len(raw)) + raw
        out += struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return bytes(out)


def decode(raw: bytes) -> Checkpoint:
    if raw[:4] != MAGIC:
        raise CheckpointError("not an HMX1 checkpoint")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise CheckpointError("checkpoint truncated")
        vals = struct.unpack_from(fmt, raw, pos)
        pos += size
        return vals

    def take_bytes(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError("checkpoint truncated")
        pos += n
        return raw[pos - n:pos]

    version, cfg_len = take("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config_text = take_bytes(cfg_len).decode("utf-8")
    (count,) = take("<I")
    kinds = {v: k for k, v in _KINDS.items()}
    entries = []
    for _ in range(count):
        kind, name_len = take("<BI")
        if kind not in kinds:
            raise CheckpointError(f"unknown entry kind {kind}")
        name = take_bytes(name_len).decode("utf-8")
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I")
        n = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(take_bytes(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
        entries.append((kinds[kind], name, data))
    if pos != len(raw):
        raise CheckpointError(f"{len(raw) - pos} trailing bytes after the last entry")
    return Checkpoint(config_text, entries)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(encode(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())
