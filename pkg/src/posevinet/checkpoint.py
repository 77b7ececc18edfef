"""Binary model checkpoints.

Layout, all integers little-endian::

    b"PVNT"                     magic
    u16 version                 currently 1
    u32 n, n bytes              UTF-8 JSON {"config": {...}, "meta": {...}}
    u32 count                   number of tensor records, then per record:
        u16 n, n bytes          UTF-8 parameter name
        u8 rank, rank x u32     extents
        f64[prod(extents)]      row-major payload
    u32 crc                     CRC-32 (zlib) of every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointError
from .vit import ModelParams, ViTConfig, param_shapes

MAGIC = b"PVNT"
VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParams
    config: ViTConfig
    meta: dict = field(default_factory=dict)


def encode_checkpoint(params: Mapping[str, np.ndarray], config: ViTConfig,
                      meta: Mapping | None = None) -> bytes:
    header = json.dumps({"config": config.to_dict(), "meta": dict(meta or {})},
                        sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(header)), header,
             struct.pack("<I", len(params))]
    for name, value in params.items():
        arr = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(CheckpointError.TRUNCATED,
                                  f"record extends past end of data at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Checkpoint:
    data = bytes(data)
    if data[:4] != MAGIC:
        raise CheckpointError(CheckpointError.BAD_MAGIC, f"expected {MAGIC!r}, got {data[:4]!r}")
    if len(data) < 10:
        raise CheckpointError(CheckpointError.TRUNCATED, "file too short")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(CheckpointError.BAD_CRC, "CRC-32 mismatch, file is corrupted")

    r = _Reader(body)
    r.take(4)
    version, header_len = r.unpack("<HI")
    if version != VERSION:
        raise CheckpointError(CheckpointError.BAD_VERSION, f"unsupported version {version}")
    header = json.loads(r.take(header_len).decode("utf-8"))
    config = ViTConfig.from_dict(header["config"])
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I")
        n = int(np.prod(shape, dtype=np.int64))
        if name in params:
            raise CheckpointError(CheckpointError.SHAPE_MISMATCH, f"duplicate tensor {name!r}")
        params[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(body):
        raise CheckpointError(CheckpointError.TRUNCATED, "trailing bytes after tensor records")

    expected = param_shapes(config)
    if set(params) != set(expected):
        raise CheckpointError(CheckpointError.SHAPE_MISMATCH,
                              "tensor names do not match the embedded config")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise CheckpointError(CheckpointError.SHAPE_MISMATCH,
                                  f"{name}: stored {params[name].shape}, config needs {shape}")
    return Checkpoint(params, config, header.get("meta", {}))


def save_checkpoint(params: Mapping[str, np.ndarray], config: ViTConfig, path,
                    meta: Mapping | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(params, config, meta))


def read_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


def load_checkpoint(path) -> tuple[ModelParams, ViTConfig]:
    ckpt = read_checkpoint(path)
    return ckpt.params, ckpt.config
