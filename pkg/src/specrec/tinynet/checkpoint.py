"""TNW1 checkpoint files.

Layout (little-endian)::

    b"TNW1"
    u32 config length, config JSON (utf-8)
    u32 tensor count
    per tensor: u16 name length, name (utf-8), u8 partition tag,
                u8 ndim, u32 * ndim shape, float32 data (C order)

Tensors are stored as float32, so a reload is exact only for parameters that
were already float32-representable. Training code works in float64.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .net import PARTITIONS, NetConfig, ParamSet, architecture

MAGIC = b"TNW1"
_TAGS = {p: i for i, p in enumerate(PARTITIONS)}


class CheckpointError(ValueError):
    pass


def encode(params: ParamSet, config: NetConfig, extra: dict | None = None) -> bytes:
    meta = {"net": config.to_dict()}
    if extra:
        meta.update(extra)
    blob = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", len(blob)), blob, struct.pack("<I", len(params))]
    for name, value in params.tensors.items():
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", _TAGS[params.partitions[name]], value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(data: bytes) -> tuple[ParamSet, NetConfig, dict]:
    if data[:4] != MAGIC:
        raise CheckpointError("not a TNW1 checkpoint")
    try:
        pos = 4
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        meta = json.loads(data[pos : pos + n].decode())
        pos += n
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        tensors, partitions = {}, {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + ln].decode()
            pos += ln
            tag, ndim = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape)
            pos += 4 * size
            tensors[name] = arr.astype(np.float64)
            partitions[name] = PARTITIONS[tag]
    except (struct.error, ValueError, IndexError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"truncated or corrupt checkpoint: {exc}") from exc
    if pos != len(data):
        raise CheckpointError("trailing bytes after the last tensor")
    config = NetConfig.from_dict(meta.pop("net"))
    params = ParamSet(tensors, partitions)
    check_compatible(params, config)
    return params, config, meta


def check_compatible(params: ParamSet, config: NetConfig) -> None:
    expected = architecture(config)
    if set(expected) != set(params.tensors):
        raise CheckpointError("tensor names do not match the network configuration")
    for name, (shape, part) in expected.items():
        if params[name].shape != shape or params.partitions[name] != part:
            raise CheckpointError(f"tensor {name} does not match the network configuration")


def save(path, params: ParamSet, config: NetConfig, extra: dict | None = None) -> None:
    Path(path).write_bytes(encode(params, config, extra))


def load(path) -> tuple[ParamSet, NetConfig, dict]:
    return decode(Path(path).read_bytes())
