"""Versioned binary checkpoint container.

Layout (little-endian): magic "KGCK", format version u32 = 1, config JSON
(u32 byte length + UTF-8 payload), tensor count u32, then per tensor: name
(u16 length + UTF-8), rank u8, extents u32 each, float32 payload.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"KGCK"
VERSION = 1


def save_checkpoint(path, tensors: dict, config: dict) -> None:
    """Write named parameter arrays (cast to float32) plus a config dict."""
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<I", VERSION))
        handle.write(struct.pack("<I", len(blob)))
        handle.write(blob)
        handle.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            data = np.asarray(tensors[name].data if hasattr(tensors[name], "data")
                              else tensors[name])
            encoded = name.encode("utf-8")
            handle.write(struct.pack("<H", len(encoded)))
            handle.write(encoded)
            handle.write(struct.pack("<B", data.ndim))
            for extent in data.shape:
                handle.write(struct.pack("<I", extent))
            handle.write(data.astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read back (name -> float64 array, config dict)."""
    with open(path, "rb") as handle:
        if handle.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", handle.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", handle.read(4))
        config = json.loads(handle.read(blob_len).decode("utf-8"))
        (count,) = struct.unpack("<I", handle.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", handle.read(2))
            name = handle.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", handle.read(1))
            shape = tuple(struct.unpack("<I", handle.read(4))[0] for _ in range(rank))
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(handle.read(4 * size), dtype="<f4").reshape(shape)
            tensors[name] = data.astype(np.float64)
    return tensors, config


def restore_into(named_params: dict, tensors: dict) -> None:
    """Copy checkpoint arrays into existing parameter tensors by name."""
    for name, param in named_params.items():
        if name not in tensors:
            raise KeyError(f"checkpoint is missing parameter {name!r}")
        if tensors[name].shape != param.data.shape:
            raise ValueError(
                f"shape mismatch for {name!r}: checkpoint {tensors[name].shape}, "
                f"model {param.data.shape}"
            )
        param.data = tensors[name].copy()
