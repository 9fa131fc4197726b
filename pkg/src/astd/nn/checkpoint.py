"""Checkpoint file format.

Layout: magic "ASTDCKPT", version (u32), header length (u32), header bytes
(utf-8 "key=value" lines), parameter count (u32), then per parameter:
name length (u32), name bytes, rank (u32), dims (u32 each), values as
32-bit little-endian IEEE-754. Round-trips are bit-exact for float32
parameters.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"ASTDCKPT"
VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray],
                    header: dict[str, str] | None = None) -> None:
    header_text = "".join(f"{k}={v}\n" for k, v in (header or {}).items())
    header_bytes = header_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(params)))
        for name, value in params.items():
            arr = np.ascontiguousarray(value, dtype="<f4")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header: dict[str, str] = {}
        for line in fh.read(header_len).decode("utf-8").splitlines():
            if line:
                key, _, value = line.partition("=")
                header[key] = value
        (n_params,) = struct.unpack("<I", fh.read(4))
        params: dict[str, np.ndarray] = {}
        for _ in range(n_params):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            count = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4")
            params[name] = data.reshape(shape).copy()
        return header, params
