"""Flat binary checkpoint container.

Layout: magic "STIK", format version u32, parameter count u32, then per
parameter: name length u32, UTF-8 name, rank u32, extents u32 each,
float64 values little-endian. All integers little-endian. Round-trips
are bit-exact.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"STIK"
FORMAT_VERSION = 1


def save_state(path: str | Path, state: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(state))]
    for name, values in state.items():
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(values, dtype="<f8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_state(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    offset = 12
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}I", raw, offset)
        offset += 4 * rank
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        values = np.frombuffer(raw, dtype="<f8", count=n, offset=offset)
        offset += 8 * n
        if name in state:
            raise ValueError(f"{path}: duplicate parameter {name!r}")
        state[name] = values.reshape(shape).astype(np.float64)
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return state
