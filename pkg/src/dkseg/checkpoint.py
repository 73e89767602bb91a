"""Binary checkpoint format for named float32 parameters.

Layout, all little-endian::

    b"DKSG"  u32 version (=1)  u32 count
    repeated count times:
        u16 name_len  name (UTF-8)  u8 rank  u32 dims[rank]  f32 payload
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DKSG"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(params: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise CheckpointError(f"rank too large for {name}")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise CheckpointError("bad magic, not a DKSG checkpoint")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"truncated checkpoint at byte {pos}")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = take("<H")
        if pos + n > len(buf):
            raise CheckpointError(f"truncated checkpoint at byte {pos}")
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = take("<B")
        dims = take(f"<{rank}I") if rank else ()
        size = int(np.prod(dims)) if rank else 1
        nbytes = 4 * size
        if pos + nbytes > len(buf):
            raise CheckpointError(f"truncated payload for {name!r} at byte {pos}")
        arr = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims)
        pos += nbytes
        out[name] = arr.astype(np.float32)
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes after last parameter")
    return out


def save(path: str | Path, params: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(params))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
