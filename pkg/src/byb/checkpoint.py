"""Named-tensor archive ("BYBT") used for every parameter save/load.

Layout, all little-endian::

    b"BYBT" | version u32 | count u32 |
    count x ( name_len u16 | utf-8 name | rank u8 | dims u64 * rank | f64 payload )
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"BYBT"
FORMAT_VERSION = 1


class ArchiveError(ValueError):
    pass


def save_archive(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ArchiveError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise ArchiveError(f"rank {arr.ndim} too large for {name}")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_archive(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ArchiveError(f"{path}: not a BYBT archive")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != FORMAT_VERSION:
            raise ArchiveError(f"{path}: unsupported archive version {version}")
        pos = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            n = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * n > len(buf):
                raise ArchiveError(f"{path}: truncated payload for {name}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * n
    except struct.error as exc:
        raise ArchiveError(f"{path}: truncated archive") from exc
    if pos != len(buf):
        raise ArchiveError(f"{path}: {len(buf) - pos} trailing bytes")
    return out
