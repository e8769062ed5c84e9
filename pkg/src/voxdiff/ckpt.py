"""Named-tensor checkpoint file ("ICKP"): little-endian, f32 payloads."""
from __future__ import annotations

import struct

import numpy as np

from .voxel import FormatError, TruncationError

CKPT_MAGIC = b"ICKP"
CKPT_VERSION = 1


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """magic | version u8 | count u32 | per tensor:
    name_len u16 + utf-8 name + rank u8 + dims u32[] + f32 payload."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<BI", CKPT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            a = np.asarray(arr, dtype="<f4")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<B", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 9 or blob[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not an ICKP checkpoint")
    version, count = struct.unpack("<BI", blob[4:9])
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported ICKP version {version}")
    pos = 9
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise TruncationError(f"{path}: checkpoint ends early at byte {pos}")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        size = int(np.prod(dims)) if dims else 1
        payload = take(4 * size)
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)
    return out
