"""NVCM tensor file codec.

Layout, all little-endian:

    bytes 0..3   magic "NVCM"
    uint32       dtype tag (1 = float32)
    uint32       rank
    uint32 * r   dims
    payload      row-major float32

Used for mel spectrograms, synthetic corpus files, and checkpoint
parameter groups.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from noisevc.errors import IngestionError

MAGIC = b"NVCM"
TAG_FLOAT32 = 1


def write_tensor(path: str | Path, values: np.ndarray) -> None:
    arr = np.ascontiguousarray(values, dtype=np.float32)
    header = MAGIC + struct.pack("<II", TAG_FLOAT32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read tensor file {path}: {exc}") from exc
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise IngestionError(f"{path} is not an NVCM tensor (bad magic)")
    tag, rank = struct.unpack_from("<II", blob, 4)
    if tag != TAG_FLOAT32:
        raise IngestionError(f"{path}: unsupported dtype tag {tag}")
    if len(blob) < 12 + 4 * rank:
        raise IngestionError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", blob, 12)
    count = int(np.prod(dims)) if rank else 1
    payload = blob[12 + 4 * rank :]
    if len(payload) != 4 * count:
        raise IngestionError(f"{path}: payload size {len(payload)} != {4 * count}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def read_shape(path: str | Path) -> tuple[int, ...]:
    """Header-only peek, used for manifest frame counts."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(12)
            if len(head) < 12 or head[:4] != MAGIC:
                raise IngestionError(f"{path} is not an NVCM tensor (bad magic)")
            tag, rank = struct.unpack("<II", head[4:])
            if tag != TAG_FLOAT32:
                raise IngestionError(f"{path}: unsupported dtype tag {tag}")
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    except OSError as exc:
        raise IngestionError(f"cannot read tensor file {path}: {exc}") from exc
    return tuple(int(d) for d in dims)
