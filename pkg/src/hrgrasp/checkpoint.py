"""Flat binary checkpoint container with a JSON text manifest.

Layout of ``<name>.ckpt`` (all integers little-endian):

    magic   8 bytes  b"HRGC0001"
    count   uint32   number of records
    then per record, in manifest order:
        name_len  uint32
        name      utf-8 bytes
        rank      uint32
        dims      rank * uint32
        payload   prod(dims) * float32 little-endian

``<name>.ckpt.txt`` is the manifest: a JSON object with the format tag, the
record list (name, shape, byte offset of the payload) and a free-form
``meta`` dict. Record order is the insertion order at save time and is part
of the format.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"HRGC0001"


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    records = []
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            enc = name.encode("utf-8")
            f.write(struct.pack("<I", len(enc)))
            f.write(enc)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            offset = f.tell()
            f.write(data.tobytes())
            records.append({"name": name, "shape": list(data.shape), "offset": offset})
    manifest = {
        "format": "hrgrasp-checkpoint-v1",
        "records": records,
        "meta": meta or {},
    }
    with open(path.with_suffix(path.suffix + ".txt"), "w") as f:
        json.dump(manifest, f, indent=1)
        f.write("\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint container (magic {magic!r})")
        (count,) = struct.unpack("<I", f.read(4))
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
            n = int(np.prod(shape)) if rank else 1
            payload = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape)
            arrays[name] = payload.astype(np.float32)
    manifest_path = path.with_suffix(path.suffix + ".txt")
    meta = {}
    if manifest_path.exists():
        with open(manifest_path) as f:
            meta = json.load(f).get("meta", {})
    return arrays, meta
