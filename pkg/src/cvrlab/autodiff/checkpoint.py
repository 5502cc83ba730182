"""Flat binary checkpoint format.

Layout:  one magic line, one JSON header line mapping tensor names to
{shape, offset, length}, then the raw little-endian float32 payloads
concatenated in header order.  Offsets are relative to the first payload
byte.  Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"CVRLAB-CKPT v1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    header: dict[str, dict] = {}
    payloads: list[bytes] = []
    offset = 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        raw = data.tobytes()
        header[name] = {"shape": list(arr.shape), "offset": offset, "length": len(raw)}
        payloads.append(raw)
        offset += len(raw)
    blob = MAGIC + b"\n" + json.dumps(header).encode("utf-8") + b"\n" + b"".join(payloads)
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    eol = blob.find(b"\n")
    if eol < 0 or blob[:eol] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    header_end = blob.find(b"\n", eol + 1)
    if header_end < 0:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[eol + 1:header_end].decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: unparsable header") from exc
    base = header_end + 1
    out: dict[str, np.ndarray] = {}
    for name, meta in header.items():
        shape = tuple(meta["shape"])
        length = int(meta["length"])
        expected = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if length != expected:
            raise CheckpointError(f"{path}: payload length {length} != shape {shape} for {name}")
        lo = base + int(meta["offset"])
        raw = blob[lo:lo + length]
        if len(raw) != length:
            raise CheckpointError(f"{path}: truncated payload for {name}")
        out[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32, copy=True)
    return out
