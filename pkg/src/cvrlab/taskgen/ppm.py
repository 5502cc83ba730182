"""Binary PPM (P6) image files, written without comments and read strictly."""

from __future__ import annotations

import numpy as np


class PPMError(ValueError):
    pass


def write_ppm(path, img: np.ndarray) -> None:
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise PPMError(f"expected uint8 (H, W, 3) image, got {img.dtype} {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    # Header: magic, width, height, maxval, each followed by one whitespace
    # byte, then the raw pixel payload.  Comments are not accepted.
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PPMError(f"{path}: truncated header")
        fields.append(raw[start:pos])
    if fields[0] != b"P6":
        raise PPMError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise PPMError(f"{path}: non-numeric header field") from exc
    if maxval != 255:
        raise PPMError(f"{path}: unsupported maxval {maxval}")
    if w <= 0 or h <= 0:
        raise PPMError(f"{path}: bad dimensions {w}x{h}")
    pos += 1  # single whitespace byte after maxval
    payload = raw[pos:]
    if len(payload) != w * h * 3:
        raise PPMError(f"{path}: payload is {len(payload)} bytes, expected {w * h * 3}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()
