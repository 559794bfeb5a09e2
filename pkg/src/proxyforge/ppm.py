"""Binary PPM (P6, maxval 255) image reading and writing."""

from __future__ import annotations

import numpy as np


class PpmError(ValueError):
    pass


def write_ppm(path, image: np.ndarray) -> None:
    """Write an H x W x 3 uint8 array as P6."""
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise PpmError(f"expected H x W x 3 uint8, got {image.dtype} {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(image).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    # header: magic, width, height, maxval as whitespace-separated tokens
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P6":
        raise PpmError(f"{path}: not a P6 file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise PpmError(f"{path}: only maxval 255 supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=h * w * 3, offset=pos)
    return pixels.reshape(h, w, 3).copy()
