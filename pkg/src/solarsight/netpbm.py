"""Binary Netpbm readers/writers: P6 (PPM, RGB) and P5 (PGM, gray).

Images travel as float arrays in [0, 1] (H, W, 3); label maps as uint8
(H, W).  Files always use maxval 255.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError


def write_ppm(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) array as binary PPM; floats in [0,1] are quantized."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"PPM wants (H, W, 3), got {image.shape}")
    if image.dtype != np.uint8:
        image = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = image.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(image.tobytes())


def write_pgm(path, gray: np.ndarray) -> None:
    """Write an (H, W) uint8 array as binary PGM."""
    if gray.ndim != 2:
        raise DataError(f"PGM wants (H, W), got {gray.shape}")
    if gray.dtype != np.uint8:
        gray = gray.astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(gray.tobytes())


def _read_header(data: bytes, magic: bytes, path) -> tuple[int, int, int]:
    if not data.startswith(magic):
        raise DataError(f"{path}: expected {magic.decode()} file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":  # comment to end of line
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 supported, got {maxval}")
    return w, h, pos


def read_ppm_u8(path) -> np.ndarray:
    """Read a binary PPM into a uint8 (H, W, 3) array."""
    with open(path, "rb") as f:
        data = f.read()
    w, h, pos = _read_header(data, b"P6", path)
    need = w * h * 3
    raw = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    if raw.size != need:
        raise DataError(f"{path}: truncated pixel data")
    return raw.reshape(h, w, 3).copy()


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into float32 (H, W, 3) scaled to [0, 1]."""
    return read_ppm_u8(path).astype(np.float32) / 255.0


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM into a uint8 (H, W) array."""
    with open(path, "rb") as f:
        data = f.read()
    w, h, pos = _read_header(data, b"P5", path)
    need = w * h
    raw = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    if raw.size != need:
        raise DataError(f"{path}: truncated pixel data")
    return raw.reshape(h, w).copy()
