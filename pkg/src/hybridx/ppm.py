"""Binary PPM (P6) reading and writing, 8-bit samples only."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PPMError(ValueError):
    pass


def _tokens(data: bytes, count: int):
    """Yield the first ``count`` header tokens and the offset just past them."""
    pos, out = 0, []
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise PPMError("truncated header")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise PPMError("unterminated comment in header")
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        out.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PPMError("missing whitespace after maxval")
    return out, pos + 1


def decode_ppm(data: bytes) -> tuple[np.ndarray, int]:
    """Parse P6 bytes into a uint8 (H, W, 3) array and its maxval."""
    if data[:2] != b"P6":
        raise PPMError(f"not a binary PPM (magic {data[:2]!r})")
    tokens, offset = _tokens(data[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise PPMError(f"non-numeric header fields {tokens!r}") from None
    if width < 1 or height < 1:
        raise PPMError(f"bad dimensions {width}x{height}")
    if not 0 < maxval < 256:
        raise PPMError(f"only 8-bit PPM is supported, maxval={maxval}")
    raster = data[2 + offset:]
    expected = width * height * 3
    if len(raster) != expected:
        raise PPMError(f"raster has {len(raster)} bytes, expected {expected}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3), maxval


def encode_ppm(pixels: np.ndarray) -> bytes:
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
        raise PPMError(f"expected a uint8 (H, W, 3) array, got {pixels.dtype} {pixels.shape}")
    h, w, _ = pixels.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def read_ppm(path) -> np.ndarray:
    """Image as float64 (3, H, W) in [0, 1]."""
    try:
        raw, maxval = decode_ppm(Path(path).read_bytes())
    except PPMError as exc:
        raise PPMError(f"{path}: {exc}") from None
    return raw.transpose(2, 0, 1).astype(np.float64) / maxval


def write_ppm(path, tensor: np.ndarray) -> None:
    """Write a (3, H, W) float image in [0, 1], rounding to the nearest 8-bit level."""
    q = np.rint(np.clip(tensor, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).write_bytes(encode_ppm(q.transpose(1, 2, 0)))


def quantize(tensor: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit levels ``write_ppm`` stores, so a write/read round trip is exact."""
    return np.rint(np.clip(tensor, 0.0, 1.0) * 255.0) / 255.0
