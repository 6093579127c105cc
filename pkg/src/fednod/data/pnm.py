"""Binary PGM (P5) and PPM (P6) reading and writing, 8-bit only."""

from __future__ import annotations

import os

import numpy as np


class PNMError(ValueError):
    pass


def _tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens and the offset of the single whitespace byte that
    terminates the header.
    """
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PNMError("truncated header")
        tokens.append(data[start:pos])
    if pos >= n or not data[pos : pos + 1].isspace():
        raise PNMError("header not terminated by whitespace")
    return tokens, pos + 1


def decode_pnm(data: bytes) -> np.ndarray:
    """Decode P5 to ``(H, W)`` or P6 to ``(3, H, W)`` uint8."""
    tokens, offset = _tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise PNMError(f"unsupported magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PNMError(f"non-numeric header field: {exc}") from None
    if width < 1 or height < 1:
        raise PNMError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise PNMError(f"only maxval 255 is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    size = width * height * channels
    body = data[offset : offset + size]
    if len(body) != size:
        raise PNMError(f"expected {size} pixel bytes, found {len(body)}")
    pixels = np.frombuffer(body, dtype=np.uint8)
    if channels == 1:
        return pixels.reshape(height, width).copy()
    return pixels.reshape(height, width, 3).transpose(2, 0, 1).copy()


def read_pnm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pnm(fh.read())


def encode_pgm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise PNMError(f"PGM needs a 2-D uint8 image, got {image.dtype} {image.shape}")
    h, w = image.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(image).tobytes()


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[0] != 3 or rgb.dtype != np.uint8:
        raise PNMError(f"PPM needs a (3, H, W) uint8 image, got {rgb.dtype} {rgb.shape}")
    _, h, w = rgb.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(rgb.transpose(1, 2, 0)).tobytes()


def write_pgm(path, image: np.ndarray) -> None:
    os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(encode_pgm(image))
