"""Per-frame transforms: grayscale, bilinear resize, tensor conversion."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError

NORM_MEAN = 0.5
NORM_STD = 0.5


def grayscale(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma of a ``(3, H, W)`` uint8 image, rounded half up.

    Integer arithmetic keeps gray inputs (R == G == B) exact.
    """
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got {rgb.shape}")
    r, g, b = (rgb[i].astype(np.int64) for i in range(3))
    gray = (299 * r + 587 * g + 114 * b + 500) // 1000
    return np.clip(gray, 0, 255).astype(np.uint8)


def _axis_weights(n_in: int, n_out: int):
    """Source taps and weights for one axis under the half-pixel-center convention."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a 2-D uint8 image; identity when the size is unchanged."""
    image = np.asarray(image)
    if height < 1 or width < 1:
        raise ConfigError(f"resize target must be at least 1x1, got {height}x{width}")
    if image.shape == (height, width):
        return image.copy()
    y0, y1, wy = _axis_weights(image.shape[0], height)
    x0, x1, wx = _axis_weights(image.shape[1], width)
    img = image.astype(np.float64)
    rows = img[y0] * (1.0 - wy)[:, None] + img[y1] * wy[:, None]
    out = rows[:, x0] * (1.0 - wx) + rows[:, x1] * wx
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def to_tensor(pixels: np.ndarray) -> np.ndarray:
    """Map uint8 pixels to float32 in [-1, 1]: ``(x / 255 - 0.5) / 0.5``."""
    x = np.asarray(pixels, dtype=np.float32) / np.float32(255.0)
    return (x - np.float32(NORM_MEAN)) / np.float32(NORM_STD)


def from_tensor(tensor: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_tensor`, rounded back to uint8."""
    x = (np.asarray(tensor, dtype=np.float64) * NORM_STD + NORM_MEAN) * 255.0
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)
