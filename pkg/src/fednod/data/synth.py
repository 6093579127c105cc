"""Schematic-face video frames as a stand-in for the real driver recordings.

Each synthetic video shows one head (ellipse), two eyes and a mouth whose
opening ratio (height / width) follows a class-specific pattern:

* normal  - nearly closed, ratio in [0, 0.1]
* talking - oscillates within [0.15, 0.4]
* yawning - ramps up within [0.5, 0.9]

Geometry is jittered per video; Gaussian pixel noise is added per frame.
"""

from __future__ import annotations

import numpy as np

from .dataset import NORMAL, TALKING, YAWNING, Dataset

VIDEO_LENGTH = 100
SUPERSAMPLE = 4
MOUTH_INTENSITY = 0.05
EYE_INTENSITY = 0.1
MOUTH_HALF_WIDTH = 0.14  # fraction of the image, before per-video scaling
MIN_RENDERED_RATIO = 0.04  # a closed mouth still shows as a thin line
VIDEO_PREFIX = {NORMAL: "N", TALKING: "T", YAWNING: "Y"}
RATIO_RANGE = {NORMAL: (0.0, 0.1), TALKING: (0.15, 0.4), YAWNING: (0.5, 0.9)}


def _coverage(resolution, cx, cy, ax, ay, rows=None, cols=None):
    """Fraction of each pixel inside an axis-aligned ellipse (normalised units)."""
    ss = SUPERSAMPLE
    rows = rows or (0, resolution)
    cols = cols or (0, resolution)
    ys = (np.arange(rows[0] * ss, rows[1] * ss) + 0.5) / (resolution * ss)
    xs = (np.arange(cols[0] * ss, cols[1] * ss) + 0.5) / (resolution * ss)
    inside = ((xs[None, :] - cx) / ax) ** 2 + ((ys[:, None] - cy) / ay) ** 2 <= 1.0
    h, w = rows[1] - rows[0], cols[1] - cols[0]
    return inside.reshape(h, ss, w, ss).mean(axis=(1, 3))


def mouth_ratios(label: int, n_frames: int, rng: np.random.Generator) -> np.ndarray:
    """Per-frame mouth opening ratio for one video of class ``label``."""
    t = np.arange(n_frames, dtype=np.float64)
    lo, hi = RATIO_RANGE[label]
    if label == NORMAL:
        base = rng.uniform(0.02, 0.08)
        wobble = 0.02 * np.sin(2 * np.pi * t / rng.uniform(20, 40) + rng.uniform(0, 2 * np.pi))
        return np.clip(base + wobble, lo, hi)
    if label == TALKING:
        period = rng.uniform(6, 14)
        phase = rng.uniform(0, 2 * np.pi)
        return lo + (hi - lo) * (0.5 + 0.5 * np.sin(2 * np.pi * t / period + phase))
    start, stop = rng.uniform(0.5, 0.6), rng.uniform(0.8, 0.9)
    if n_frames == 1:
        return np.array([(start + stop) / 2])
    return start + (stop - start) * t / (n_frames - 1)


def render_video(ratios, resolution: int, noise_level: float, rng: np.random.Generator) -> np.ndarray:
    """Frames ``(n, R, R)`` uint8 of one head with the given mouth ratios."""
    scale = rng.uniform(0.95, 1.05)
    cx, cy = 0.5 + rng.uniform(-0.04, 0.04, size=2)
    background = rng.uniform(0.4, 0.5)
    face = rng.uniform(0.7, 0.8)

    static = np.full((resolution, resolution), background)
    cov = _coverage(resolution, cx, cy, 0.30 * scale, 0.40 * scale)
    static = static * (1 - cov) + face * cov
    for side in (-1, 1):
        cov = _coverage(resolution, cx + side * 0.11 * scale, cy - 0.12 * scale, 0.05 * scale, 0.025 * scale)
        static = static * (1 - cov) + EYE_INTENSITY * cov

    mx, my = cx, cy + 0.2 * scale
    half_w = MOUTH_HALF_WIDTH * scale
    # bounding box covering the widest possible mouth
    r0 = max(int(np.floor((my - half_w) * resolution)) - 1, 0)
    r1 = min(int(np.ceil((my + half_w) * resolution)) + 1, resolution)
    c0 = max(int(np.floor((mx - half_w) * resolution)) - 1, 0)
    c1 = min(int(np.ceil((mx + half_w) * resolution)) + 1, resolution)

    frames = np.empty((len(ratios), resolution, resolution), dtype=np.uint8)
    for i, ratio in enumerate(ratios):
        img = static.copy()
        half_h = max(ratio, MIN_RENDERED_RATIO) * half_w
        cov = _coverage(resolution, mx, my, half_w, half_h, rows=(r0, r1), cols=(c0, c1))
        img[r0:r1, c0:c1] = img[r0:r1, c0:c1] * (1 - cov) + MOUTH_INTENSITY * cov
        if noise_level > 0:
            img = img + rng.normal(0.0, noise_level, size=img.shape)
        frames[i] = np.clip(np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5), 0, 255)
    return frames


def synth_generate(n_per_class: int, resolution: int = 64, noise_level: float = 0.05, seed=0,
                   video_length: int = VIDEO_LENGTH, return_ratios: bool = False):
    """Balanced synthetic frame dataset, ``n_per_class`` frames per class.

    Frames are grouped into videos of ``video_length`` consecutive frames
    (the last video of a class may be shorter). With ``return_ratios`` the
    per-frame mouth ratios are returned alongside.
    """
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    images, labels, videos, frames, ratios_all = [], [], [], [], []
    for label in (NORMAL, TALKING, YAWNING):
        remaining = n_per_class
        v = 0
        while remaining > 0:
            n = min(video_length, remaining)
            rng = np.random.default_rng([_seed_int(seed), label, v])
            ratios = mouth_ratios(label, n, rng)
            images.append(render_video(ratios, resolution, noise_level, rng))
            labels.extend([label] * n)
            videos.extend([f"{VIDEO_PREFIX[label]}{v:04d}"] * n)
            frames.extend(range(n))
            ratios_all.append(ratios)
            remaining -= n
            v += 1
    ds = Dataset(np.concatenate(images), labels, videos, frames)
    if return_ratios:
        return ds, np.concatenate(ratios_all)
    return ds


def _seed_int(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return int(np.random.SeedSequence(seed).generate_state(1)[0])
