"""Deterministic synthetic surveillance clips with ground-truth target boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from csvideo.frames import Frame, VideoSequence

Box = tuple[float, float, float, float]  # center x, center y, width, height


def background(width: int, height: int, seed: int = 0) -> np.ndarray:
    """Static scene: smooth illumination, a few flat structures, mild texture."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    img = 90.0 + 50.0 * xx / width + 20.0 * np.sin(yy / max(height, 1) * np.pi)
    for _ in range(6):
        x0 = rng.integers(0, width - 8)
        y0 = rng.integers(0, height - 8)
        w = rng.integers(6, max(7, width // 3))
        h = rng.integers(6, max(7, height // 3))
        img[y0:y0 + h, x0:x0 + w] = rng.uniform(40, 210)
    img += gaussian_filter(rng.normal(0, 12, (height, width)), 1.5)
    img = gaussian_filter(img, 0.7)
    return np.clip(img, 0, 255)


def target_patch(size: int, level: float, seed: int = 1) -> np.ndarray:
    rng = np.random.default_rng(seed)
    patch = np.full((size, size), level)
    patch += gaussian_filter(rng.normal(0, 20, (size, size)), 1.0)
    c = size // 2
    patch[c - size // 4:c + size // 4, c - size // 4:c + size // 4] -= 45
    return patch


@dataclass(frozen=True)
class SyntheticClip:
    sequence: VideoSequence
    boxes: list[Box]


def moving_square(width: int = 176, height: int = 144, frames: int = 48, *,
                  size: int = 16, velocity: tuple[float, float] = (2.0, 1.0),
                  start: tuple[float, float] | None = None, level: float = 220.0,
                  noise_std: float = 0.0, seed: int = 0, frame_rate: float = 30.0) -> SyntheticClip:
    """A textured square crossing a static background, bouncing off the borders."""
    bg = background(width, height, seed)
    patch = target_patch(size, level, seed + 1)
    rng = np.random.default_rng(seed + 2)
    half = size / 2
    cx, cy = start if start is not None else (width * 0.25, height * 0.4)
    vx, vy = velocity
    out, boxes = [], []
    for _ in range(frames):
        img = bg.copy()
        x0 = int(round(cx - half))
        y0 = int(round(cy - half))
        img[y0:y0 + size, x0:x0 + size] = patch
        if noise_std > 0:
            img = img + rng.normal(0, noise_std, img.shape)
        out.append(Frame(np.clip(np.rint(img), 0, 255).astype(np.uint8)))
        boxes.append((x0 + half, y0 + half, float(size), float(size)))
        nx, ny = cx + vx, cy + vy
        if nx - half < 0 or nx + half > width:
            vx = -vx
        if ny - half < 0 or ny + half > height:
            vy = -vy
        cx, cy = cx + vx, cy + vy
    return SyntheticClip(VideoSequence(tuple(out), frame_rate), boxes)


def static_clip(width: int = 64, height: int = 64, frames: int = 5, seed: int = 0) -> VideoSequence:
    f = Frame(np.rint(background(width, height, seed)).astype(np.uint8))
    return VideoSequence(tuple([f] * frames))
