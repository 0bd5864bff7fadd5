"""Tile augmentations: color jitter, Gaussian noise, right-angle rotations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _kernels as K


@dataclass
class AugmentationConfig:
    max_color_jitter: float = 0.15
    noise_variance: float = 0.001
    rotations: tuple = (0, 90, 180, 270)

    def __post_init__(self):
        if not 0.0 <= self.max_color_jitter < 1.0:
            raise ValueError("max_color_jitter must lie in [0, 1)")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")
        self.rotations = tuple(int(r) for r in self.rotations)
        if not self.rotations or any(r % 90 or not 0 <= r < 360 for r in self.rotations):
            raise ValueError("rotations must be a non-empty subset of {0, 90, 180, 270}")


def _luma(x):
    return x[..., 0] * K.LUMA[0] + x[..., 1] * K.LUMA[1] + x[..., 2] * K.LUMA[2]


def augment_batch(x, cfg, rng):
    """Augment a float (B, H, W, 3) batch in [0, 1]; returns a new array.

    Per image: brightness, contrast, saturation (each a factor in
    [1 - m, 1 + m]), hue rotation by up to m turns, additive Gaussian noise,
    then one rotation drawn from ``cfg.rotations``.
    """
    x = np.array(x, copy=True)
    b = x.shape[0]
    m = cfg.max_color_jitter
    jit = rng.uniform(-m, m, size=(4, b)) if m > 0 else np.zeros((4, b))
    rot = rng.choice(np.asarray(cfg.rotations) // 90, size=b)
    dt = x.dtype.type
    if m > 0:
        x *= (1.0 + jit[0]).astype(x.dtype)[:, None, None, None]
        mean = _luma(x).mean(axis=(1, 2))[:, None, None, None]
        x = (x - mean) * (1.0 + jit[1]).astype(x.dtype)[:, None, None, None] + mean
        gray = _luma(x)[..., None]
        x = gray + (x - gray) * (1.0 + jit[2]).astype(x.dtype)[:, None, None, None]
        np.clip(x, 0, 1, out=x)
        x = K.hue_shift(x, jit[3])
    if cfg.noise_variance > 0:
        x += rng.normal(0.0, np.sqrt(cfg.noise_variance), size=x.shape).astype(x.dtype)
    for i in range(b):
        if rot[i]:
            x[i] = np.rot90(x[i], int(rot[i]), axes=(0, 1))
    np.clip(x, dt(0), dt(1), out=x)
    return x


def augment(tile, cfg, rng):
    """Augment one uint8 tile; output is uint8, clamped to [0, 255]."""
    x = np.asarray(tile, dtype=np.float64)[None] / 255.0
    y = augment_batch(x, cfg, rng)[0]
    return np.clip(np.rint(y * 255.0), 0, 255).astype(np.uint8)
