"""Seeded image augmentation producing the two training views per image.

Reduced SimSiam-style menu for grayscale: random resized crop, optional
horizontal flip, additive intensity shift, Gaussian pixel noise. Flip
defaults off (synthetic motifs are laterality-sensitive).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from glocal.data import _resize_bilinear


class AugmentConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentationConfig:
    crop_scale: tuple[float, float] = (0.875, 1.0)  # side-length fraction
    flip_probability: float = 0.0
    intensity_jitter: float = 0.1
    noise_sigma: float = 0.05

    def __post_init__(self):
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi):
            raise AugmentConfigError(f"crop_scale interval invalid: {self.crop_scale}")
        if hi > 1.0:
            raise AugmentConfigError(f"crop_scale upper bound {hi} exceeds 1")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise AugmentConfigError(f"flip_probability outside [0,1]: {self.flip_probability}")
        if self.intensity_jitter < 0.0 or self.intensity_jitter > 1.0:
            raise AugmentConfigError(f"intensity_jitter outside [0,1]: {self.intensity_jitter}")
        if self.noise_sigma < 0.0:
            raise AugmentConfigError(f"noise_sigma must be >= 0: {self.noise_sigma}")


def augment(pixels: np.ndarray, config: AugmentationConfig, draw: np.random.Generator) -> np.ndarray:
    """Apply one augmentation pass; same draw state gives the same output.

    Draw order is fixed (scale, offsets, flip, shift, noise) so outputs are
    reproducible regardless of which transforms are active.
    """
    h, w = pixels.shape
    lo, hi = config.crop_scale
    scale = draw.uniform(lo, hi)
    ch = max(1, int(round(h * scale)))
    cw = max(1, int(round(w * scale)))
    y0 = int(draw.integers(0, h - ch + 1))
    x0 = int(draw.integers(0, w - cw + 1))
    out = pixels[y0 : y0 + ch, x0 : x0 + cw]
    if (ch, cw) != (h, w):
        out = _resize_bilinear(out, h, w)
    else:
        out = out.copy()

    if draw.uniform() < config.flip_probability:
        out = out[:, ::-1].copy()

    if config.intensity_jitter > 0.0:
        out = out + draw.uniform(-config.intensity_jitter, config.intensity_jitter)
    if config.noise_sigma > 0.0:
        out = out + draw.normal(0.0, config.noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def make_view_rng(seed: int, epoch: int, step: int, sample: int, view: int) -> np.random.Generator:
    """Independent generator for one (image, view) draw within a step."""
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, epoch, step, sample, view)))
