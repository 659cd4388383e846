"""Synthetic lesion images: one filled ellipse on a flat, noisy background."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imageio import ImageSample


@dataclass(frozen=True)
class SynthSpec:
    count: int = 12
    size: int = 64
    axis_min: float = 8.0  # semi-axis lengths, pixels
    axis_max: float = 24.0
    fg_min: int = 40  # lesion colour range, per channel
    fg_max: int = 110
    bg_min: int = 160  # skin colour range, per channel
    bg_max: int = 230
    noise: float = 8.0  # Gaussian sigma in 8-bit units
    seed: int = 0

    def __post_init__(self):
        if self.count < 0 or self.size < 1:
            raise ValueError("count must be >= 0 and size >= 1")
        if not 1 <= self.axis_min <= self.axis_max:
            raise ValueError("need 1 <= axis_min <= axis_max")
        if 2 * self.axis_max + 2 > self.size:
            raise ValueError(f"axis_max {self.axis_max} does not fit a {self.size}px image")
        if self.noise < 0:
            raise ValueError("noise sigma must be >= 0")
        for lo, hi in ((self.fg_min, self.fg_max), (self.bg_min, self.bg_max)):
            if not 0 <= lo <= hi <= 255:
                raise ValueError("colour ranges must satisfy 0 <= min <= max <= 255")


def ellipse_mask(size, cy, cx, a, b, theta):
    """Pixels whose centre satisfies the rotated ellipse inequality."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def generate_one(spec: SynthSpec, index: int) -> ImageSample:
    rng = np.random.default_rng([spec.seed, index])
    a = rng.uniform(spec.axis_min, spec.axis_max)
    b = rng.uniform(spec.axis_min, spec.axis_max)
    theta = rng.uniform(0, math.pi)
    reach = max(a, b)
    lo, hi = reach, spec.size - 1 - reach
    cy = rng.uniform(lo, hi)
    cx = rng.uniform(lo, hi)
    fg = rng.integers(spec.fg_min, spec.fg_max + 1, size=3)
    bg = rng.integers(spec.bg_min, spec.bg_max + 1, size=3)
    inside = ellipse_mask(spec.size, cy, cx, a, b, theta)
    img = np.where(inside[..., None], fg, bg).astype(np.float64)
    if spec.noise > 0:
        img += rng.normal(0, spec.noise, size=img.shape)
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    mask = np.where(inside, 255, 0).astype(np.uint8)
    return ImageSample(id=f"synth_{index:04d}", pixels=pixels, mask=mask)


def generate(spec: SynthSpec):
    """``spec.count`` samples; sample i depends only on (spec, i)."""
    return [generate_one(spec, i) for i in range(spec.count)]
