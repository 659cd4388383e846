"""Seeded training-time augmentation.

Photometric kinds touch only the image. Geometric kinds (shift/scale/rotate,
grid distortion, dihedral) warp image and mask together; the mask uses
nearest sampling so it stays binary. Warps pad by reflection. Dihedral
elements are exact index permutations and are reused for test-time
augmentation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import ndimage

# ---------------------------------------------------------------- dihedral

DIHEDRAL_ELEMENTS = ("id", "rot90", "rot180", "rot270", "hflip", "vflip", "transpose")
DIHEDRAL_INVERSE = {
    "id": "id",
    "rot90": "rot270",
    "rot180": "rot180",
    "rot270": "rot90",
    "hflip": "hflip",
    "vflip": "vflip",
    "transpose": "transpose",
}


def invert_dihedral(element: str) -> str:
    try:
        return DIHEDRAL_INVERSE[element]
    except KeyError:
        raise ValueError(f"unknown dihedral element {element!r}") from None


def apply_dihedral(element: str, arr: np.ndarray) -> np.ndarray:
    """Permute the first two axes of ``arr``. rot90 is a clockwise quarter turn."""
    if element == "id":
        out = arr
    elif element == "rot90":
        out = np.rot90(arr, k=-1, axes=(0, 1))
    elif element == "rot180":
        out = np.rot90(arr, k=2, axes=(0, 1))
    elif element == "rot270":
        out = np.rot90(arr, k=1, axes=(0, 1))
    elif element == "hflip":
        out = arr[:, ::-1]
    elif element == "vflip":
        out = arr[::-1]
    elif element == "transpose":
        out = np.swapaxes(arr, 0, 1)
    else:
        raise ValueError(f"unknown dihedral element {element!r}")
    return np.ascontiguousarray(out)


# -------------------------------------------------------------- transforms


class AugTransform:
    geometric = False


@dataclass(frozen=True)
class MotionBlur(AugTransform):
    length: int
    angle: float


@dataclass(frozen=True)
class MedianBlur(AugTransform):
    k: int

    def __post_init__(self):
        if self.k < 3 or self.k % 2 == 0:
            raise ValueError(f"median kernel must be odd >= 3, got {self.k}")


@dataclass(frozen=True)
class RandomContrast(AugTransform):
    alpha: float

    def __post_init__(self):
        if self.alpha <= -1:
            raise ValueError("contrast alpha must be > -1")


@dataclass(frozen=True)
class RandomBrightness(AugTransform):
    beta: float


@dataclass(frozen=True)
class ShiftScaleRotate(AugTransform):
    dx: float  # fraction of width
    dy: float  # fraction of height
    scale: float
    angle: float  # radians, counter-clockwise
    geometric = True

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be > 0")


@dataclass(frozen=True)
class CLAHE(AugTransform):
    clip: float = 2.0
    tiles: int = 8


@dataclass(frozen=True)
class Sharpen(AugTransform):
    amount: float
    radius: float


@dataclass(frozen=True)
class GridDistort(AugTransform):
    cells: int
    # (cells + 1) x (cells + 1) x 2 control-point offsets in pixels (dy, dx)
    offsets: tuple
    geometric = True


@dataclass(frozen=True)
class HueSaturation(AugTransform):
    dh: float  # fraction of a full hue turn
    ds: float
    dv: float


@dataclass(frozen=True)
class ToGray(AugTransform):
    pass


@dataclass(frozen=True)
class Dihedral(AugTransform):
    element: str
    geometric = True

    def __post_init__(self):
        if self.element not in DIHEDRAL_INVERSE:
            raise ValueError(f"unknown dihedral element {self.element!r}")


# ------------------------------------------------------------------ colour


def rgb_to_hsv(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    s = np.where(v > 0, c / np.where(v > 0, v, 1), 0.0)
    safe_c = np.where(c > 0, c, 1)
    h = np.where(
        v == r, ((g - b) / safe_c) % 6,
        np.where(v == g, (b - r) / safe_c + 2, (r - g) / safe_c + 4),
    )
    h = np.where(c > 0, h / 6.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv):
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    choices = [
        np.stack(c, axis=-1)
        for c in ((v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q))
    ]
    out = np.zeros(hsv.shape)
    for k, c in enumerate(choices):
        out = np.where((i == k)[..., None], c, out)
    return out


def clahe_channel(v, clip=2.0, tiles=8):
    """Contrast-limited adaptive histogram equalization of a [0, 1] channel.

    256-bin histograms per tile, clip limit ``clip`` times the mean bin
    count with the excess spread evenly, and bilinear blending of the tile
    mappings between tile centres.
    """
    h, w = v.shape
    ty, tx = min(tiles, h), min(tiles, w)
    q = np.clip(np.rint(v * 255), 0, 255).astype(np.int64)
    ybounds = np.linspace(0, h, ty + 1).round().astype(int)
    xbounds = np.linspace(0, w, tx + 1).round().astype(int)
    luts = np.zeros((ty, tx, 256))
    for i in range(ty):
        for j in range(tx):
            tile = q[ybounds[i]:ybounds[i + 1], xbounds[j]:xbounds[j + 1]]
            n = tile.size
            hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
            limit = max(clip * n / 256.0, 1.0)
            excess = np.maximum(hist - limit, 0).sum()
            hist = np.minimum(hist, limit) + excess / 256.0
            luts[i, j] = np.cumsum(hist) / n
    cy = (ybounds[:-1] + ybounds[1:] - 1) / 2.0
    cx = (xbounds[:-1] + xbounds[1:] - 1) / 2.0

    def blend_axis(centres, size):
        pos = np.arange(size, dtype=np.float64)
        i1 = np.searchsorted(centres, pos, side="right")
        i0 = np.clip(i1 - 1, 0, len(centres) - 1)
        i1 = np.clip(i1, 0, len(centres) - 1)
        span = centres[i1] - centres[i0]
        wgt = np.where(span > 0, (pos - centres[i0]) / np.where(span > 0, span, 1), 0.0)
        return i0, i1, np.clip(wgt, 0, 1)

    y0, y1, wy = blend_axis(cy, h)
    x0, x1, wx = blend_axis(cx, w)
    Y0, Y1 = y0[:, None], y1[:, None]
    X0, X1 = x0[None, :], x1[None, :]
    WY, WX = wy[:, None], wx[None, :]
    top = (1 - WX) * luts[Y0, X0, q] + WX * luts[Y0, X1, q]
    bot = (1 - WX) * luts[Y1, X0, q] + WX * luts[Y1, X1, q]
    return np.clip((1 - WY) * top + WY * bot, 0, 1)


def motion_kernel(length, angle):
    length = max(1, int(length))
    if length % 2 == 0:
        length += 1
    k = np.zeros((length, length))
    c = length // 2
    for t in np.linspace(-c, c, 4 * length + 1):
        x = int(round(c + t * math.cos(angle)))
        y = int(round(c - t * math.sin(angle)))
        k[y, x] = 1.0
    return k / k.sum()


# ------------------------------------------------------------------- apply


def _warp(image, mask, src_y, src_x):
    coords = np.stack([src_y, src_x])
    out = np.stack(
        [ndimage.map_coordinates(image[..., ch], coords, order=1, mode="reflect")
         for ch in range(image.shape[2])],
        axis=-1,
    )
    out_mask = None
    if mask is not None:
        out_mask = ndimage.map_coordinates(mask, coords, order=0, mode="reflect")
    return out, out_mask


def _ssr_coords(t: ShiftScaleRotate, h, w):
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    # inverse map: output pixel -> source pixel
    oy = yy - cy - t.dy * h
    ox = xx - cx - t.dx * w
    cos, sin = math.cos(t.angle), math.sin(t.angle)
    # forward rotation is counter-clockwise in image coordinates (y down)
    sx = (cos * ox - sin * oy) / t.scale + cx
    sy = (sin * ox + cos * oy) / t.scale + cy
    return sy, sx


def _grid_coords(t: GridDistort, h, w):
    off = np.asarray(t.offsets, dtype=np.float64)
    n = t.cells
    gy = np.arange(h) * (n / max(h - 1, 1))
    gx = np.arange(w) * (n / max(w - 1, 1))
    GY, GX = np.meshgrid(gy, gx, indexing="ij")
    coords = np.stack([GY, GX])
    dy = ndimage.map_coordinates(off[..., 0], coords, order=1, mode="nearest")
    dx = ndimage.map_coordinates(off[..., 1], coords, order=1, mode="nearest")
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return yy + dy, xx + dx


def apply(t: AugTransform, image: np.ndarray, mask: Optional[np.ndarray] = None):
    """Apply one transform. Returns ``(image', mask')``; image' is clamped to [0, 1]."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError(f"image must be HxWxC, got {image.shape}")
    if mask is not None and np.asarray(mask).shape != image.shape[:2]:
        raise ValueError(f"mask shape {np.asarray(mask).shape} != image shape {image.shape[:2]}")
    dtype = image.dtype if np.issubdtype(image.dtype, np.floating) else np.float32
    x = image.astype(np.float64)
    h, w = x.shape[:2]

    if isinstance(t, Dihedral):
        out = apply_dihedral(t.element, image)
        return out, (None if mask is None else apply_dihedral(t.element, np.asarray(mask)))

    if isinstance(t, RandomBrightness):
        out = x + t.beta
    elif isinstance(t, RandomContrast):
        m = x.mean()
        out = m + (x - m) * (1 + t.alpha)
    elif isinstance(t, MedianBlur):
        out = ndimage.median_filter(x, size=(t.k, t.k, 1), mode="reflect")
    elif isinstance(t, MotionBlur):
        k = motion_kernel(t.length, t.angle)
        out = np.stack([ndimage.convolve(x[..., c], k, mode="reflect") for c in range(x.shape[2])], axis=-1)
    elif isinstance(t, Sharpen):
        blurred = ndimage.gaussian_filter(x, sigma=(t.radius, t.radius, 0), mode="reflect")
        out = x + t.amount * (x - blurred)
    elif isinstance(t, ToGray):
        r, g, b = x[..., 0], x[..., 1], x[..., 2]
        # written relative to red so equal channels come back unchanged
        luma = r + 0.587 * (g - r) + 0.114 * (b - r)
        out = np.repeat(luma[..., None], x.shape[2], axis=2)
    elif isinstance(t, HueSaturation):
        hsv = rgb_to_hsv(np.clip(x, 0, 1))
        hsv[..., 0] = (hsv[..., 0] + t.dh) % 1.0
        hsv[..., 1] = np.clip(hsv[..., 1] + t.ds, 0, 1)
        hsv[..., 2] = np.clip(hsv[..., 2] + t.dv, 0, 1)
        out = hsv_to_rgb(hsv)
    elif isinstance(t, CLAHE):
        hsv = rgb_to_hsv(np.clip(x, 0, 1))
        hsv[..., 2] = clahe_channel(hsv[..., 2], t.clip, t.tiles)
        out = hsv_to_rgb(hsv)
    elif isinstance(t, ShiftScaleRotate):
        out, mask = _warp(x, mask, *_ssr_coords(t, h, w))
    elif isinstance(t, GridDistort):
        out, mask = _warp(x, mask, *_grid_coords(t, h, w))
    else:
        raise TypeError(f"unsupported transform {t!r}")
    return np.clip(out, 0.0, 1.0).astype(dtype), mask


def apply_all(transforms, image, mask=None):
    for t in transforms:
        image, mask = apply(t, image, mask)
    return image, mask


# ---------------------------------------------------------------- sampling

# kind -> (default p, {param: (lo, hi)})
KIND_DEFAULTS: Dict[str, Tuple[float, Dict[str, tuple]]] = {
    "motion_blur": (0.2, {"length": (3, 7), "angle": (0.0, math.pi)}),
    "median_blur": (0.1, {"k": (3, 5)}),
    "contrast": (0.3, {"alpha": (-0.2, 0.2)}),
    "brightness": (0.3, {"beta": (-0.1, 0.1)}),
    "shift_scale_rotate": (0.3, {"shift": (-0.0625, 0.0625), "scale": (0.9, 1.1), "angle": (-0.2618, 0.2618)}),
    "clahe": (0.1, {"clip": (2.0, 2.0), "tiles": (8, 8)}),
    "sharpen": (0.2, {"amount": (0.2, 0.5), "radius": (0.5, 1.5)}),
    "grid_distort": (0.2, {"cells": (4, 4), "max_offset": (0.0, 2.0)}),
    "hue_saturation": (0.2, {"hue": (-0.03, 0.03), "sat": (-0.1, 0.1), "val": (-0.1, 0.1)}),
    "to_gray": (0.05, {}),
    "dihedral": (0.5, {}),
}
KIND_ORDER = tuple(KIND_DEFAULTS)
INT_PARAMS = {("motion_blur", "length"), ("median_blur", "k"), ("clahe", "tiles"), ("grid_distort", "cells")}
DEFAULT_DIHEDRAL_CHOICES = DIHEDRAL_ELEMENTS[1:]


@dataclass
class KindConfig:
    enabled: bool = True
    p: float = 0.5
    ranges: Dict[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"probability {self.p} outside [0, 1]")
        for name, (lo, hi) in self.ranges.items():
            if hi < lo:
                raise ValueError(f"range for {name} is inverted: ({lo}, {hi})")


def default_kinds() -> Dict[str, KindConfig]:
    return {k: KindConfig(True, p, dict(r)) for k, (p, r) in KIND_DEFAULTS.items()}


@dataclass
class AugConfig:
    kinds: Dict[str, KindConfig] = field(default_factory=default_kinds)
    dihedral_choices: tuple = DEFAULT_DIHEDRAL_CHOICES
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.kinds) - set(KIND_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown augmentation kinds {sorted(unknown)}")
        for e in self.dihedral_choices:
            invert_dihedral(e)

    @classmethod
    def disabled(cls, seed=0) -> "AugConfig":
        kinds = default_kinds()
        for k in kinds.values():
            k.enabled = False
        return cls(kinds=kinds, seed=seed)


def _uniform(rng, rng_range):
    lo, hi = rng_range
    return float(rng.uniform(lo, hi))


def _int_uniform(rng, rng_range, odd=False):
    lo, hi = int(round(rng_range[0])), int(round(rng_range[1]))
    values = [v for v in range(lo, hi + 1) if not odd or v % 2 == 1]
    if not values:
        raise ValueError(f"empty integer range {rng_range}")
    return int(values[rng.integers(len(values))])


def _make(kind, r, rng, config: AugConfig):
    if kind == "motion_blur":
        return MotionBlur(_int_uniform(rng, r["length"]), _uniform(rng, r["angle"]))
    if kind == "median_blur":
        return MedianBlur(_int_uniform(rng, r["k"], odd=True))
    if kind == "contrast":
        return RandomContrast(_uniform(rng, r["alpha"]))
    if kind == "brightness":
        return RandomBrightness(_uniform(rng, r["beta"]))
    if kind == "shift_scale_rotate":
        return ShiftScaleRotate(
            _uniform(rng, r["shift"]), _uniform(rng, r["shift"]), _uniform(rng, r["scale"]), _uniform(rng, r["angle"])
        )
    if kind == "clahe":
        return CLAHE(_uniform(rng, r["clip"]), _int_uniform(rng, r["tiles"]))
    if kind == "sharpen":
        return Sharpen(_uniform(rng, r["amount"]), _uniform(rng, r["radius"]))
    if kind == "grid_distort":
        cells = _int_uniform(rng, r["cells"])
        amp = _uniform(rng, r["max_offset"])
        off = rng.uniform(-amp, amp, size=(cells + 1, cells + 1, 2))
        return GridDistort(cells, tuple(tuple(tuple(p) for p in row) for row in off.tolist()))
    if kind == "hue_saturation":
        return HueSaturation(_uniform(rng, r["hue"]), _uniform(rng, r["sat"]), _uniform(rng, r["val"]))
    if kind == "to_gray":
        return ToGray()
    if kind == "dihedral":
        choices = config.dihedral_choices
        return Dihedral(choices[rng.integers(len(choices))])
    raise ValueError(f"unknown kind {kind!r}")


def sample_pipeline(config: AugConfig, rng: np.random.Generator):
    """Draw a transform list: each enabled kind is kept with its probability p.

    Kinds are visited in a fixed order, so the result depends only on the
    config and the generator state.
    """
    out = []
    for kind in KIND_ORDER:
        kc = config.kinds.get(kind)
        if kc is None or not kc.enabled:
            continue
        if rng.random() < kc.p:
            ranges = dict(KIND_DEFAULTS[kind][1])
            ranges.update(kc.ranges)
            out.append(_make(kind, ranges, rng, config))
    return out
