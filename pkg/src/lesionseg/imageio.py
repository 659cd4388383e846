"""PNG I/O, resizing and dataset normalization."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from ._fileutil import atomic_write_bytes
from ._interp import interp_matrix, nearest_index

STD_FLOOR = 1e-6


class ImageIOError(ValueError):
    """Raised when an image or mask file cannot be decoded or written."""


@dataclass
class ImageSample:
    id: str
    pixels: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"{self.id}: pixels must be HxWx3, got {px.shape}")
        self.pixels = px.astype(np.uint8, copy=False)
        if self.mask is not None:
            m = np.asarray(self.mask)
            if m.shape != px.shape[:2]:
                raise ValueError(f"{self.id}: mask shape {m.shape} != image shape {px.shape[:2]}")
            if not np.isin(m, (0, 255)).all():
                raise ValueError(f"{self.id}: mask values must be 0 or 255")
            self.mask = m.astype(np.uint8, copy=False)

    @property
    def image(self) -> np.ndarray:
        """Pixels as float32 in [0, 1]."""
        return self.pixels.astype(np.float32) / 255.0


@dataclass(frozen=True)
class ChannelStats:
    mean: tuple
    std: tuple

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("ChannelStats needs 3 means and 3 stds")
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        object.__setattr__(self, "std", tuple(max(float(v), STD_FLOOR) for v in self.std))


def _open_png(path) -> Image.Image:
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise ImageIOError(f"{path}: no such file") from None
    except (OSError, SyntaxError, ValueError) as e:
        raise ImageIOError(f"{path}: decode failure ({e})") from None
    if img.format != "PNG":
        raise ImageIOError(f"{path}: not a PNG file (format {img.format})")
    return img


def load_image(path) -> ImageSample:
    """Load an 8-bit RGB or grayscale PNG; grayscale is replicated to 3 channels."""
    img = _open_png(path)
    if img.mode == "L":
        arr = np.asarray(img, dtype=np.uint8)
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    elif img.mode == "RGB":
        arr = np.asarray(img, dtype=np.uint8)
    elif img.mode in ("1", "I", "I;16", "I;16B", "F"):
        raise ImageIOError(f"{path}: unsupported bit depth (mode {img.mode})")
    else:
        raise ImageIOError(f"{path}: unsupported color type (mode {img.mode})")
    return ImageSample(id=Path(path).stem, pixels=arr)


def load_mask(path) -> np.ndarray:
    """Load an 8-bit grayscale PNG mask, binarized as value > 127 -> 255."""
    img = _open_png(path)
    if img.mode != "L":
        raise ImageIOError(f"{path}: mask must be 8-bit grayscale (mode {img.mode})")
    arr = np.asarray(img, dtype=np.uint8)
    return np.where(arr > 127, 255, 0).astype(np.uint8)


def _atomic_save(img: Image.Image, path) -> None:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    try:
        atomic_write_bytes(path, buf.getvalue())
    except OSError as e:
        raise ImageIOError(f"{path}: write failed ({e.strerror or e})") from None


def save_mask(mask: np.ndarray, path) -> None:
    """Write a mask as 8-bit grayscale PNG; any nonzero value becomes 255."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ImageIOError(f"{path}: mask must be 2-D, got shape {m.shape}")
    _atomic_save(Image.fromarray(np.where(m > 0, 255, 0).astype(np.uint8)), path)


def save_image(pixels: np.ndarray, path) -> None:
    px = np.asarray(pixels, dtype=np.uint8)
    _atomic_save(Image.fromarray(px), path)


def save_probmap(prob: np.ndarray, path) -> None:
    """Write a probability map as 16-bit grayscale PNG (value / 65535)."""
    p = np.clip(np.asarray(prob, dtype=np.float64), 0.0, 1.0)
    q = np.rint(p * 65535).astype(np.uint16)
    _atomic_save(Image.fromarray(q), path)


def load_probmap(path) -> np.ndarray:
    img = _open_png(path)
    if img.mode not in ("I;16", "I"):
        raise ImageIOError(f"{path}: probability map must be 16-bit grayscale (mode {img.mode})")
    arr = np.asarray(img).astype(np.float64)
    if arr.min() < 0 or arr.max() > 65535:
        raise ImageIOError(f"{path}: probability map values out of 16-bit range")
    return (arr / 65535.0).astype(np.float32)


def _check_target(out_h: int, out_w: int) -> None:
    if out_h < 1 or out_w < 1:
        raise ValueError(f"zero-sized resize target {out_h}x{out_w}")


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an HxW or HxWxC float array (half-pixel centers).

    Output stays within the input's value range.
    """
    _check_target(out_h, out_w)
    x = np.asarray(image)
    h, w = x.shape[:2]
    if (h, w) == (out_h, out_w):
        return x.copy()
    ah = interp_matrix(h, out_h)
    aw = interp_matrix(w, out_w)
    xf = x.astype(np.float64)
    if x.ndim == 2:
        out = ah @ xf @ aw.T
    else:
        out = np.einsum("oh,hwc,pw->opc", ah, xf, aw, optimize=True)
    out = np.clip(out, xf.min(), xf.max())
    return out.astype(x.dtype if np.issubdtype(x.dtype, np.floating) else np.float32)


def resize_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize; values are copied, never blended."""
    _check_target(out_h, out_w)
    m = np.asarray(mask)
    h, w = m.shape[:2]
    rows = nearest_index(h, out_h)
    cols = nearest_index(w, out_w)
    return m[rows[:, None], cols[None, :]].copy()


def compute_dataset_stats(samples: Sequence[ImageSample]) -> ChannelStats:
    """Per-channel mean and population std over every pixel of every image."""
    if not samples:
        raise ValueError("cannot compute dataset stats of an empty list")
    total = np.zeros(3)
    total_sq = np.zeros(3)
    count = 0
    for s in samples:
        px = s.pixels.reshape(-1, 3).astype(np.float64) / 255.0
        total += px.sum(axis=0)
        count += px.shape[0]
    mean = total / count
    for s in samples:
        px = s.pixels.reshape(-1, 3).astype(np.float64) / 255.0
        total_sq += ((px - mean) ** 2).sum(axis=0)
    std = np.sqrt(total_sq / count)
    return ChannelStats(mean=tuple(mean), std=tuple(np.maximum(std, STD_FLOOR)))


def normalize(image: np.ndarray, stats: ChannelStats) -> np.ndarray:
    """HxWx3 image in [0, 1] -> (1, 3, H, W) float32 tensor of (x - mean) / std."""
    x = np.asarray(image, dtype=np.float64)
    mean = np.asarray(stats.mean)
    std = np.asarray(stats.std)
    out = (x - mean) / std
    return out.transpose(2, 0, 1)[None].astype(np.float32)


def denormalize(tensor: np.ndarray, stats: ChannelStats) -> np.ndarray:
    """Inverse of :func:`normalize`: (1, 3, H, W) -> HxWx3."""
    t = np.asarray(tensor, dtype=np.float64)[0].transpose(1, 2, 0)
    return (t * np.asarray(stats.std) + np.asarray(stats.mean)).astype(np.float32)


def read_stats(path) -> ChannelStats:
    values = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, val = line.partition("=")
        values[key.strip()] = tuple(float(v) for v in val.split(","))
    try:
        return ChannelStats(mean=values["mean"], std=values["std"])
    except KeyError as e:
        raise ValueError(f"{path}: missing key {e.args[0]}") from None


def write_stats(stats: ChannelStats, path) -> None:
    text = "mean = {}\nstd = {}\n".format(
        ",".join(f"{v:.9g}" for v in stats.mean), ",".join(f"{v:.9g}" for v in stats.std)
    )
    atomic_write_bytes(path, text.encode("utf-8"))
