"""Test-time augmentation and mean ensembling of probability maps."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .augment import apply_dihedral, invert_dihedral
from .imageio import ChannelStats, normalize, resize_bilinear
from .net.unet import infer_config, predict_proba

DEFAULT_TTA = ("id", "rot90", "rot180", "rot270", "hflip", "vflip", "transpose")
_NEEDS_SQUARE = {"rot90", "rot270", "transpose"}


def mean_ensemble(maps: Sequence[np.ndarray]) -> np.ndarray:
    """Pixel-wise arithmetic mean.

    Values are sorted per pixel before summation (in float64), so the result
    does not depend on the order of ``maps``.
    """
    if len(maps) == 0:
        raise ValueError("mean_ensemble needs at least one map")
    shape = np.shape(maps[0])
    for m in maps[1:]:
        if np.shape(m) != shape:
            raise ValueError(f"shape mismatch in ensemble: {np.shape(m)} vs {shape}")
    stack = np.sort(np.stack([np.asarray(m, dtype=np.float64) for m in maps]), axis=0)
    out = stack.sum(axis=0) / len(maps)
    return out.astype(np.float32)


def tta_predict(predict: Callable[[np.ndarray], np.ndarray], image: np.ndarray, tta=DEFAULT_TTA) -> np.ndarray:
    """Mean over g in ``tta`` of g^-1(predict(g(image)))."""
    if not tta:
        raise ValueError("empty TTA set")
    h, w = image.shape[:2]
    if h != w and _NEEDS_SQUARE.intersection(tta):
        raise ValueError(f"TTA elements {sorted(_NEEDS_SQUARE.intersection(tta))} need a square image, got {h}x{w}")
    maps = []
    for g in tta:
        pred = predict(apply_dihedral(g, image))
        maps.append(apply_dihedral(invert_dihedral(g), np.asarray(pred)))
    return mean_ensemble(maps)


class Model:
    """A loaded checkpoint as an image -> probability-map function.

    Images are resized to the network input size, normalized with the
    stored training statistics, and the map is resized back.
    """

    def __init__(self, params, stats: ChannelStats, input_size, bn_eps=1e-5):
        self.params = params
        self.stats = stats
        self.input_size = tuple(int(v) for v in input_size)
        self.config = infer_config(params, bn_eps=bn_eps)

    @classmethod
    def from_checkpoint(cls, ckpt):
        return cls(ckpt.params, ckpt.stats, ckpt.input_size, ckpt.bn_eps)

    @property
    def input_contract(self):
        return (self.input_size, self.stats.mean, self.stats.std)

    def __call__(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        ih, iw = self.input_size
        x = resize_bilinear(np.asarray(image, dtype=np.float32), ih, iw)
        prob = predict_proba(self.params, normalize(x, self.stats), self.config)[0]
        return np.clip(resize_bilinear(prob, h, w), 0.0, 1.0)


def ensemble_predict(checkpoints, image: np.ndarray, tta=DEFAULT_TTA) -> np.ndarray:
    """Mean of per-checkpoint TTA predictions for one HxWx3 image in [0, 1]."""
    if not checkpoints:
        raise ValueError("no checkpoints given")
    models = [c if isinstance(c, Model) else Model.from_checkpoint(c) for c in checkpoints]
    contract = models[0].input_contract
    for m in models[1:]:
        if m.input_contract != contract:
            raise ValueError("checkpoints disagree on input size or normalization statistics")
    return mean_ensemble([tta_predict(m, image, tta) for m in models])
