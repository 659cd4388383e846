"""Training losses with gradients, and hard segmentation metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    w1: float = 0.5  # BCE
    w2: float = 0.5  # 1 - soft dice

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w1 + self.w2 <= 0:
            raise ValueError(f"invalid loss weights ({self.w1}, {self.w2})")


def _check_shapes(p, g):
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")


def bce(p, g):
    """Mean binary cross-entropy and its gradient w.r.t. ``p``.

    ``p`` is clamped to [1e-7, 1 - 1e-7]; the gradient is the derivative of
    the log terms evaluated at the clamped probabilities.
    """
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    _check_shapes(p, g)
    pc = np.clip(p, BCE_CLAMP, 1 - BCE_CLAMP)
    n = pc.size
    loss = -np.mean(g * np.log(pc) + (1 - g) * np.log(1 - pc))
    grad = (-(g / pc) + (1 - g) / (1 - pc)) / n
    return float(loss), grad


def soft_dice(p, g, smooth=1.0):
    """(2*sum(p*g) + s) / (sum(p) + sum(g) + s) and its gradient w.r.t. ``p``."""
    if smooth <= 0:
        raise ValueError("smooth must be > 0")
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    _check_shapes(p, g)
    num = 2 * np.sum(p * g) + smooth
    den = np.sum(p) + np.sum(g) + smooth
    grad = (2 * g * den - num) / den**2
    return float(num / den), grad


def composite_loss(p, g, w: LossWeights = LossWeights(), smooth=1.0):
    """w1 * BCE + w2 * (1 - soft dice), with gradient w.r.t. ``p``."""
    p = np.asarray(p)
    g = np.asarray(g)
    _check_shapes(p, g)
    total = 0.0
    grad = np.zeros(p.shape)
    if w.w1:
        l, dl = bce(p, g)
        total += w.w1 * l
        grad += w.w1 * dl
    if w.w2:
        d, dd = soft_dice(p, g, smooth)
        total += w.w2 * (1 - d)
        grad -= w.w2 * dd
    return total, grad


def _binary(a):
    return np.asarray(a) > 0


def _counts(a, b):
    a, b = _binary(a), _binary(b)
    _check_shapes(a, b)
    inter = int(np.count_nonzero(a & b))
    return inter, int(np.count_nonzero(a)), int(np.count_nonzero(b))


def jaccard(a, b, empty_value=1.0):
    """|a & b| / |a | b| of two binary masks (nonzero = foreground)."""
    inter, na, nb = _counts(a, b)
    union = na + nb - inter
    if union == 0:
        return float(empty_value)
    return inter / union


def dice_hard(a, b, empty_value=1.0):
    inter, na, nb = _counts(a, b)
    if na + nb == 0:
        return float(empty_value)
    return 2 * inter / (na + nb)


def thresholded_jaccard(j, tau=0.65):
    return j if j >= tau else 0.0


@dataclass
class ScoreRow:
    image_id: str
    dice: float
    jaccard: float
    thresholded_jaccard: float


@dataclass
class ScoreReport:
    rows: list = field(default_factory=list)

    def aggregate(self) -> ScoreRow:
        if not self.rows:
            return ScoreRow("__aggregate__", float("nan"), float("nan"), float("nan"))
        return ScoreRow(
            "__aggregate__",
            float(np.mean([r.dice for r in self.rows])),
            float(np.mean([r.jaccard for r in self.rows])),
            float(np.mean([r.thresholded_jaccard for r in self.rows])),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["image_id", "dice", "jaccard", "thresholded_jaccard"])
        for r in self.rows + [self.aggregate()]:
            out.writerow([r.image_id, f"{r.dice:.6f}", f"{r.jaccard:.6f}", f"{r.thresholded_jaccard:.6f}"])
        return buf.getvalue()


class IdMismatchError(ValueError):
    pass


def score_report(preds: Mapping[str, np.ndarray], gts: Mapping[str, np.ndarray],
                 tau=0.65, empty_value=1.0) -> ScoreReport:
    """Per-image Dice / Jaccard / thresholded Jaccard, rows sorted by id."""
    pred_ids, gt_ids = set(preds), set(gts)
    if pred_ids != gt_ids:
        only_pred = sorted(pred_ids - gt_ids)
        only_gt = sorted(gt_ids - pred_ids)
        raise IdMismatchError(
            f"id mismatch: only in predictions {only_pred}, only in ground truth {only_gt}"
        )
    if not pred_ids:
        raise IdMismatchError("no images to score")
    rows = []
    for image_id in sorted(pred_ids):
        a, b = preds[image_id], gts[image_id]
        j = jaccard(a, b, empty_value)
        rows.append(ScoreRow(image_id, dice_hard(a, b, empty_value), j, thresholded_jaccard(j, tau)))
    return ScoreReport(rows)
