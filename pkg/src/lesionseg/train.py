"""Stratified folds, cosine cyclic LR, SGD with momentum, snapshot training,
and the binary checkpoint format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from ._fileutil import atomic_write_bytes
from .augment import AugConfig, apply_all, sample_pipeline
from .imageio import ChannelStats, ImageSample, compute_dataset_stats, normalize, resize_bilinear, resize_nearest
from .metrics import LossWeights, composite_loss, jaccard
from .net.layers import sigmoid
from .net.unet import UNetConfig, is_learnable, unet_backward, unet_forward, unet_init

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ folds


def area_fraction(sample: ImageSample) -> float:
    if sample.mask is None:
        raise ValueError(f"{sample.id}: stratified split needs a mask")
    return float(np.count_nonzero(sample.mask)) / sample.mask.size


def stratified_folds(samples: Sequence[ImageSample], k=5, bins=5, seed=0) -> Dict[str, int]:
    """Assign each sample to one of ``k`` folds, stratified by lesion area.

    Samples are ranked by lesion area fraction and cut into ``bins``
    equal-frequency bins. Each bin is shuffled with ``seed`` and dealt
    round-robin; the dealing position carries over from one bin to the
    next, so both per-bin and overall fold sizes differ by at most one.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if len(samples) < k:
        raise ValueError(f"need at least k={k} samples, got {len(samples)}")
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sample ids")
    keyed = sorted((area_fraction(s), s.id) for s in samples)
    n = len(keyed)
    binned = [[] for _ in range(bins)]
    for rank, (_, sid) in enumerate(keyed):
        binned[rank * bins // n].append(sid)
    rng = np.random.default_rng(seed)
    folds = {}
    slot = 0
    for members in binned:
        for i in rng.permutation(len(members)):
            folds[members[i]] = slot
            slot = (slot + 1) % k
    return folds


# --------------------------------------------------------------- schedule


def cyclic_lr(t, T, lr_max, lr_min):
    """Cosine annealing from lr_max (t = 0) to lr_min (t = T)."""
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * t / T))


def sgd_step(params, grads, velocity, lr, momentum=0.9):
    """v <- momentum * v + g ; w <- w - lr * v, for every learnable tensor.

    Returns new ``(params, velocity)`` dicts; inputs are not modified.
    Running batch-norm statistics are copied through untouched.
    """
    new_params = OrderedDict()
    new_vel = {}
    for name, w in params.items():
        if not is_learnable(name):
            new_params[name] = w
            continue
        if name not in grads:
            raise KeyError(f"missing gradient for {name}")
        g = grads[name]
        v = velocity.get(name)
        v = g.copy() if v is None else momentum * v + g
        new_vel[name] = v.astype(w.dtype, copy=False)
        new_params[name] = (w - lr * new_vel[name]).astype(w.dtype, copy=False)
    return new_params, new_vel


# ------------------------------------------------------------- checkpoint

MAGIC = b"LSGW"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


_EXTRA = ("norm.mean", "norm.std", "meta.input_size", "meta.bn_eps")


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    cycle: int = 0
    epoch: int = 0
    lr: float = 0.0
    digest: bytes = b"\0" * 32
    stats: ChannelStats = field(default_factory=lambda: ChannelStats((0, 0, 0), (1, 1, 1)))
    input_size: tuple = (224, 224)
    bn_eps: float = 1e-5

    def tensors(self):
        table = OrderedDict((k, np.asarray(v, dtype=np.float32)) for k, v in self.params.items())
        table["norm.mean"] = np.asarray(self.stats.mean, dtype=np.float32)
        table["norm.std"] = np.asarray(self.stats.std, dtype=np.float32)
        table["meta.input_size"] = np.asarray(self.input_size, dtype=np.float32)
        table["meta.bn_eps"] = np.asarray([self.bn_eps], dtype=np.float32)
        return table


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write ``ckpt`` in the LSGW little-endian binary format (atomic replace)."""
    if len(ckpt.digest) != 32:
        raise ValueError("config digest must be 32 bytes")
    parts = [MAGIC, struct.pack("<I", VERSION),
             struct.pack("<IIf", ckpt.cycle, ckpt.epoch, ckpt.lr), ckpt.digest]
    table = ckpt.tensors()
    parts.append(struct.pack("<I", len(table)))
    for name, arr in table.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(f"truncated checkpoint at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    r = _Reader(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic (not an LSGW checkpoint)")
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version} (expected {VERSION})")
    cycle, epoch, lr = r.unpack("<IIf")
    digest = r.take(32)
    (count,) = r.unpack("<I")
    table = OrderedDict()
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I")
        size = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").astype(np.float32).reshape(dims)
        table[name] = arr
    if r.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.pos} trailing bytes after tensor table")
    missing = [k for k in _EXTRA if k not in table]
    if missing:
        raise CheckpointError(f"{path}: missing tensors {missing}")
    stats = ChannelStats(tuple(table.pop("norm.mean").tolist()), tuple(table.pop("norm.std").tolist()))
    input_size = tuple(int(v) for v in table.pop("meta.input_size"))
    bn_eps = float(table.pop("meta.bn_eps")[0])
    return Checkpoint(table, cycle, epoch, lr, digest, stats, input_size, bn_eps)


# -------------------------------------------------------------- training


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs_per_cycle: int = 10
    cycles: int = 3
    lr_max: float = 0.1
    lr_min: float = 0.001
    momentum: float = 0.9
    batch_size: int = 4
    fold: int = 0
    seed: int = 0
    input_size: tuple = (224, 224)
    loss: LossWeights = field(default_factory=LossWeights)
    dice_smooth: float = 1.0
    unet: UNetConfig = field(default_factory=UNetConfig)
    aug: AugConfig = field(default_factory=AugConfig)

    def __post_init__(self):
        if self.epochs_per_cycle < 1 or self.cycles < 1:
            raise ValueError("epochs_per_cycle and cycles must be >= 1")
        if not self.lr_max >= self.lr_min >= 0:
            raise ValueError("need lr_max >= lr_min >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        st = self.unet.stride_total
        if self.input_size[0] % st or self.input_size[1] % st:
            raise ValueError(f"input_size {self.input_size} must be divisible by {st}")

    def digest(self) -> bytes:
        text = json.dumps(dataclasses.asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(text.encode("utf-8")).digest()


def _f32_stats(stats: ChannelStats) -> ChannelStats:
    return ChannelStats(
        tuple(float(v) for v in np.float32(stats.mean)), tuple(float(v) for v in np.float32(stats.std))
    )


def _prepare(samples, size):
    h, w = size
    out = []
    for s in samples:
        img = resize_bilinear(s.image, h, w)
        mask = resize_nearest(s.mask, h, w) if s.mask is not None else None
        out.append((s.id, img, mask))
    return out


def evaluate_jaccard(params, prepared, stats, config: UNetConfig, batch_size=8) -> float:
    """Mean Jaccard of eval-mode predictions binarized at 0.5."""
    if not prepared:
        return float("nan")
    scores = []
    for i in range(0, len(prepared), batch_size):
        chunk = prepared[i:i + batch_size]
        x = np.concatenate([normalize(img, stats) for _, img, _ in chunk])
        logits, _ = unet_forward(params, x, "eval", config)
        for (_, _, mask), z in zip(chunk, logits[:, 0]):
            scores.append(jaccard(z >= 0, mask))
    return float(np.mean(scores))


def train(train_samples, val_samples, config: TrainConfig,
          stats: Optional[ChannelStats] = None,
          on_epoch: Optional[Callable[[str], None]] = None):
    """Snapshot training: one Checkpoint per learning-rate cycle.

    Each cycle anneals the learning rate from lr_max to lr_min over its
    optimizer steps (cosine); the weights at the end of the cycle are the
    snapshot. ``on_epoch`` receives one log line per epoch.
    """
    if not train_samples:
        raise ValueError("empty training set")
    cfg = config
    stats = _f32_stats(stats if stats is not None else compute_dataset_stats(train_samples))
    train_data = _prepare(train_samples, cfg.input_size)
    val_data = _prepare(val_samples, cfg.input_size)
    if any(m is None for _, _, m in train_data):
        raise ValueError("every training sample needs a mask")

    params = unet_init(cfg.unet, np.random.default_rng([cfg.seed, 0]))
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    aug_rng = np.random.default_rng([cfg.seed, cfg.aug.seed, 2])
    velocity = {}
    digest = cfg.digest()

    n = len(train_data)
    n_batches = math.ceil(n / cfg.batch_size)
    steps_per_cycle = cfg.epochs_per_cycle * n_batches
    T = cfg.epochs_per_cycle
    snapshots = []
    epoch_total = 0
    for cycle in range(cfg.cycles):
        for epoch in range(T):
            order = shuffle_rng.permutation(n)
            losses = []
            lr = cfg.lr_max
            for b in range(n_batches):
                step = epoch * n_batches + b
                u = step / (steps_per_cycle - 1) if steps_per_cycle > 1 else 1.0
                lr = cyclic_lr(u * T, T, cfg.lr_max, cfg.lr_min)
                xs, gs = [], []
                for idx in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]:
                    _, img, mask = train_data[idx]
                    img, mask = apply_all(sample_pipeline(cfg.aug, aug_rng), img, mask)
                    xs.append(normalize(img, stats))
                    gs.append((mask > 0).astype(np.float64))
                x = np.concatenate(xs)
                g = np.stack(gs)[:, None]
                logits, cache = unet_forward(params, x, "train", cfg.unet)
                p = sigmoid(logits.astype(np.float64))
                loss, dp = composite_loss(p, g, cfg.loss, cfg.dice_smooth)
                if not math.isfinite(loss):
                    raise TrainingDiverged(f"non-finite loss at cycle {cycle} epoch {epoch}")
                dz = (dp * p * (1 - p)).astype(np.float32)
                grads, _ = unet_backward(dz, cache)
                params, velocity = sgd_step(params, grads, velocity, lr, cfg.momentum)
                for name, v in cache["bn_updates"].items():
                    params[name] = v
                losses.append(loss)
            epoch_total += 1
            val_j = evaluate_jaccard(params, val_data, stats, cfg.unet)
            line = (f"cycle={cycle} epoch={epoch} lr={lr:.6f} "
                    f"loss={float(np.mean(losses)):.6f} val_jaccard={val_j:.6f}")
            log.info(line)
            if on_epoch is not None:
                on_epoch(line)
        snapshots.append(Checkpoint(
            params=OrderedDict((k, v.copy()) for k, v in params.items()),
            cycle=cycle,
            epoch=epoch_total,
            lr=float(np.float32(lr)),
            digest=digest,
            stats=stats,
            input_size=tuple(cfg.input_size),
            bn_eps=float(np.float32(cfg.unet.bn_eps)),
        ))
    return snapshots
