"""Compact U-Net: 7x7/2 stem + max-pool, mirrored encoder/decoder with
1x1 channel-reducing convs on the way up, optional hypercolumn head.

Parameters live in a flat ordered dict ``name -> ndarray``. Layout for
``depth = D`` and ``base_filters = F``::

    stem        conv 7x7/2 pad 3   3 -> F        + BN + ReLU, maxpool2
    enc{i}      2 x (conv 3x3 + BN + ReLU)   F*2^(i-1) -> F*2^i, maxpool2
    bottleneck  2 x (conv 3x3 + BN + ReLU)   F*2^D -> F*2^(D+1)
    dec{i}      upsample2, reduce 1x1  F*2^(i+1) -> F*2^i,
                concat enc{i} skip, 2 x (conv 3x3 + BN + ReLU) -> F*2^i
    head        bilinear upsample to input size, conv 1x1 -> 1 logit

Decoder stages run i = D..1. With ``hypercolumn`` the head sees every
decoder output upsampled to input size and concatenated (deepest first).
"""

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import layers as L

RUNNING_SUFFIXES = (".running_mean", ".running_var")


@dataclass(frozen=True)
class UNetConfig:
    base_filters: int = 16
    depth: int = 3
    hypercolumn: bool = False
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.base_filters < 1:
            raise ValueError("base_filters must be >= 1")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @property
    def stride_total(self) -> int:
        # stem conv (2) * stem pool (2) * one pool per encoder stage
        return 2 ** (self.depth + 2)

    def head_channels(self) -> int:
        f, d = self.base_filters, self.depth
        if self.hypercolumn:
            return sum(f * 2 ** i for i in range(1, d + 1))
        return f * 2


def is_learnable(name: str) -> bool:
    return not name.endswith(RUNNING_SUFFIXES)


def architecture(config: UNetConfig):
    """Ordered (name, shape) table of every tensor in the network."""
    f, d = config.base_filters, config.depth
    table = []

    def conv(prefix, cin, cout, k):
        table.append((f"{prefix}.w", (cout, cin, k, k)))
        table.append((f"{prefix}.b", (cout,)))

    def bn(prefix, ch):
        for suffix in ("gamma", "beta", "running_mean", "running_var"):
            table.append((f"{prefix}.{suffix}", (ch,)))

    def block(prefix, cin, cout):
        conv(f"{prefix}.conv1", cin, cout, 3)
        bn(f"{prefix}.bn1", cout)
        conv(f"{prefix}.conv2", cout, cout, 3)
        bn(f"{prefix}.bn2", cout)

    conv("stem.conv", 3, f, 7)
    bn("stem.bn", f)
    for i in range(1, d + 1):
        block(f"enc{i}", f * 2 ** (i - 1), f * 2 ** i)
    block("bottleneck", f * 2 ** d, f * 2 ** (d + 1))
    for i in range(d, 0, -1):
        ch = f * 2 ** i
        conv(f"dec{i}.reduce", 2 * ch, ch, 1)
        block(f"dec{i}", 2 * ch, ch)
    conv("head", config.head_channels(), 1, 1)
    return table


def unet_init(config: UNetConfig, rng: np.random.Generator, dtype=np.float32):
    """He-normal (fan-in) weights, zero biases, BN gamma=1 beta=0, running var 1."""
    params = OrderedDict()
    for name, shape in architecture(config):
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[1:]))
            arr = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        elif name.endswith((".gamma", ".running_var")):
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        params[name] = arr.astype(dtype)
    return params


def infer_config(params, bn_eps=1e-5, bn_momentum=0.1) -> UNetConfig:
    """Recover the architecture from tensor names and shapes."""
    f = params["stem.conv.w"].shape[0]
    depth = sum(1 for k in params if k.startswith("enc") and k.endswith(".conv1.w"))
    cfg = UNetConfig(f, depth, False, bn_eps, bn_momentum)
    if params["head.w"].shape[1] != cfg.head_channels():
        cfg = UNetConfig(f, depth, True, bn_eps, bn_momentum)
    check_params(params, cfg)
    return cfg


def check_params(params, config: UNetConfig) -> None:
    table = architecture(config)
    expected = {n: s for n, s in table}
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ValueError(f"parameter names do not match architecture (missing {missing}, extra {extra})")
    for n, s in table:
        if tuple(params[n].shape) != s:
            raise ValueError(f"{n}: shape {params[n].shape} != {s}")


def _cbr_forward(x, params, prefix, conv_prefix, stride, pad, mode, config, bn_updates):
    y, c_conv = L.conv2d_forward(x, params[f"{conv_prefix}.w"], params[f"{conv_prefix}.b"], stride, pad)
    bn = prefix
    y, c_bn, running = L.batchnorm2d_forward(
        y, params[f"{bn}.gamma"], params[f"{bn}.beta"],
        params[f"{bn}.running_mean"], params[f"{bn}.running_var"],
        mode, config.bn_eps, config.bn_momentum,
    )
    bn_updates[f"{bn}.running_mean"], bn_updates[f"{bn}.running_var"] = running
    y, c_relu = L.relu_forward(y)
    return y, (conv_prefix, bn, c_conv, c_bn, c_relu)


def _cbr_backward(dy, cache, grads):
    conv_prefix, bn, c_conv, c_bn, c_relu = cache
    dy = L.relu_backward(dy, c_relu)
    dy, grads[f"{bn}.gamma"], grads[f"{bn}.beta"] = L.batchnorm2d_backward(dy, c_bn)
    dx, grads[f"{conv_prefix}.w"], grads[f"{conv_prefix}.b"] = L.conv2d_backward(dy, c_conv)
    return dx


def _block_forward(x, params, prefix, mode, config, bn_updates):
    y, c1 = _cbr_forward(x, params, f"{prefix}.bn1", f"{prefix}.conv1", 1, 1, mode, config, bn_updates)
    y, c2 = _cbr_forward(y, params, f"{prefix}.bn2", f"{prefix}.conv2", 1, 1, mode, config, bn_updates)
    return y, (c1, c2)


def _block_backward(dy, cache, grads):
    c1, c2 = cache
    return _cbr_backward(_cbr_backward(dy, c2, grads), c1, grads)


def unet_forward(params, x, mode="eval", config: UNetConfig = None):
    """Logits (N, 1, H, W) for input (N, 3, H, W).

    Returns ``(logits, cache)``. ``cache["bn_updates"]`` holds the running
    statistics a train-mode pass would produce; ``params`` is not modified.
    """
    if config is None:
        config = infer_config(params)
    n, c, h, w = x.shape
    if c != 3:
        raise ValueError(f"expected 3 input channels, got {c}")
    st = config.stride_total
    if h % st or w % st:
        raise ValueError(f"input {h}x{w} not divisible by {st} (depth {config.depth})")
    x = x.astype(params["stem.conv.w"].dtype, copy=False)
    bn_updates = {}
    cache = {"config": config, "bn_updates": bn_updates}

    y, cache["stem"] = _cbr_forward(x, params, "stem.bn", "stem.conv", 2, 3, mode, config, bn_updates)
    y, cache["stem.pool"] = L.maxpool2_forward(y)

    for i in range(1, config.depth + 1):
        y, cache[f"enc{i}"] = _block_forward(y, params, f"enc{i}", mode, config, bn_updates)
        cache[f"skip{i}"] = y.shape[1]
        cache[f"enc{i}.out"] = y
        y, cache[f"enc{i}.pool"] = L.maxpool2_forward(y)

    y, cache["bottleneck"] = _block_forward(y, params, "bottleneck", mode, config, bn_updates)

    dec_outs = []
    for i in range(config.depth, 0, -1):
        y, cache[f"dec{i}.up"] = L.upsample_nearest2_forward(y)
        y, cache[f"dec{i}.reduce"] = L.conv2d_forward(y, params[f"dec{i}.reduce.w"], params[f"dec{i}.reduce.b"])
        y = np.concatenate([y, cache.pop(f"enc{i}.out")], axis=1)
        y, cache[f"dec{i}"] = _block_forward(y, params, f"dec{i}", mode, config, bn_updates)
        dec_outs.append(y)

    if config.hypercolumn:
        feats = dec_outs
    else:
        feats = dec_outs[-1:]
    ups = []
    cache["head.up"] = []
    for fmap in feats:
        u, c_up = L.upsample_bilinear_forward(fmap, h, w)
        ups.append(u)
        cache["head.up"].append((c_up, fmap.shape[1]))
    head_in = ups[0] if len(ups) == 1 else np.concatenate(ups, axis=1)
    logits, cache["head"] = L.conv2d_forward(head_in, params["head.w"], params["head.b"])
    return logits, cache


def unet_backward(dlogits, cache):
    """Gradients for every learnable tensor plus d(loss)/d(input)."""
    config = cache["config"]
    grads = {}
    dhead, grads["head.w"], grads["head.b"] = L.conv2d_backward(dlogits, cache["head"])

    d = config.depth
    # split head gradient back onto the decoder outputs it came from
    ddec = {}
    start = 0
    stages = list(range(d, 0, -1)) if config.hypercolumn else [1]
    for stage, (c_up, ch) in zip(stages, cache["head.up"]):
        ddec[stage] = L.upsample_bilinear_backward(dhead[:, start:start + ch], c_up)
        start += ch

    dskip = {}
    dy = None
    for i in range(1, d + 1):
        g = ddec.get(i)
        if dy is not None:
            g = dy if g is None else g + dy
        g = _block_backward(g, cache[f"dec{i}"], grads)
        ch = cache[f"skip{i}"]
        dreduce, dskip[i] = g[:, :ch], g[:, ch:]
        dreduce, grads[f"dec{i}.reduce.w"], grads[f"dec{i}.reduce.b"] = L.conv2d_backward(
            np.ascontiguousarray(dreduce), cache[f"dec{i}.reduce"])
        dy = L.upsample_nearest2_backward(dreduce, cache[f"dec{i}.up"])

    dy = _block_backward(dy, cache["bottleneck"], grads)
    for i in range(d, 0, -1):
        dy = L.maxpool2_backward(dy, cache[f"enc{i}.pool"])
        dy = dy + dskip[i]
        dy = _block_backward(dy, cache[f"enc{i}"], grads)
    dy = L.maxpool2_backward(dy, cache["stem.pool"])
    dx = _cbr_backward(dy, cache["stem"], grads)
    return grads, dx


def predict_proba(params, x, config: UNetConfig = None):
    """Eval-mode sigmoid probabilities, shape (N, H, W)."""
    logits, _ = unet_forward(params, x, "eval", config)
    return L.sigmoid(logits[:, 0])
