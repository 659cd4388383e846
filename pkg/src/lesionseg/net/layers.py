"""
Forward/backward kernels on (N, C, H, W) arrays.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Kernels keep the input dtype,
so the network runs in float32 while gradient checks can run in float64.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .._interp import interp_matrix


def conv_out_size(size, k, stride, pad):
    # floor division: trailing rows that do not fit a full window are dropped
    return (size + 2 * pad - k) // stride + 1


def conv2d_forward(x, w, b, stride=1, pad=0):
    """Cross-correlation (no kernel flip) with zero padding.

    x: (N, C, H, W); w: (F, C, kh, kw); b: (F,).
    out: (N, F, (H + 2*pad - kh)//stride + 1, (W + 2*pad - kw)//stride + 1)
    """
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if c != cw:
        raise ValueError(f"conv2d: input has {c} channels, kernel expects {cw}")
    if b.shape != (f,):
        raise ValueError(f"conv2d: bias shape {b.shape} != ({f},)")
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(wd, kw, stride, pad)
    if oh < 1 or ow < 1:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{wd}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    # (N, oh, ow, C, kh, kw) -> rows of patches
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    out = cols @ w.reshape(f, -1).T + b
    out = out.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)
    cache = (x.shape, cols, w, stride, pad)
    return np.ascontiguousarray(out), cache


def conv2d_backward(dout, cache):
    x_shape, cols, w, stride, pad = cache
    n, c, h, wd = x_shape
    f, _, kh, kw = w.shape
    oh, ow = dout.shape[2], dout.shape[3]
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    db = dmat.sum(axis=0)
    dw = (dmat.T @ cols).reshape(w.shape)
    dcols = (dmat @ w.reshape(f, -1)).reshape(n, oh, ow, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
    return np.ascontiguousarray(dx), dw, db


def maxpool2_forward(x):
    """2x2 max pooling, stride 2. Ties go to the first element in row-major order."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2: spatial dims must be even, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1)  # argmax returns the first maximal index
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def maxpool2_backward(dout, cache):
    x_shape, arg = cache
    n, c, h, w = x_shape
    dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dx = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)
    return dx


def upsample_nearest2_forward(x):
    out = x.repeat(2, axis=2).repeat(2, axis=3)
    return out, x.shape


def upsample_nearest2_backward(dout, cache):
    n, c, h, w = cache
    return dout.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


def upsample_bilinear_forward(x, out_h, out_w):
    """Bilinear resize of the spatial dims with half-pixel centers."""
    ah = interp_matrix(x.shape[2], out_h, dtype=x.dtype)
    aw = interp_matrix(x.shape[3], out_w, dtype=x.dtype)
    out = np.einsum("oh,nchw,pw->ncop", ah, x, aw, optimize=True)
    return out, (ah, aw)


def upsample_bilinear_backward(dout, cache):
    ah, aw = cache
    return np.einsum("oh,ncop,pw->nchw", ah, dout, aw, optimize=True)


def batchnorm2d_forward(x, gamma, beta, running_mean, running_var, mode,
                        eps=1e-5, momentum=0.1):
    """Spatial batch norm.

    Returns ``(out, cache, (new_running_mean, new_running_var))``. Running
    statistics are never modified in place; in eval mode they come back
    unchanged.
    """
    n, c, h, w = x.shape
    if mode == "train":
        if n * h * w < 2:
            raise ValueError(f"batchnorm2d: degenerate batch ({n}x{h}x{w}) in train mode")
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        new_mean = (1 - momentum) * running_mean + momentum * mu
        new_var = (1 - momentum) * running_var + momentum * var
    elif mode == "eval":
        mu, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = (xhat, gamma, inv_std, mode)
    return out.astype(x.dtype, copy=False), cache, (new_mean.astype(x.dtype), new_var.astype(x.dtype))


def batchnorm2d_backward(dout, cache):
    xhat, gamma, inv_std, mode = cache
    dbeta = dout.sum(axis=(0, 2, 3))
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    g = gamma[None, :, None, None]
    s = inv_std[None, :, None, None]
    if mode == "eval":
        return dout * g * s, dgamma, dbeta
    dxhat = dout * g
    mean_dxhat = dxhat.mean(axis=(0, 2, 3), keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
    dx = s * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, x):
    return np.where(x > 0, dout, 0).astype(dout.dtype, copy=False)


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid_forward(z):
    s = sigmoid(z)
    return s, s


def sigmoid_backward(dout, s):
    return dout * s * (1 - s)
