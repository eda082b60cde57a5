"""Functional network primitives with explicit backward passes.

Activations use a (C, B, H, W) layout so the im2col view reshapes straight
into a (C*9, B*H*W) GEMM operand without transposing. Every forward returns
(output, cache); the matching backward consumes the cache and returns input
and parameter gradients.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x):
    # exp(-x) overflowing to inf for very negative x still yields the correct
    # limit 1/(1+inf) = 0, so no branch is needed
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def silu_forward(x):
    s = _sigmoid(x)
    return x * s, (x, s)


def silu_backward(gy, cache):
    x, s = cache
    return gy * (s * (1.0 + x * (1.0 - s)))


def _pad1(x):
    c, b, h, w = x.shape
    xp = np.zeros((c, b, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1:h + 1, 1:w + 1] = x
    return xp


def _im2col(xp, h_out, w_out, stride):
    c = xp.shape[0]
    b = xp.shape[1]
    cols = np.empty((9 * c, b * h_out * w_out), dtype=xp.dtype)
    for ki in range(9):
        di, dj = divmod(ki, 3)
        view = xp[:, :, di:di + stride * h_out:stride, dj:dj + stride * w_out:stride]
        cols[ki * c:(ki + 1) * c] = view.reshape(c, -1)
    return cols


def _col2im(gcols, c, b, h, w, h_out, w_out, stride):
    gxp = np.zeros((c, b, h + 2, w + 2), dtype=gcols.dtype)
    for ki in range(9):
        di, dj = divmod(ki, 3)
        gxp[:, :, di:di + stride * h_out:stride, dj:dj + stride * w_out:stride] += \
            gcols[ki * c:(ki + 1) * c].reshape(c, b, h_out, w_out)
    return gxp[:, :, 1:h + 1, 1:w + 1]


def conv3x3_forward(x, w, bias, stride: int = 1):
    """3x3 convolution, zero padding 1; stride 1 (same) or 2 (halving).

    w has shape (c_out, c_in, 3, 3).
    """
    c_in, b, h, wd = x.shape
    h_out, w_out = h // stride, wd // stride
    cols = _im2col(_pad1(x), h_out, w_out, stride)
    wmat = np.ascontiguousarray(w.transpose(2, 3, 1, 0).reshape(9 * c_in, -1).T)
    y = wmat @ cols
    y += bias[:, None]
    y = y.reshape(-1, b, h_out, w_out)
    return y, (cols, wmat, x.shape, stride)


def conv3x3_backward(gy, cache):
    cols, wmat, x_shape, stride = cache
    c_in, b, h, w = x_shape
    c_out = gy.shape[0]
    h_out, w_out = gy.shape[2], gy.shape[3]
    g = gy.reshape(c_out, -1)
    gb = g.sum(axis=1)
    gwmat = g @ cols.T                                  # (c_out, 9*c_in)
    gw = gwmat.reshape(c_out, 3, 3, c_in).transpose(0, 3, 1, 2)
    gcols = wmat.T @ g
    gx = _col2im(gcols, c_in, b, h, w, h_out, w_out, stride)
    return gx, np.ascontiguousarray(gw), gb


def groupnorm_forward(x, gamma, beta, groups: int, eps: float = 1e-5):
    """Group normalization over (channels-in-group, H, W) per sample."""
    c, b, h, w = x.shape
    g = min(groups, c)
    while c % g != 0:
        g -= 1
    xg = x.reshape(g, c // g, b, h, w)
    mean = xg.mean(axis=(1, 3, 4), keepdims=True)
    var = xg.var(axis=(1, 3, 4), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv).reshape(c, b, h, w)
    y = gamma[:, None, None, None] * xhat + beta[:, None, None, None]
    return y, (xhat, inv, gamma, g)


def groupnorm_backward(gy, cache):
    xhat, inv, gamma, g = cache
    c, b, h, w = gy.shape
    ggamma = (gy * xhat).sum(axis=(1, 2, 3))
    gbeta = gy.sum(axis=(1, 2, 3))
    gxhat = (gy * gamma[:, None, None, None]).reshape(g, c // g, b, h, w)
    xhat_g = xhat.reshape(g, c // g, b, h, w)
    n = (c // g) * h * w
    dot = (gxhat * xhat_g).mean(axis=(1, 3, 4), keepdims=True)
    mean_g = gxhat.mean(axis=(1, 3, 4), keepdims=True)
    gx = inv * (gxhat - mean_g - xhat_g * dot)
    return gx.reshape(c, b, h, w), ggamma, gbeta


def upsample2x_forward(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3), x.shape


def upsample2x_backward(gy, x_shape):
    c, b, h, w = x_shape
    return gy.reshape(c, b, h, 2, w, 2).sum(axis=(3, 5))


def linear_forward(x, w, bias):
    """x: (batch, n_in); w: (n_out, n_in)."""
    return x @ w.T + bias, (x, w)


def linear_backward(gy, cache):
    x, w = cache
    return gy @ w, gy.T @ x, gy.sum(axis=0)


def time_embedding(k, dim: int, dtype=np.float64):
    """Sinusoidal embedding of integer timesteps; (batch, dim), dim even."""
    if dim % 2 != 0:
        raise ValueError("embedding dimension must be even")
    k = np.atleast_1d(np.asarray(k, dtype=float))
    half = dim // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = np.exp(-np.log(10000.0) * np.arange(half) / (half - 1))
    ang = k[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(dtype)
