"""Layer primitives as forward/backward pairs.

Feature maps are ``(N, C, H, W)``. Every ``*_forward`` returns
``(output, cache)`` and the matching ``*_backward(dy, cache)`` returns the
gradient with respect to each forward input, in order.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


# conv


def _im2col(xp: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, h, w, c, k, k), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[..., i, j] = xp[:, :, i : i + h, j : j + w].transpose(0, 2, 3, 1)
    return cols.reshape(n * h * w, c * k * k)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Stride-1 convolution with zero padding that preserves H and W.

    ``w`` is ``(C_out, C_in, k, k)`` with odd ``k``; ``b`` is ``(C_out,)``.
    """
    n, c, h, wd = x.shape
    co, ci, k, k2 = w.shape
    if ci != c or k != k2 or k % 2 == 0:
        raise ValueError(f"conv weight {w.shape} incompatible with input {x.shape}")
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    cols = _im2col(xp, k, h, wd)
    out = cols @ w.reshape(co, -1).T + b
    y = out.reshape(n, h, wd, co).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y), (x.shape, cols, w)


def conv2d_backward(dy: np.ndarray, cache):
    (n, c, h, wd), cols, w = cache
    co, _, k, _ = w.shape
    p = k // 2
    dmat = dy.transpose(0, 2, 3, 1).reshape(-1, co)
    dw = (dmat.T @ cols).reshape(w.shape)
    db = dmat.sum(axis=0)
    dcols = (dmat @ w.reshape(co, -1)).reshape(n, h, wd, c, k, k)
    dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + h, j : j + wd] += dcols[..., i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, p : p + h, p : p + wd] if p else dxp
    return dx, dw, db


def conv3x3_forward(x, w, b):
    if w.shape[-2:] != (3, 3):
        raise ValueError("conv3x3 expects a 3x3 kernel")
    return conv2d_forward(x, w, b)


conv3x3_backward = conv2d_backward


# pointwise


def leaky_relu_forward(x: np.ndarray, slope: float = 0.01):
    pos = x >= 0
    return np.where(pos, x, slope * x), (pos, slope)


def leaky_relu_backward(dy: np.ndarray, cache):
    pos, slope = cache
    return (np.where(pos, dy, slope * dy),)


def softplus_forward(x: np.ndarray):
    return np.logaddexp(0.0, x), x


def softplus_backward(dy: np.ndarray, x):
    return (dy / (1.0 + np.exp(-x)),)


# resampling


def avgpool2_forward(x: np.ndarray):
    """2x2 mean pooling. Equals bilinear downsampling by 2 with half-pixel centres."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avgpool2 needs even spatial dims, got {h}x{w}")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5)), None


def avgpool2_backward(dy: np.ndarray, cache=None):
    return (np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) / 4.0,)


@lru_cache(maxsize=32)
def upsample_matrix(size: int) -> np.ndarray:
    """``(2*size, size)`` matrix of bilinear x2 upsampling with half-pixel centres and edge clamping."""
    U = np.zeros((2 * size, size))
    for o in range(2 * size):
        src = (o + 0.5) / 2 - 0.5
        i0 = int(np.floor(src))
        t = src - i0
        U[o, min(max(i0, 0), size - 1)] += 1 - t
        U[o, min(max(i0 + 1, 0), size - 1)] += t
    U.setflags(write=False)
    return U


def upsample_bilinear_forward(x: np.ndarray):
    Uh = upsample_matrix(x.shape[2])
    Uw = upsample_matrix(x.shape[3])
    return Uh @ x @ Uw.T, (Uh, Uw)


def upsample_bilinear_backward(dy: np.ndarray, cache):
    Uh, Uw = cache
    return (Uh.T @ dy @ Uw,)


# structure


def concat_forward(*xs: np.ndarray):
    return np.concatenate(xs, axis=1), [x.shape[1] for x in xs]


def concat_backward(dy: np.ndarray, sizes):
    return tuple(np.split(dy, np.cumsum(sizes)[:-1], axis=1))


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """``x`` (N, in), ``w`` (out, in), ``b`` (out,)."""
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"dense weight {w.shape} incompatible with input {x.shape}")
    return x @ w.T + b, (x, w)


def dense_backward(dy: np.ndarray, cache):
    x, w = cache
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def global_avg_pool_forward(x: np.ndarray):
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(dy: np.ndarray, shape):
    n, c, h, w = shape
    return (np.broadcast_to(dy[:, :, None, None] / (h * w), shape).copy(),)
