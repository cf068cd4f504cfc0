"""Shared numeric primitives: activations, norms, dense layers, conv, attention."""

from __future__ import annotations

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.astype(x.dtype) if x.dtype == np.float32 else out


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x) without overflow for large |x|
    return np.logaddexp(0.0, x)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def layer_norm(
    x: np.ndarray, scale: np.ndarray, shift: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Normalize over the last axis, then apply elementwise scale and shift."""
    x64 = x.astype(np.float64)
    mean = x64.mean(axis=-1, keepdims=True)
    var = x64.var(axis=-1, keepdims=True)
    normed = (x64 - mean) / np.sqrt(var + eps)
    return (normed * scale + shift).astype(np.float32)


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """x (..., Cin) @ w (Cin, Cout) + b."""
    out = x @ w
    if b is not None:
        out = out + b
    return out


def conv2d(
    x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None, stride: int = 1
) -> np.ndarray:
    """2-D convolution on (H, W, Cin) with kernel (kh, kw, Cin, Cout), same padding.

    Padding is (k-1)//2 per side, so odd kernels keep spatial size at stride 1.
    """
    kh, kw, cin, cout = kernel.shape
    h, w = x.shape[:2]
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (w + 2 * pw - kw) // stride + 1
    out = np.zeros((ho, wo, cout), dtype=np.float64)
    for di in range(kh):
        for dj in range(kw):
            patch = xp[di : di + ho * stride : stride, dj : dj + wo * stride : stride]
            out += patch.astype(np.float64) @ kernel[di, dj].astype(np.float64)
    if bias is not None:
        out += bias
    return out.astype(np.float32)


def max_pool2d_same(x: np.ndarray, k: int = 3) -> np.ndarray:
    """Max pool (H, W) or (H, W, C) with k x k window, stride 1, same padding."""
    p = (k - 1) // 2
    if x.ndim == 2:
        xp = np.pad(x, ((p, p), (p, p)), constant_values=-np.inf)
        stack = [
            xp[di : di + x.shape[0], dj : dj + x.shape[1]]
            for di in range(k)
            for dj in range(k)
        ]
    else:
        xp = np.pad(x, ((p, p), (p, p), (0, 0)), constant_values=-np.inf)
        stack = [
            xp[di : di + x.shape[0], dj : dj + x.shape[1], :]
            for di in range(k)
            for dj in range(k)
        ]
    return np.max(np.stack(stack), axis=0)


def sinusoidal_encoding(pos: np.ndarray, dim: int) -> np.ndarray:
    """Standard sin/cos encoding of scalar positions (n,) into (n, dim); dim even."""
    if dim % 2:
        raise ValueError("sinusoidal_encoding: dim must be even")
    i = np.arange(dim // 2, dtype=np.float64)
    freq = 1.0 / (10000.0 ** (2.0 * i / dim))
    ang = pos.astype(np.float64)[:, None] * freq[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1).astype(np.float32)


def posenc_2d(rows: np.ndarray, cols: np.ndarray, dim: int) -> np.ndarray:
    """2-D positional encoding: half the channels encode row, half column."""
    if dim % 4:
        raise ValueError("posenc_2d: dim must be divisible by 4")
    half = dim // 2
    return np.concatenate(
        [sinusoidal_encoding(rows, half), sinusoidal_encoding(cols, half)], axis=-1
    )


def scaled_dot_attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Single-head attention: returns (output (nq, dv), weights (nq, nk))."""
    scale = 1.0 / np.sqrt(q.shape[-1])
    logits = (q.astype(np.float64) @ k.astype(np.float64).T) * scale
    weights = softmax(logits, axis=-1)
    out = weights @ v.astype(np.float64)
    return out.astype(np.float32), weights.astype(np.float32)
