"""Neural-network primitives with hand-written backward passes."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _node, _wrap, matmul, reshape, transpose


class ConfigError(ValueError):
    """Invalid layer or experiment configuration."""


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with population variance, then scale and shift."""
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: features {d} vs gamma {gamma.shape} / beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data

    def backward(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _node(xhat * gd + beta.data, (x, gamma, beta), backward)


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; ``mask`` False entries get probability 0."""
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    m = z.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(z - m)
    s = e.sum(axis=-1, keepdims=True)
    p = e / np.where(s > 0, s, 1.0)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _node(p, (x,), backward)


def _logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))[..., 0]


def softmax_cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over unmasked rows.

    ``logits`` is ``[..., V]``; ``targets`` and ``mask`` have the leading shape.
    """
    z = logits.data
    v = z.shape[-1]
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != z.shape[:-1]:
        raise ShapeError(f"cross-entropy: targets {targets.shape} vs logits {z.shape}")
    mask = np.ones(targets.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("cross-entropy over an all-masked input is undefined")
    live = targets[mask]
    if live.size and (live.min() < 0 or live.max() >= v):
        raise IndexError(f"target id out of range [0, {v})")
    safe = np.where(mask, targets, 0)
    lse = _logsumexp(z)
    picked = np.take_along_axis(z, safe[..., None], axis=-1)[..., 0]
    nll = np.where(mask, lse - picked, 0.0)
    loss = nll.sum() / count

    def backward(g):
        p = np.exp(z - lse[..., None])
        np.put_along_axis(p, safe[..., None], np.take_along_axis(p, safe[..., None], axis=-1) - 1.0, axis=-1)
        return (p * (mask[..., None] * (float(g) / count)),)

    return _node(np.array(loss), (logits,), backward)


def mse_loss(a: Tensor, b: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Mean of (a - b)^2 over all elements (or over rows selected by ``mask``)."""
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse_loss: shapes differ {a.shape} vs {b.shape}")
    diff = a.data - b.data
    if mask is None:
        w = np.ones_like(diff)
    else:
        w = np.broadcast_to(np.asarray(mask, dtype=np.float64)[..., None], diff.shape)
    count = w.sum()
    if count == 0:
        raise ValueError("mse_loss over zero elements")
    loss = (w * diff * diff).sum() / count

    def backward(g):
        ga = (2.0 * float(g) / count) * w * diff
        return ga, -ga

    return _node(np.array(loss), (a, b), backward)


def depthwise_conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel 1-D convolution with zero 'same' padding along the time axis.

    ``x`` is ``[..., T, D]``, ``kernel`` is ``[w, D]`` with odd ``w``.
    out[t, d] = sum_j kernel[j, d] * x[t + j - w//2, d]
    """
    w = kernel.shape[0]
    if w % 2 == 0:
        raise ConfigError(f"depthwise_conv1d needs an odd kernel width, got {w}")
    if kernel.ndim != 2 or kernel.shape[1] != x.shape[-1]:
        raise ShapeError(f"depthwise_conv1d: kernel {kernel.shape} vs input {x.shape}")
    half = w // 2
    t = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(half, half), (0, 0)]
    xp = np.pad(x.data, pad)
    kd = kernel.data
    out = np.zeros_like(x.data)
    for j in range(w):
        out += xp[..., j : j + t, :] * kd[j]

    def backward(g):
        gp = np.zeros_like(xp)
        gk = np.zeros_like(kd)
        red = tuple(range(g.ndim - 1))
        for j in range(w):
            gp[..., j : j + t, :] += g * kd[j]
            gk[j] = (g * xp[..., j : j + t, :]).sum(axis=red)
        return gp[..., half : half + t, :], gk

    return _node(out, (x, kernel), backward)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., T, D] -> [..., H, T, D/H]."""
    *lead, t, d = x.shape
    if d % heads:
        raise ConfigError(f"model width {d} is not divisible by {heads} heads")
    y = reshape(x, tuple(lead) + (t, heads, d // heads))
    n = len(lead)
    return transpose(y, tuple(range(n)) + (n + 1, n, n + 2))


def merge_heads(x: Tensor) -> Tensor:
    *lead, h, t, dh = x.shape
    n = len(lead)
    y = transpose(x, tuple(range(n)) + (n + 1, n, n + 2))
    return reshape(y, tuple(lead) + (t, h * dh))


def causal_mask(t: int) -> np.ndarray:
    return np.tril(np.ones((t, t), dtype=bool))


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int, mask: np.ndarray | None = None) -> Tensor:
    """Multi-head scaled dot-product attention on already-projected q, k, v.

    ``mask`` broadcasts against ``[..., H, T, T]`` scores; True keeps a key.
    """
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    scale = 1.0 / np.sqrt(qh.shape[-1])
    scores = matmul(qh, transpose(kh)) * scale
    probs = softmax(scores, mask)
    return merge_heads(matmul(probs, vh))


def causal_self_attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor, heads: int) -> Tensor:
    """Causal multi-head self-attention with weights stored as ``[d_in, d_out]``."""
    if x.shape[-1] % heads:
        raise ConfigError(f"model width {x.shape[-1]} is not divisible by {heads} heads")
    t = x.shape[-2]
    out = attention(matmul(x, wq), matmul(x, wk), matmul(x, wv), heads, causal_mask(t))
    return matmul(out, wo)
