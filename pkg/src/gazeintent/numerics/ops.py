"""Neural-net operations built on the Tensor core.

conv1d, softmax and log_softmax are primitives with hand-written
backward passes; layer_norm, attention and the losses are compositions
and get their gradients from the tape.
"""

from __future__ import annotations

import math

import numpy as np

from gazeintent.errors import ShapeError
from gazeintent.numerics.tensor import Tensor


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Temporal convolution with odd kernel width and same-length zero padding.

    x: (C_in, T) or (B, C_in, T); kernels: (C_out, C_in, K); bias: (C_out,).
    Output has the same temporal length T.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 3 or kernels.ndim != 3:
        raise ShapeError(f"conv1d expects (B,C_in,T) and (C_out,C_in,K), got {x.shape}, {kernels.shape}")
    B, c_in, T = x.shape
    c_out, c_in_k, K = kernels.shape
    if c_in != c_in_k:
        raise ShapeError(f"conv1d channel mismatch: input {c_in}, kernel {c_in_k}")
    if K % 2 != 1:
        raise ShapeError(f"conv1d kernel width must be odd, got {K}")
    if T < 1:
        raise ShapeError("conv1d requires at least one time step")
    pad = (K - 1) // 2

    a, w, b = x, kernels, bias
    xp = np.pad(a.data, ((0, 0), (0, 0), (pad, pad)))
    out = np.zeros((B, c_out, T), dtype=a.dtype)
    for k in range(K):
        # (B,C_in,T) x (C_out,C_in) -> (B,C_out,T)
        out += np.einsum("bit,oi->bot", xp[:, :, k:k + T], w.data[:, :, k], optimize=True)
    out += b.data[None, :, None]

    def backward(g):
        gb = g.sum(axis=(0, 2))
        gw = np.zeros_like(w.data)
        gxp = np.zeros_like(xp)
        for k in range(K):
            gw[:, :, k] = np.einsum("bot,bit->oi", g, xp[:, :, k:k + T], optimize=True)
            gxp[:, :, k:k + T] += np.einsum("bot,oi->bit", g, w.data[:, :, k], optimize=True)
        gx = gxp[:, :, pad:pad + T] if pad else gxp
        return [(a, np.ascontiguousarray(gx)), (w, gw), (b, gb)]

    res = Tensor._result(out, (a, w, b), backward)
    if squeeze:
        res = res.reshape(res.shape[1:])
    return res


def softmax_lastaxis(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    a = x
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return [(a, y * (g - dot))]

    return Tensor._result(y, (a,), backward)


def log_softmax_lastaxis(x: Tensor) -> Tensor:
    a = x
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def backward(g):
        return [(a, g - sm * g.sum(axis=-1, keepdims=True))]

    return Tensor._result(out, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if x.shape[-1] < 1:
        raise ShapeError("layer_norm needs a non-empty last axis")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = (var + eps).power(-0.5)
    return xc * inv * gamma + beta


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(QK^T / sqrt(d)) V over the last two axes; supports leading batch dims."""
    d = q.shape[-1]
    if d == 0:
        raise ShapeError("attention feature dimension must be positive")
    if k.shape[-1] != d:
        raise ShapeError(f"Q/K feature dims disagree: {q.shape} vs {k.shape}")
    if v.shape[-2] != k.shape[-2]:
        raise ShapeError(f"K/V lengths disagree: {k.shape} vs {v.shape}")
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
    return softmax_lastaxis(scores) @ v


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences over all elements."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return (diff * diff).mean()


def weighted_cross_entropy(logits: Tensor, labels: np.ndarray,
                           class_weights: Tensor) -> Tensor:
    """Class-weighted cross entropy, normalized by the sum of sample weights.

    labels are integer class ids; class_weights is a constant per-class
    weight vector (strictly positive).
    """
    labels = np.asarray(labels)
    n_classes = logits.shape[-1]
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    if np.any(class_weights.data <= 0):
        raise ValueError("class weights must be strictly positive")
    logp = log_softmax_lastaxis(logits)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(labels.size), labels] = 1.0
    w = class_weights.data[labels].astype(logits.dtype)
    per_sample = -(logp * Tensor(onehot, dtype=logits.dtype)).sum(axis=-1)
    weighted = (per_sample * Tensor(w, dtype=logits.dtype)).sum()
    return weighted * (1.0 / float(w.sum()))
