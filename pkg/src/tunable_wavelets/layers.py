"""Forward/backward numpy primitives for small convolutional networks.

Tensors are ``(batch, channels, height, width)``. Each ``*_forward`` returns the
output and a cache consumed by the matching ``*_backward``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError


def conv2d_forward(x, w, b=None, stride=1, pad=1):
    """Cross-correlation of ``x`` with ``w`` of shape ``(out, in, kh, kw)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv expects (B, {w.shape[1]}, H, W), got {x.shape}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    o, c, kh, kw = w.shape
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    bsz, _, ho, wo = windows.shape[:4]
    # im2col rows ordered (b, i, j); columns ordered (c, kh, kw) to match w
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(-1, c * kh * kw)
    out = cols @ w.reshape(o, -1).T
    if b is not None:
        out += b
    out = np.ascontiguousarray(out.reshape(bsz, ho, wo, o).transpose(0, 3, 1, 2))
    return out, (cols, xp.shape, w, stride, pad)


def conv2d_backward(grad, cache, input_grad=True):
    """Gradients ``(dx, dw, db)``; ``dx`` is None when ``input_grad`` is False."""
    cols, padded_shape, w, stride, pad = cache
    o, c, kh, kw = w.shape
    bsz, _, ho, wo = grad.shape
    glast = np.ascontiguousarray(grad.transpose(0, 2, 3, 1))
    gmat = glast.reshape(-1, o)
    gw = (gmat.T @ cols).reshape(w.shape)
    gb = gmat.sum(axis=0)
    if not input_grad:
        return None, gw, gb
    gxp = np.zeros((padded_shape[0], padded_shape[2], padded_shape[3], c))
    for i in range(kh):
        for j in range(kw):
            gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += glast @ w[:, :, i, j]
    gxp = gxp.transpose(0, 3, 1, 2)
    if pad:
        gxp = gxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(gxp), gw, gb


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(grad, mask):
    return grad * mask


def _blocks(x):
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"2x2 pooling needs even spatial dims, got {h}x{w}")
    return x.reshape(b, c, h // 2, 2, w // 2, 2)


def maxpool_forward(x):
    blocks = _blocks(x)
    out = blocks.max(axis=(3, 5))
    # first maximum in each window takes the gradient
    flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(*out.shape, 4)
    arg = flat.argmax(axis=-1)
    return out, (x.shape, arg)


def maxpool_backward(grad, cache):
    shape, arg = cache
    b, c, h, w = shape
    flat = np.zeros((*grad.shape, 4))
    np.put_along_axis(flat, arg[..., None], grad[..., None], axis=-1)
    return flat.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


def avgpool_forward(x):
    return _blocks(x).mean(axis=(3, 5)), x.shape


def avgpool_backward(grad, shape):
    g = np.repeat(np.repeat(grad, 2, axis=2), 2, axis=3)
    return g.reshape(shape) * 0.25


def global_avg_forward(x):
    return x.mean(axis=(2, 3)), x.shape


def global_avg_backward(grad, shape):
    return np.broadcast_to(grad[:, :, None, None] / (shape[2] * shape[3]), shape).copy()


def linear_forward(x, w, b):
    return x @ w.T + b, x


def linear_backward(grad, x, w):
    return grad @ w, grad.T @ x, grad.sum(axis=0)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    n = logits.shape[0]
    loss = -log_probs[np.arange(n), labels].mean()
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n
