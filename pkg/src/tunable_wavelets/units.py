"""Tunable wavelet downsampling units.

A unit decomposes every input channel into ll/lh/hl/hh with its own filter bank,
rectifies each subband, stacks them along channels in that order (block layout:
``[ll(C), lh(C), hl(C), hh(C)]``) and fuses them with a pointwise linear map
``4C_in -> C_out`` plus bias. The output has half the spatial resolution.

Two bank parameterizations are trainable:

* ``orthlatt`` -- lattice angles; the filters stay orthogonal for any angles.
* ``pr-relax`` -- free low-pass taps; the high-pass is derived by alias
  cancellation and the half-band condition is only encouraged by a penalty.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from .dwt2d import SubbandSet, decompose, reconstruct, square_plans, tap_gradient
from .errors import InvalidParameterError, ShapeError
from .filterbank import (
    CoefficientFilterBank,
    LatticeFilterBank,
    filters_jacobian,
    highpass_adjoint,
    init_filter_bank,
    lattice_to_filters,
)

MODES = ("orthlatt", "pr-relax")


@dataclass(eq=False)
class WaveletUnit:
    """Trainable unit state. ``bank_params`` holds angles or low-pass taps."""

    mode: str
    bank_params: np.ndarray
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidParameterError(f"unit mode must be one of {MODES}, got {self.mode!r}")
        self.bank_params = np.asarray(self.bank_params, dtype=np.float64)
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.weight.shape[1] % 4:
            raise ShapeError(f"fusion weight must be (C_out, 4*C_in), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("fusion bias must have one entry per output channel")

    @classmethod
    def create(cls, c_in, c_out=None, taps=2, mode="orthlatt"):
        """Unit initialized to the Daubechies bank and an average-pool fusion."""
        c_out = c_in if c_out is None else c_out
        bank = init_filter_bank(taps, "lattice" if mode == "orthlatt" else "free")
        params = bank.angles if mode == "orthlatt" else bank.h0
        weight = np.zeros((c_out, 4 * c_in))
        # ll path as identity / 2: undoes the LL gain of 2 for a DC signal
        weight[:, :c_in] = 0.5 * np.eye(c_out, c_in)
        return cls(mode, np.array(params), weight, np.zeros(c_out))

    @property
    def c_in(self) -> int:
        return self.weight.shape[1] // 4

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def bank(self):
        if self.mode == "orthlatt":
            return LatticeFilterBank(self.bank_params)
        return CoefficientFilterBank(self.bank_params)

    @property
    def filters(self) -> CoefficientFilterBank:
        bank = self.bank
        return lattice_to_filters(bank) if isinstance(bank, LatticeFilterBank) else bank

    @property
    def fusion_param_count(self) -> int:
        return self.weight.size + self.bias.size


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"feature map must be (C, H, W) or (B, C, H, W), got {x.shape}")


def unit_forward(unit: WaveletUnit, x):
    """Forward pass on a ``(B, C, H, W)`` batch; returns output and cache."""
    if x.shape[1] != unit.c_in:
        raise ShapeError(f"unit expects {unit.c_in} channels, got {x.shape[1]}")
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ShapeError(f"wavelet unit needs even spatial dims, got {h}x{w}")
    filters = unit.filters
    rows, cols = square_plans(filters, h, w)
    bands = decompose(rows, cols, x).as_tuple()
    masks = tuple(b > 0 for b in bands)
    stacked = np.concatenate([b * m for b, m in zip(bands, masks)], axis=1)
    out = np.tensordot(unit.weight, stacked, axes=([1], [1])).transpose(1, 0, 2, 3)
    out = out + unit.bias[None, :, None, None]
    return out, (x, filters.taps, rows, cols, masks, stacked)


def unit_backward_cached(unit: WaveletUnit, cache, grad):
    """Reverse pass given the forward cache.

    Returns ``grad_x``, ``(grad_weight, grad_bias)`` and the gradient with
    respect to ``unit.bank_params`` (angles or taps, per mode).
    """
    x, taps, rows, cols, masks, stacked = cache
    grad_weight = np.tensordot(grad, stacked, axes=([0, 2, 3], [0, 2, 3]))
    grad_bias = grad.sum(axis=(0, 2, 3))
    g_stacked = np.tensordot(unit.weight, grad, axes=([0], [1])).transpose(1, 0, 2, 3)
    c = unit.c_in
    g_ll, g_lh, g_hl, g_hh = (g_stacked[:, i * c:(i + 1) * c] * masks[i] for i in range(4))

    grad_x = reconstruct(rows, cols, SubbandSet(g_ll, g_lh, g_hl, g_hh))

    lr, hr = rows.lowpass_op, rows.highpass_op
    lc, hc = cols.lowpass_op, cols.highpass_op
    x_lc = x @ lc.T
    x_hc = x @ hc.T
    lr_x = lr @ x
    hr_x = hr @ x
    rows_axes = ([0, 1, 3], [0, 1, 3])  # contract batch, channel, column
    cols_axes = ([0, 1, 2], [0, 1, 2])  # contract batch, channel, row
    d_lr = np.tensordot(g_ll, x_lc, rows_axes) + np.tensordot(g_hl, x_hc, rows_axes)
    d_hr = np.tensordot(g_lh, x_lc, rows_axes) + np.tensordot(g_hh, x_hc, rows_axes)
    d_lc = np.tensordot(g_ll, lr_x, cols_axes) + np.tensordot(g_lh, hr_x, cols_axes)
    d_hc = np.tensordot(g_hl, lr_x, cols_axes) + np.tensordot(g_hh, hr_x, cols_axes)

    g_h0 = tap_gradient(d_lr, taps) + tap_gradient(d_lc, taps)
    g_h1 = tap_gradient(d_hr, taps) + tap_gradient(d_hc, taps)
    if unit.mode == "orthlatt":
        j0, j1 = filters_jacobian(unit.bank)
        grad_bank = j0.T @ g_h0 + j1.T @ g_h1
    else:
        grad_bank = g_h0 + highpass_adjoint(g_h1)
    return grad_x, (grad_weight, grad_bias), grad_bank


def wavelet_pool(unit: WaveletUnit, x) -> np.ndarray:
    """Decompose, rectify, and fuse; output spatial dims are halved."""
    xb, single = _as_batch(x)
    out, _ = unit_forward(unit, xb)
    return out[0] if single else out


def wavelet_downsample(unit: WaveletUnit, x) -> np.ndarray:
    """Same computation as :func:`wavelet_pool`, used at shortcut/downsampling sites."""
    return wavelet_pool(unit, x)


def wavelet_stride_conv(conv_weights, unit: WaveletUnit, x, conv_bias=None) -> np.ndarray:
    """Stride-1 3x3 same-padded convolution followed by :func:`wavelet_pool`."""
    conv_weights = np.asarray(conv_weights, dtype=np.float64)
    if conv_weights.shape[0] != unit.c_in:
        raise ShapeError(
            f"conv produces {conv_weights.shape[0]} channels, unit expects {unit.c_in}"
        )
    xb, single = _as_batch(x)
    pad = conv_weights.shape[-1] // 2
    y, _ = layers.conv2d_forward(xb, conv_weights, conv_bias, stride=1, pad=pad)
    out = wavelet_pool(unit, y)
    return out[0] if single else out


def unit_backward(unit: WaveletUnit, x, upstream_grad):
    """Gradients of ``sum(upstream_grad * wavelet_pool(unit, x))``.

    Returns ``(grad_x, (grad_weight, grad_bias), grad_bank_params)``. The bank
    gradient is with respect to lattice angles in ``orthlatt`` mode and the
    free low-pass taps in ``pr-relax`` mode. ReLU uses subgradient 0 at 0.
    """
    xb, single = _as_batch(x)
    g = np.asarray(upstream_grad, dtype=np.float64)
    g = g[None] if single else g
    out, cache = unit_forward(unit, xb)
    if g.shape != out.shape:
        raise ShapeError(f"upstream gradient {g.shape} does not match output {out.shape}")
    grad_x, grad_fusion, grad_bank = unit_backward_cached(unit, cache, g)
    return (grad_x[0] if single else grad_x), grad_fusion, grad_bank
