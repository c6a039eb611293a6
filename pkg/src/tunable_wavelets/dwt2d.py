"""Single-level 2D DWT in matrix form with periodic boundaries.

A plan holds the analysis operators ``L = D C(h0)`` and ``H = D C(h1)`` for one
signal length, where ``C`` is the circulant correlation matrix of the filter and
``D`` keeps every second row. Row ``r`` of ``L`` carries ``h0[0..N-1]`` starting
at column ``2r`` and wrapping modulo the length.

For an image ``X`` (height x width) with a row plan (height) and a column plan
(width)::

    ll = Lr X Lc^T    lh = Hr X Lc^T
    hl = Lr X Hc^T    hh = Hr X Hc^T
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, ShapeError
from .filterbank import CoefficientFilterBank, as_filters


@dataclass(frozen=True, eq=False)
class DwtPlan:
    length: int
    lowpass_op: np.ndarray
    highpass_op: np.ndarray
    boundary: str = "periodic"


@dataclass(frozen=True, eq=False)
class SubbandSet:
    """The four quarter-size components of one decomposition.

    Arrays may carry leading batch/channel axes; the last two are spatial.
    """

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(b) for b in (self.ll, self.lh, self.hl, self.hh)}
        if len(shapes) != 1:
            raise ShapeError(f"subbands disagree in shape: {sorted(shapes)}")

    def as_tuple(self):
        return self.ll, self.lh, self.hl, self.hh


def analysis_matrix(taps, length: int) -> np.ndarray:
    """Downsampled circulant operator with ``taps`` laid out from column ``2r``."""
    taps = np.asarray(taps, dtype=np.float64)
    if length % 2 or length < taps.size:
        raise InvalidParameterError(
            f"length must be even and >= {taps.size} taps, got {length}"
        )
    op = np.zeros((length // 2, length))
    rows = np.arange(length // 2)
    for j, t in enumerate(taps):
        # np.add.at: taps alias onto the same column when length == taps
        np.add.at(op, (rows, (2 * rows + j) % length), t)
    return op


def tap_gradient(grad_op: np.ndarray, taps: int) -> np.ndarray:
    """Adjoint of :func:`analysis_matrix`: pull an operator gradient back to taps."""
    half, length = grad_op.shape
    rows = np.arange(half)
    return np.array([grad_op[rows, (2 * rows + j) % length].sum() for j in range(taps)])


@functools.lru_cache(maxsize=512)
def _cached_plan(h0_bytes, h1_bytes, length):
    h0 = np.frombuffer(h0_bytes)
    h1 = np.frombuffer(h1_bytes)
    low = analysis_matrix(h0, length)
    high = analysis_matrix(h1, length)
    low.setflags(write=False)
    high.setflags(write=False)
    return DwtPlan(length, low, high)


def build_plan(filters, length: int) -> DwtPlan:
    """Analysis operators for ``filters`` on signals of ``length`` samples.

    Accepts a :class:`CoefficientFilterBank` or a lattice bank (expanded first).
    Plans are cached by tap values and length.
    """
    if not isinstance(filters, CoefficientFilterBank):
        filters = as_filters(filters)
    length = int(length)
    if length % 2 or length < filters.taps:
        raise InvalidParameterError(
            f"plan length must be even and >= {filters.taps} taps, got {length}"
        )
    return _cached_plan(filters.h0.tobytes(), filters.h1.tobytes(), length)


def _check_plans(row_plan, col_plan, shape):
    if shape[-2] != row_plan.length or shape[-1] != col_plan.length:
        raise ShapeError(
            f"image is {shape[-2]}x{shape[-1]} but plans expect "
            f"{row_plan.length}x{col_plan.length}"
        )


def decompose(row_plan: DwtPlan, col_plan: DwtPlan, x) -> SubbandSet:
    """Split ``x`` (``..., height, width``) into ll, lh, hl, hh."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise ShapeError("decompose needs at least a 2-D array")
    _check_plans(row_plan, col_plan, x.shape)
    lr, hr = row_plan.lowpass_op, row_plan.highpass_op
    lc, hc = col_plan.lowpass_op, col_plan.highpass_op
    low_rows = lr @ x
    high_rows = hr @ x
    return SubbandSet(
        ll=low_rows @ lc.T,
        lh=high_rows @ lc.T,
        hl=low_rows @ hc.T,
        hh=high_rows @ hc.T,
    )


def reconstruct(row_plan: DwtPlan, col_plan: DwtPlan, s: SubbandSet) -> np.ndarray:
    """Adjoint synthesis ``Lr^T ll Lc + Hr^T lh Lc + Lr^T hl Hc + Hr^T hh Hc``."""
    half = (row_plan.length // 2, col_plan.length // 2)
    if np.shape(s.ll)[-2:] != half:
        raise ShapeError(f"subbands are {np.shape(s.ll)[-2:]}, plans expect {half}")
    lr, hr = row_plan.lowpass_op, row_plan.highpass_op
    lc, hc = col_plan.lowpass_op, col_plan.highpass_op
    return lr.T @ (s.ll @ lc + s.hl @ hc) + hr.T @ (s.lh @ lc + s.hh @ hc)


def square_plans(filters, height: int, width: int | None = None):
    """Row and column plans for an image of the given size."""
    width = height if width is None else width
    return build_plan(filters, height), build_plan(filters, width)
