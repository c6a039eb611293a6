"""Scan preprocessing: adaptive energy crop and HH-suppressed wavelet denoising."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dwt2d import SubbandSet, decompose, reconstruct, square_plans
from .errors import InvalidParameterError
from .filterbank import TAPS_BY_FAMILY, CoefficientFilterBank, init_filter_bank


@dataclass(frozen=True, eq=False)
class CropReport:
    first_row: int
    last_row: int
    threshold: float
    row_energies: np.ndarray
    degenerate: bool = False


def as_raster(img) -> np.ndarray:
    """Validate a grayscale image and return it as a float64 2-D array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidParameterError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError("image contains non-finite pixels")
    return arr


def row_energy(img) -> np.ndarray:
    """Sum of absolute pixel values along each row."""
    return np.abs(as_raster(img)).sum(axis=1)


def energy_crop(img, a: float = 0.5):
    """Keep the rows between the first and last whose energy exceeds the threshold.

    The threshold is ``mean(E) - a * std(E)`` over all row energies, with the
    population standard deviation. Columns are never cropped. If no row
    exceeds the threshold the full image is returned and the report is
    flagged ``degenerate``.
    """
    arr = as_raster(img)
    if not np.isfinite(a):
        raise InvalidParameterError("a must be finite")
    energies = np.abs(arr).sum(axis=1)
    threshold = float(energies.mean() - a * energies.std())
    above = np.flatnonzero(energies > threshold)
    if above.size == 0:
        report = CropReport(0, arr.shape[0] - 1, threshold, energies, degenerate=True)
        return arr.copy(), report
    first, last = int(above[0]), int(above[-1])
    return arr[first:last + 1].copy(), CropReport(first, last, threshold, energies)


def resolve_filters(wavelet) -> CoefficientFilterBank:
    """Accept a bank, or a family name among haar/db2/db3/db4."""
    if isinstance(wavelet, str):
        key = wavelet.lower()
        if key not in TAPS_BY_FAMILY:
            raise InvalidParameterError(f"unknown wavelet {wavelet!r}")
        return init_filter_bank(TAPS_BY_FAMILY[key], mode="free")
    return wavelet


def pad_to_even(img):
    """Replicate the last row/column when a dimension is odd.

    Returns the padded image and the ``(rows, cols)`` pad that was added.
    """
    pad = (img.shape[0] % 2, img.shape[1] % 2)
    if pad == (0, 0):
        return img, pad
    return np.pad(img, ((0, pad[0]), (0, pad[1])), mode="edge"), pad


def wavelet_denoise(img, filters="db2") -> np.ndarray:
    """Decompose once, drop the HH subband, and synthesize from LL, LH, HL."""
    arr = as_raster(img)
    bank = resolve_filters(filters)
    padded, pad = pad_to_even(arr)
    if bank.taps > min(padded.shape):
        raise InvalidParameterError(
            f"{bank.taps}-tap filter is longer than the padded image side {min(padded.shape)}"
        )
    rows, cols = square_plans(bank, *padded.shape)
    bands = decompose(rows, cols, padded)
    kept = SubbandSet(bands.ll, bands.lh, bands.hl, np.zeros_like(bands.hh))
    out = reconstruct(rows, cols, kept)
    return out[: arr.shape[0], : arr.shape[1]]


def preprocess(img, a: float = 0.5, wavelet="db2"):
    """Energy crop followed by wavelet denoising; returns the image and crop report."""
    cropped, report = energy_crop(img, a)
    return wavelet_denoise(cropped, wavelet), report
