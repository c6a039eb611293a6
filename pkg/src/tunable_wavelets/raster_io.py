"""Reading and writing grayscale rasters: binary PGM (P5) and raw float32.

Raw float32 files are headerless little-endian arrays; their dimensions live in
a sidecar text file ``<name>.dims`` holding ``height width``.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError

RASTER_SUFFIXES = (".pgm", ".f32")

_PGM_HEADER = re.compile(rb"P5\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s")


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = _PGM_HEADER.match(data)
    if not m:
        raise InvalidParameterError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(g) for g in m.groups())
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    if len(data) - m.end() < count * dtype.itemsize:
        raise InvalidParameterError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(data, dtype=dtype, count=count, offset=m.end())
    return pixels.reshape(height, width).astype(np.float64)


def write_pgm(path, img, maxval=None) -> None:
    """Write ``img`` as P5, rounding and clipping to ``[0, maxval]``."""
    img = np.asarray(img, dtype=np.float64)
    if maxval is None:
        maxval = 255 if img.max(initial=0) <= 255 else 65535
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    pixels = np.clip(np.rint(img), 0, maxval).astype(dtype)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def dims_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".dims")


def read_raw_f32(path) -> np.ndarray:
    sidecar = dims_path(path)
    if not sidecar.exists():
        raise InvalidParameterError(f"{path}: missing dimension sidecar {sidecar.name}")
    try:
        height, width = (int(v) for v in sidecar.read_text().split())
    except ValueError as exc:
        raise InvalidParameterError(f"{sidecar}: expected 'height width'") from exc
    pixels = np.fromfile(path, dtype="<f4")
    if pixels.size != height * width:
        raise InvalidParameterError(
            f"{path}: {pixels.size} values, sidecar says {height}x{width}"
        )
    return pixels.reshape(height, width).astype(np.float64)


def write_raw_f32(path, img) -> None:
    img = np.asarray(img)
    np.asarray(img, dtype="<f4").tofile(path)
    dims_path(path).write_text(f"{img.shape[0]} {img.shape[1]}\n")


def read_raster(path) -> np.ndarray:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".f32":
        return read_raw_f32(path)
    raise InvalidParameterError(f"{path}: unsupported raster type {suffix!r}")


def output_path(path) -> Path:
    """``scan.pgm`` -> ``scan.prep.pgm`` beside the input."""
    path = Path(path)
    return path.with_name(f"{path.stem}.prep{path.suffix}")


def write_raster(path, img) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        write_pgm(path, img)
    elif suffix == ".f32":
        write_raw_f32(path, img)
    else:
        raise InvalidParameterError(f"{path}: unsupported raster type {suffix!r}")


def find_rasters(target):
    """Inputs under a file or directory, skipping previously written outputs."""
    target = Path(target)
    if target.is_file():
        return [target]
    if not target.is_dir():
        raise InvalidParameterError(f"{target}: no such file or directory")
    return sorted(
        p for p in target.iterdir()
        if p.suffix.lower() in RASTER_SUFFIXES and not p.stem.endswith(".prep")
    )
