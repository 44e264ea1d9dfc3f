"""PNG reading/writing for Raster and ColorRaster (8- and 16-bit, gray or RGB).

Quantisation to integers happens only here, with round-half-up.
"""

from __future__ import annotations

import os
from pathlib import Path

import cv2
import numpy as np

from .core import ColorRaster, Raster, to_luminance
from .errors import DeformLampsError

_DTYPES = {8: np.uint8, 16: np.uint16}

FRAME_PATTERN = "frame_{:06d}.png"


def quantize(data: np.ndarray, bit_depth: int = 16) -> np.ndarray:
    if bit_depth not in _DTYPES:
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    top = (1 << bit_depth) - 1
    return np.floor(np.clip(data, 0.0, 1.0) * top + 0.5).astype(_DTYPES[bit_depth])


def dequantize(raw: np.ndarray) -> np.ndarray:
    if raw.dtype == np.uint8:
        return raw.astype(np.float64) / 255.0
    if raw.dtype == np.uint16:
        return raw.astype(np.float64) / 65535.0
    raise DeformLampsError(f"unsupported PNG sample type {raw.dtype}")


def write_png(path: str | os.PathLike, image: Raster | ColorRaster, bit_depth: int = 16) -> None:
    raw = quantize(image.data, bit_depth)
    if raw.ndim == 3:
        raw = raw[:, :, ::-1]  # OpenCV stores BGR
    if not cv2.imwrite(str(path), np.ascontiguousarray(raw)):
        raise DeformLampsError(f"could not write {path}")


def _read_raw(path: str | os.PathLike) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DeformLampsError(f"could not read image {path}")
    if raw.ndim == 3:
        if raw.shape[2] == 4:
            raw = raw[:, :, :3]
        raw = raw[:, :, ::-1]
    return raw


def read_image(path: str | os.PathLike) -> Raster | ColorRaster:
    """Load a PNG as Raster (single channel) or ColorRaster (RGB/RGBA, alpha dropped)."""
    data = dequantize(_read_raw(path))
    return Raster(data) if data.ndim == 2 else ColorRaster(data)


def read_raster(path: str | os.PathLike) -> Raster:
    img = read_image(path)
    if isinstance(img, ColorRaster):
        return to_luminance(img)
    return img


def read_color(path: str | os.PathLike) -> ColorRaster:
    img = read_image(path)
    return ColorRaster.from_gray(img) if isinstance(img, Raster) else img


def write_frames(directory: str | os.PathLike, frames, bit_depth: int = 16) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        p = directory / FRAME_PATTERN.format(i)
        write_png(p, frame, bit_depth)
        paths.append(p)
    return paths


def list_frames(directory: str | os.PathLike) -> list[Path]:
    paths = sorted(Path(directory).glob("frame_*.png"))
    if not paths:
        raise DeformLampsError(f"no frame_*.png files in {directory}")
    return paths
