"""Image and field containers, unit conversion and viewing geometry.

All luminance math runs on float64 arrays normalised to [0, 1]. Containers
copy their input and freeze it, so every value object is immutable once built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError

LUMA_WEIGHTS = (0.2126, 0.7152, 0.0722)

# Slack for float round-off when validating ranges; values are never shifted.
_RANGE_EPS = 1e-12


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


def _check_range(data: np.ndarray, lo: float, hi: float, what: str) -> None:
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{what} contains non-finite values")
    if data.size and (data.min() < lo - _RANGE_EPS or data.max() > hi + _RANGE_EPS):
        raise ValueError(
            f"{what} values must lie in [{lo}, {hi}], got [{data.min():g}, {data.max():g}]"
        )


@dataclass(frozen=True, eq=False)
class Raster:
    """Single-plane intensity image, shape ``(height, width)``, values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 2 or min(data.shape) < 1:
            raise ValueError(f"Raster needs a non-empty 2-D array, got shape {data.shape}")
        _check_range(data, 0.0, 1.0, "Raster")
        object.__setattr__(self, "data", data)

    @classmethod
    def clipped(cls, arr: np.ndarray) -> "Raster":
        return cls(np.clip(arr, 0.0, 1.0))

    @classmethod
    def uniform(cls, value: float, width: int, height: int) -> "Raster":
        return cls(np.full((height, width), float(value)))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class ColorRaster:
    """Three-plane RGB image, shape ``(height, width, 3)``, values in [0, 1].

    Used for target pictures, movie frames and reflectance maps alike.
    """

    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 3 or data.shape[2] != 3 or min(data.shape[:2]) < 1:
            raise ValueError(f"ColorRaster needs shape (h, w, 3), got {data.shape}")
        _check_range(data, 0.0, 1.0, "ColorRaster")
        object.__setattr__(self, "data", data)

    @classmethod
    def clipped(cls, arr: np.ndarray) -> "ColorRaster":
        return cls(np.clip(arr, 0.0, 1.0))

    @classmethod
    def from_gray(cls, raster: Raster) -> "ColorRaster":
        return cls(np.repeat(raster.data[:, :, None], 3, axis=2))

    @classmethod
    def from_planes(cls, r: Raster, g: Raster, b: Raster) -> "ColorRaster":
        return cls(np.stack([r.data, g.data, b.data], axis=2))

    def planes(self) -> tuple[Raster, Raster, Raster]:
        return tuple(Raster(self.data[:, :, c]) for c in range(3))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]


@dataclass(frozen=True, eq=False)
class Residual:
    """Signed difference frame in [-1, 1]; gray ``(h, w)`` or colour ``(h, w, 3)``.

    Kept apart from Raster because it is not displayable until an offset is added.
    """

    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim not in (2, 3) or min(data.shape[:2]) < 1:
            raise ValueError(f"Residual needs a 2-D or 3-D array, got shape {data.shape}")
        _check_range(data, -1.0, 1.0, "Residual")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """One frame of a deformation map: per-pixel (dx, dy) in centimetres."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        dx = _frozen(self.dx)
        dy = _frozen(self.dy)
        if dx.ndim != 2 or min(dx.shape) < 1:
            raise ValueError(f"field planes must be non-empty 2-D arrays, got {dx.shape}")
        if dx.shape != dy.shape:
            raise DimensionMismatchError(f"dx plane {dx.shape} != dy plane {dy.shape}")
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))):
            raise ValueError("displacement field contains non-finite values")
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "dy", dy)

    @classmethod
    def zeros(cls, width: int, height: int) -> "DisplacementField":
        z = np.zeros((height, width))
        return cls(z, z)

    @property
    def width(self) -> int:
        return self.dx.shape[1]

    @property
    def height(self) -> int:
        return self.dx.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.dx.shape


@dataclass(frozen=True)
class ViewingGeometry:
    distance_cm: float
    pixel_pitch_cm: float

    def __post_init__(self):
        if not (math.isfinite(self.distance_cm) and self.distance_cm > 0):
            raise ValueError(f"distance_cm must be > 0, got {self.distance_cm}")
        if not (math.isfinite(self.pixel_pitch_cm) and self.pixel_pitch_cm > 0):
            raise ValueError(f"pixel_pitch_cm must be > 0, got {self.pixel_pitch_cm}")

    @classmethod
    def for_print(cls, size_cm: float, pixels: int, distance_cm: float) -> "ViewingGeometry":
        """Geometry for a square print of ``size_cm`` rendered at ``pixels`` across."""
        return cls(distance_cm=distance_cm, pixel_pitch_cm=size_cm / pixels)


@dataclass(frozen=True)
class SequenceSpec:
    frame_count: int
    fps: float = 60.0

    def __post_init__(self):
        if int(self.frame_count) != self.frame_count or self.frame_count < 1:
            raise ValueError(f"frame_count must be an integer >= 1, got {self.frame_count}")
        if not (math.isfinite(self.fps) and self.fps > 0):
            raise ValueError(f"fps must be > 0, got {self.fps}")

    def times(self) -> np.ndarray:
        return np.arange(self.frame_count) / self.fps


def cm_to_px(length_cm, geom: ViewingGeometry):
    """Convert a physical length (scalar or array) to fractional pixels."""
    return length_cm / geom.pixel_pitch_cm


def px_to_cm(length_px, geom: ViewingGeometry):
    return length_px * geom.pixel_pitch_cm


def visual_angle_deg(extent_cm: float, geom: ViewingGeometry) -> float:
    """Full angle subtended by ``extent_cm`` centred on the line of sight."""
    if extent_cm < 0:
        raise ValueError(f"extent must be >= 0, got {extent_cm}")
    return math.degrees(2.0 * math.atan(extent_cm / (2.0 * geom.distance_cm)))


def to_luminance(image: ColorRaster) -> Raster:
    lum = image.data @ np.asarray(LUMA_WEIGHTS)
    # weights sum to 1, so any excursion is round-off
    return Raster.clipped(lum)


def check_same_shape(*items, what: str = "inputs") -> tuple[int, int]:
    shapes = {tuple(it.shape) for it in items}
    if len(shapes) != 1:
        raise DimensionMismatchError(f"{what} differ in size: {sorted(shapes)}")
    return shapes.pop()
