"""Inverse-mapping pixel warp driven by a displacement field.

A field stores the forward displacement of content, so the output pixel at
(x, y) samples the source at (x - dx, y - dy), with dx/dy converted from cm to
pixels. Pixel centres sit on integer coordinates, like Matlab's ``interp2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ColorRaster, DisplacementField, Raster, ViewingGeometry, cm_to_px
from .errors import DimensionMismatchError

BOUNDARIES = ("clamp", "periodic", "mirror")
INTERPOLATIONS = ("bilinear", "bicubic")


@dataclass(frozen=True)
class WarpOptions:
    boundary: str = "clamp"
    interpolation: str = "bilinear"

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(
                f"interpolation must be one of {INTERPOLATIONS}, got {self.interpolation!r}"
            )


def resolve_index(idx: np.ndarray, n: int, boundary: str) -> np.ndarray:
    """Map integer sample indices (possibly out of range) into ``[0, n)``."""
    if boundary == "clamp":
        return np.clip(idx, 0, n - 1)
    if boundary == "periodic":
        return np.mod(idx, n)
    # mirror about the edge samples without repeating them: d c b | a b c d | c b a
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    m = np.mod(idx, period)
    return np.where(m < n, m, period - m)


def _cubic_weights(f: np.ndarray) -> list[np.ndarray]:
    # Keys kernel with a = -0.5 at offsets -1, 0, 1, 2 from floor(x)
    a = -0.5
    f2 = f * f
    f3 = f2 * f
    w0 = a * (f3 - 2 * f2 + f)
    w1 = (a + 2) * f3 - (a + 3) * f2 + 1
    w2 = -(a + 2) * f3 + (2 * a + 3) * f2 - a * f
    w3 = -a * (f3 - f2)
    return [w0, w1, w2, w3]


def sample(src: np.ndarray, xs: np.ndarray, ys: np.ndarray, opts: WarpOptions) -> np.ndarray:
    """Interpolate a 2-D array at fractional coordinates ``(xs, ys)``."""
    h, w = src.shape
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    if opts.interpolation == "bilinear":
        offsets = (0, 1)
        wx = [1.0 - fx, fx]
        wy = [1.0 - fy, fy]
    else:
        offsets = (-1, 0, 1, 2)
        wx = _cubic_weights(fx)
        wy = _cubic_weights(fy)

    cols = [resolve_index(x0 + o, w, opts.boundary) for o in offsets]
    rows = [resolve_index(y0 + o, h, opts.boundary) for o in offsets]
    out = np.zeros(xs.shape)
    for j, r in enumerate(rows):
        acc = np.zeros(xs.shape)
        for i, c in enumerate(cols):
            acc += wx[i] * src[r, c]
        out += wy[j] * acc
    return out


def warp_array(src: np.ndarray, field: DisplacementField, geom: ViewingGeometry,
               opts: WarpOptions = WarpOptions()) -> np.ndarray:
    if src.shape[:2] != field.shape:
        raise DimensionMismatchError(f"image {src.shape[:2]} and field {field.shape} differ")
    h, w = field.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = xs - cm_to_px(field.dx, geom)
    sy = ys - cm_to_px(field.dy, geom)
    if src.ndim == 2:
        return sample(src, sx, sy, opts)
    return np.stack([sample(src[:, :, c], sx, sy, opts) for c in range(src.shape[2])], axis=2)


def warp_image(src: Raster, field: DisplacementField, geom: ViewingGeometry,
               opts: WarpOptions = WarpOptions()) -> Raster:
    return Raster.clipped(warp_array(src.data, field, geom, opts))


def warp_color(src: ColorRaster, field: DisplacementField, geom: ViewingGeometry,
               opts: WarpOptions = WarpOptions()) -> ColorRaster:
    return ColorRaster.clipped(warp_array(src.data, field, geom, opts))
