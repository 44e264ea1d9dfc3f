"""Observer-side image formation.

Projector light is achromatic and reaches every colour channel equally; the
printed surface is Lambertian, so what the eye receives is reflectance times
(ambient + projected) light. Optional Gaussian blur models projector optics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import ColorRaster, Raster, check_same_shape
from .errors import DimensionMismatchError

_SCIPY_MODES = {"clamp": "nearest", "periodic": "wrap", "mirror": "mirror"}


@dataclass(frozen=True, eq=False)
class SceneSetup:
    reflectance_K: ColorRaster
    ambient_Env: ColorRaster | float = 0.0
    blur_sigma: float = 0.0
    blur_boundary: str = "clamp"

    def __post_init__(self):
        if self.blur_sigma < 0:
            raise ValueError(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        if self.blur_boundary not in _SCIPY_MODES:
            raise ValueError(f"blur_boundary must be one of {tuple(_SCIPY_MODES)}")
        if isinstance(self.ambient_Env, ColorRaster):
            check_same_shape(self.reflectance_K, self.ambient_Env, what="reflectance and ambient")
        elif not (np.isfinite(self.ambient_Env) and self.ambient_Env >= 0):
            raise ValueError(f"ambient level must be >= 0, got {self.ambient_Env}")

    def ambient_array(self) -> np.ndarray | float:
        if isinstance(self.ambient_Env, ColorRaster):
            return self.ambient_Env.data
        return float(self.ambient_Env)


def blur(P: np.ndarray, sigma: float, boundary: str = "clamp") -> np.ndarray:
    if sigma == 0:
        return P
    return ndimage.gaussian_filter(P, sigma=sigma, mode=_SCIPY_MODES[boundary], truncate=4.0)


def composite_unclipped(scene: SceneSetup, P: Raster) -> np.ndarray:
    if P.shape != scene.reflectance_K.shape:
        raise DimensionMismatchError(
            f"projection frame {P.shape} != reflectance {scene.reflectance_K.shape}"
        )
    light = blur(P.data, scene.blur_sigma, scene.blur_boundary)[:, :, None]
    return scene.reflectance_K.data * (scene.ambient_array() + light)


def lambertian_composite(scene: SceneSetup, P: Raster) -> ColorRaster:
    return ColorRaster.clipped(composite_unclipped(scene, P))


def simulate_perceived_sequence(scene: SceneSetup, P_seq: Sequence[Raster]) -> list[ColorRaster]:
    return [lambertian_composite(scene, P) for P in P_seq]


def baseline_appearance(scene: SceneSetup, background_B: float) -> ColorRaster:
    """The picture as seen under the uniform background alone."""
    h, w = scene.reflectance_K.shape
    return lambertian_composite(scene, Raster.uniform(background_B, w, h))


def lcd_composite(object_image: ColorRaster, transmittance_frame: Raster) -> ColorRaster:
    """Object viewed through a transmissive panel: per-pixel multiplicative attenuation."""
    if object_image.shape != transmittance_frame.shape:
        raise DimensionMismatchError(
            f"object {object_image.shape} != transmittance {transmittance_frame.shape}"
        )
    return ColorRaster.clipped(object_image.data * transmittance_frame.data[:, :, None])
