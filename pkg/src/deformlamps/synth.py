"""Projection-signal synthesis.

The chain for one frame is: warp the static luminance image by the frame's
deformation map, subtract the static image to get a signed residual, scale
it by a weight and lift it onto a gray background so the projector never has
to emit negative light.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (ColorRaster, DisplacementField, Raster, Residual, ViewingGeometry,
                   check_same_shape)
from .errors import (ClippingError, DeformLampsError, EmptySequenceError,
                     MissingReflectanceError)
from .warp import WarpOptions, warp_image

log = logging.getLogger(__name__)

CLIP_POLICIES = ("clamp_and_report", "error_if_over")
COMPENSATIONS = ("off", "reflectance")


@dataclass(frozen=True)
class ProjectionParams:
    """Weight, background level, clipping and optional reflectance compensation.

    Defaults are the weight and mid-gray background used for the sinusoid
    threshold experiment.
    """

    weight_w: float = 0.4
    background_B: float = 0.5
    clip_policy: str = "clamp_and_report"
    clip_threshold: float = 0.0
    compensation: str = "off"
    k_min: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.background_B <= 1.0:
            raise ValueError(f"background_B must be in [0, 1], got {self.background_B}")
        if self.weight_w < 0:
            raise ValueError(f"weight_w must be >= 0, got {self.weight_w}")
        if self.clip_policy not in CLIP_POLICIES:
            raise ValueError(f"clip_policy must be one of {CLIP_POLICIES}")
        if not 0.0 <= self.clip_threshold <= 1.0:
            raise ValueError(f"clip_threshold must be in [0, 1], got {self.clip_threshold}")
        if self.compensation not in COMPENSATIONS:
            raise ValueError(f"compensation must be one of {COMPENSATIONS}")
        if self.compensation == "reflectance" and not 0.0 < self.k_min <= 1.0:
            raise ValueError(f"k_min must be in (0, 1], got {self.k_min}")


@dataclass(frozen=True)
class SynthesisReport:
    clipped_fraction: float
    min_value: float  # before clipping
    max_value: float


def decompose_movie(movie: Sequence[ColorRaster]) -> tuple[ColorRaster, list[Residual]]:
    """Split a movie into its temporal mean and signed per-frame deviations."""
    if not movie:
        raise EmptySequenceError("movie has no frames")
    check_same_shape(*movie, what="movie frames")
    stack = np.stack([f.data for f in movie])
    static = stack.mean(axis=0)
    return ColorRaster.clipped(static), [Residual(f - static) for f in stack]


def luminance_residual(lum_frame: Raster, lum_static: Raster) -> Residual:
    check_same_shape(lum_frame, lum_static, what="residual operands")
    return Residual(lum_frame.data - lum_static.data)


def effective_weight(params: ProjectionParams, K_lum: Raster | None, shape) -> np.ndarray | float:
    if params.compensation == "off":
        return params.weight_w
    if K_lum is None:
        raise MissingReflectanceError("reflectance compensation needs a luminance reflectance map")
    if K_lum.shape != tuple(shape):
        raise MissingReflectanceError(f"reflectance map {K_lum.shape} != residual {tuple(shape)}")
    return params.weight_w / np.maximum(K_lum.data, params.k_min)


def projection_signal_unclipped(residual: Residual, params: ProjectionParams,
                                K_lum: Raster | None = None) -> np.ndarray:
    return effective_weight(params, K_lum, residual.shape) * residual.data + params.background_B


def projection_signal(residual: Residual, params: ProjectionParams,
                      K_lum: Raster | None = None) -> tuple[Raster, SynthesisReport]:
    if residual.data.ndim != 2:
        raise ValueError("projection_signal expects a single-plane residual")
    raw = projection_signal_unclipped(residual, params, K_lum)
    clipped = (raw < 0.0) | (raw > 1.0)
    report = SynthesisReport(
        clipped_fraction=float(np.count_nonzero(clipped)) / raw.size,
        min_value=float(raw.min()),
        max_value=float(raw.max()),
    )
    if params.clip_policy == "error_if_over" and report.clipped_fraction > params.clip_threshold:
        raise ClippingError(report.clipped_fraction, params.clip_threshold)
    return Raster.clipped(raw), report


def select_keyframe(movie: Sequence[ColorRaster]) -> int:
    """Index of the frame closest (RMS) to the temporal mean; lowest index on ties."""
    if not movie:
        raise EmptySequenceError("movie has no frames")
    check_same_shape(*movie, what="movie frames")
    stack = np.stack([f.data for f in movie])
    mean = stack.mean(axis=0)
    rms = np.sqrt(np.mean((stack - mean) ** 2, axis=(1, 2, 3)))
    return int(np.argmin(rms))


def build_projection_sequence(
    target_lum: Raster,
    fields: Sequence[DisplacementField],
    geom: ViewingGeometry,
    warp_opts: WarpOptions = WarpOptions(),
    params: ProjectionParams = ProjectionParams(),
    K_lum: Raster | None = None,
) -> tuple[list[Raster], list[SynthesisReport]]:
    frames: list[Raster] = []
    reports: list[SynthesisReport] = []
    for k, field in enumerate(fields):
        try:
            warped = warp_image(target_lum, field, geom, warp_opts)
            frame, report = projection_signal(luminance_residual(warped, target_lum), params, K_lum)
        except DeformLampsError as exc:
            exc.frame_index = k
            raise
        if report.clipped_fraction > 0:
            log.debug("frame %d: %.2f%% of pixels clipped", k, 100 * report.clipped_fraction)
        frames.append(frame)
        reports.append(report)
    return frames, reports
