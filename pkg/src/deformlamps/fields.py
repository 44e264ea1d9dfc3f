"""Deformation-map generators and the DLF1 field-sequence file format.

DLF1 layout, one record per frame, records simply concatenated::

    b"DLF1" | width u32 LE | height u32 LE | dx f32 LE[h*w] | dy f32 LE[h*w]

Planes are row-major. Values are stored as float32, so a save/load round trip
is exact for data that already went through the file once.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import DisplacementField, SequenceSpec, ViewingGeometry
from .errors import DimensionMismatchError, MalformedFieldFileError, NyquistError

MAGIC = b"DLF1"
_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class SinusoidParams:
    """Horizontal sine deformation, ``A sin(2π fs ŷ + φs) cos(2π ft t + φt)``.

    ``spatial_freq_fs`` counts cycles over the image height.
    """

    amplitude_A: float
    spatial_freq_fs: float = 1.0
    spatial_phase_phi_s: float = 0.0
    temporal_freq_ft: float = 1.0
    temporal_phase_phi_t: float = 0.0

    def __post_init__(self):
        if self.amplitude_A < 0:
            raise ValueError(f"amplitude must be >= 0, got {self.amplitude_A}")
        if self.spatial_freq_fs < 0:
            raise ValueError(f"spatial frequency must be >= 0, got {self.spatial_freq_fs}")
        if self.temporal_freq_ft < 0:
            raise ValueError(f"temporal frequency must be >= 0, got {self.temporal_freq_ft}")


@dataclass(frozen=True)
class NoiseFieldParams:
    rms_amplitude: float
    spatial_band: tuple[float, float]  # cycles per image
    temporal_band: tuple[float, float]  # Hz
    seed: int = 0

    def __post_init__(self):
        if self.rms_amplitude < 0:
            raise ValueError(f"rms_amplitude must be >= 0, got {self.rms_amplitude}")
        for name, (lo, hi) in (("spatial_band", self.spatial_band),
                               ("temporal_band", self.temporal_band)):
            if not (0 <= lo < hi):
                raise ValueError(f"{name} must satisfy 0 <= low < high, got ({lo}, {hi})")


def sinusoid_profile(p: SinusoidParams, t: float, height: int) -> np.ndarray:
    """Horizontal displacement (cm) for each row at time ``t``."""
    y_hat = np.arange(height) / height
    temporal = math.cos(2.0 * math.pi * p.temporal_freq_ft * t + p.temporal_phase_phi_t)
    return p.amplitude_A * np.sin(2.0 * np.pi * p.spatial_freq_fs * y_hat + p.spatial_phase_phi_s) * temporal


def sinusoidal_field(
    p: SinusoidParams, t: float, width: int, height: int, geom: ViewingGeometry | None = None
) -> DisplacementField:
    # geom is accepted for signature symmetry with the other generators; the
    # field lives in cm and is independent of pixel pitch.
    if width < 1 or height < 1:
        raise ValueError(f"field dimensions must be >= 1, got {width}x{height}")
    dx = np.broadcast_to(sinusoid_profile(p, t, height)[:, None], (height, width))
    return DisplacementField(dx, np.zeros((height, width)))


def sinusoidal_sequence(
    p: SinusoidParams, spec: SequenceSpec, width: int, height: int,
    geom: ViewingGeometry | None = None,
) -> list[DisplacementField]:
    return [sinusoidal_field(p, t, width, height, geom) for t in spec.times()]


def _frame_noise(seed: int, plane: int, frame: int, shape: tuple[int, int]) -> np.ndarray:
    # Philox is counter based: each (seed, plane, frame) gets its own stream,
    # so frames can be produced in any order with identical results.
    bitgen = np.random.Philox(np.random.SeedSequence([seed, plane, frame]))
    return np.random.Generator(bitgen).standard_normal(shape)


def band_masks(spec: SequenceSpec, width: int, height: int,
               spatial_band: tuple[float, float], temporal_band: tuple[float, float]) -> np.ndarray:
    """Boolean (T, H, W) mask selecting the requested band in ``fftn`` layout."""
    ky = np.fft.fftfreq(height) * height  # cycles per image height
    kx = np.fft.fftfreq(width) * width
    radial = np.hypot(ky[:, None], kx[None, :])
    ft = np.abs(np.fft.fftfreq(spec.frame_count, d=1.0 / spec.fps))
    spatial = (radial >= spatial_band[0]) & (radial <= spatial_band[1])
    temporal = (ft >= temporal_band[0]) & (ft <= temporal_band[1])
    return temporal[:, None, None] & spatial[None, :, :]


def noise_field_sequence(
    p: NoiseFieldParams, spec: SequenceSpec, width: int, height: int,
    geom: ViewingGeometry | None = None,
) -> list[DisplacementField]:
    """Band-limited Gaussian displacement noise.

    dx and dy are independent white-noise volumes, filtered with a hard
    annulus in (spatial radius, |temporal frequency|) and each rescaled so its
    RMS over the whole sequence equals ``p.rms_amplitude``. The sequence loops
    seamlessly in time because filtering is circular.
    """
    spatial_nyq = min(width, height) / 2.0
    if p.spatial_band[1] > spatial_nyq:
        raise NyquistError("spatial", p.spatial_band[1], spatial_nyq)
    temporal_nyq = spec.fps / 2.0
    if p.temporal_band[1] > temporal_nyq:
        raise NyquistError("temporal", p.temporal_band[1], temporal_nyq)

    shape = (spec.frame_count, height, width)
    if p.rms_amplitude == 0:
        zero = np.zeros((height, width))
        return [DisplacementField(zero, zero) for _ in range(spec.frame_count)]

    mask = band_masks(spec, width, height, p.spatial_band, p.temporal_band)
    if not mask.any():
        raise ValueError("requested band contains no frequency bins at this resolution/length")

    planes = []
    for plane in range(2):
        white = np.stack([_frame_noise(p.seed, plane, k, shape[1:]) for k in range(shape[0])])
        filtered = np.fft.ifftn(np.fft.fftn(white) * mask).real
        rms = math.sqrt(float(np.mean(filtered**2)))
        if rms == 0:
            raise ValueError("band-limited noise vanished; widen the band")
        planes.append(filtered * (p.rms_amplitude / rms))
    return [DisplacementField(planes[0][k], planes[1][k]) for k in range(shape[0])]


def encode_field(f: DisplacementField) -> bytes:
    h, w = f.shape
    return (_HEADER.pack(MAGIC, w, h)
            + f.dx.astype("<f4").tobytes()
            + f.dy.astype("<f4").tobytes())


def decode_fields(buf: bytes) -> list[DisplacementField]:
    out: list[DisplacementField] = []
    pos = 0
    if not buf:
        raise MalformedFieldFileError("empty DLF1 stream")
    while pos < len(buf):
        if len(buf) - pos < _HEADER.size:
            raise MalformedFieldFileError(f"truncated header at byte {pos}")
        magic, w, h = _HEADER.unpack_from(buf, pos)
        if magic != MAGIC:
            raise MalformedFieldFileError(f"bad magic {magic!r} at byte {pos}")
        if w < 1 or h < 1:
            raise MalformedFieldFileError(f"frame {len(out)} has empty size {w}x{h}")
        pos += _HEADER.size
        n = w * h
        if len(buf) - pos < 8 * n:
            raise MalformedFieldFileError(f"frame {len(out)} payload truncated")
        planes = np.frombuffer(buf, dtype="<f4", count=2 * n, offset=pos).astype(np.float64)
        pos += 8 * n
        if out and (h, w) != out[0].shape:
            raise DimensionMismatchError(
                f"frame {len(out)} is {w}x{h}, frame 0 is {out[0].width}x{out[0].height}"
            )
        out.append(DisplacementField(planes[:n].reshape(h, w), planes[n:].reshape(h, w)))
    return out


def save_field_sequence(seq: Iterable[DisplacementField], path: str | os.PathLike) -> None:
    seq = list(seq)
    if not seq:
        raise ValueError("cannot save an empty field sequence")
    if len({f.shape for f in seq}) != 1:
        raise DimensionMismatchError("all frames of a field sequence must share dimensions")
    Path(path).write_bytes(b"".join(encode_field(f) for f in seq))


def load_field_sequence(path: str | os.PathLike) -> list[DisplacementField]:
    return decode_fields(Path(path).read_bytes())


def max_abs_displacement(seq: Sequence[DisplacementField]) -> float:
    return max(float(np.max(np.hypot(f.dx, f.dy))) for f in seq)
