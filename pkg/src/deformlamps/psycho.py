"""Stimulus generation and psychometric analysis for the two perception experiments.

Experiment 1 measures the largest sinusoidal deformation that still reads as
the picture itself deforming; experiment 2 matches perceived deformation
magnitude against a physically warped reference. Human responses are not
shipped: trials come from CSV files or from the synthetic observers below.
"""

from __future__ import annotations

import csv
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize
from scipy.special import log_ndtr, ndtr

from .core import ColorRaster, Raster, SequenceSpec, ViewingGeometry, to_luminance
from .errors import DegenerateDataError, InvalidLevelError, SegmentLengthError
from .fields import SinusoidParams, sinusoidal_field
from .optics import SceneSetup, simulate_perceived_sequence
from .synth import ProjectionParams, build_projection_sequence
from .warp import WarpOptions, warp_color

EXP1_AMPLITUDES_CM = (0.1, 0.2, 0.4, 0.8, 1.7, 3.3)
EXP1_SPATIAL_FREQS = (1, 2, 4)
EXP1_DISTANCES_CM = (110.0, 220.0)
EXP1_TEMPORAL_FREQ_HZ = 1.0
PRINT_SIZE_CM = 13.2

EXP2_LEFT_LEVELS_CM = (0.05, 0.1, 0.15, 0.21, 0.26, 0.31, 0.36, 0.40)
EXP2_REFERENCE_CM = 0.21
EXP2_DISTANCE_CM = 110.0
EXP2_MODES = ("pixel_warp", "deformation_lamps")

TRIAL_COLUMNS = ("observer_id", "image_id", "distance_cm", "spatial_freq_cpi",
                 "amplitude_cm", "response")
FIT_COLUMNS = ("observer_id", "image_id", "distance_cm", "spatial_freq_cpi",
               "mu_cm", "sigma_cm", "n_trials", "flag")


def _on_grid(value: float, grid: Sequence[float]) -> bool:
    return any(math.isclose(value, g, rel_tol=0, abs_tol=1e-9) for g in grid)


@dataclass(frozen=True)
class Exp1Condition:
    amplitude_A: float
    spatial_freq: float
    distance: float
    temporal_freq: float = EXP1_TEMPORAL_FREQ_HZ

    def __post_init__(self):
        # 0 is accepted as a null (catch) condition; it is not part of the grid
        if not _on_grid(self.amplitude_A, (0.0,) + EXP1_AMPLITUDES_CM):
            raise InvalidLevelError(f"amplitude {self.amplitude_A} cm not in {EXP1_AMPLITUDES_CM}")
        if not _on_grid(self.spatial_freq, EXP1_SPATIAL_FREQS):
            raise InvalidLevelError(f"spatial frequency {self.spatial_freq} not in {EXP1_SPATIAL_FREQS}")
        if not _on_grid(self.distance, EXP1_DISTANCES_CM):
            raise InvalidLevelError(f"distance {self.distance} cm not in {EXP1_DISTANCES_CM}")
        if self.temporal_freq != EXP1_TEMPORAL_FREQ_HZ:
            raise InvalidLevelError(f"temporal frequency is fixed at {EXP1_TEMPORAL_FREQ_HZ} Hz")

    @property
    def key(self) -> str:
        return f"fs{self.spatial_freq:g}_A{self.amplitude_A:.2f}cm"


def exp1_conditions(distance: float) -> list[Exp1Condition]:
    """The 3 x 6 grid shown at one viewing distance."""
    return [Exp1Condition(a, fs, distance) for fs in EXP1_SPATIAL_FREQS for a in EXP1_AMPLITUDES_CM]


def random_spatial_phase(seed: int) -> float:
    return float(np.random.default_rng(seed).uniform(0.0, 2.0 * math.pi))


def _frames_per_second(spec: SequenceSpec) -> int:
    n = round(spec.fps)
    if abs(spec.fps - n) > 1e-9:
        raise SegmentLengthError(f"fps {spec.fps} does not give a whole number of frames per second")
    return n


def exp1_sinusoid(cond: Exp1Condition, seed: int = 0) -> SinusoidParams:
    return SinusoidParams(
        amplitude_A=cond.amplitude_A,
        spatial_freq_fs=cond.spatial_freq,
        spatial_phase_phi_s=random_spatial_phase(seed),
        temporal_freq_ft=cond.temporal_freq,
        temporal_phase_phi_t=0.0,
    )


def exp1_fields(cond: Exp1Condition, spec: SequenceSpec, width: int, height: int, seed: int = 0):
    """Deformation maps for the one-second motion segment."""
    fps = _frames_per_second(spec)
    p = exp1_sinusoid(cond, seed)
    return [sinusoidal_field(p, k / fps, width, height) for k in range(fps)]


def exp1_stimulus(
    target_lum: Raster,
    cond: Exp1Condition,
    geom: ViewingGeometry,
    spec: SequenceSpec,
    params: ProjectionParams = ProjectionParams(),
    seed: int = 0,
    warp_opts: WarpOptions = WarpOptions(),
) -> list[Raster]:
    """One second of projected motion followed by one second of uniform background.

    Only ``spec.fps`` is used; the two segment lengths are fixed at one second.
    """
    fps = _frames_per_second(spec)
    fields = exp1_fields(cond, spec, target_lum.width, target_lum.height, seed)
    motion, _ = build_projection_sequence(target_lum, fields, geom, warp_opts, params)
    rest = Raster.uniform(params.background_B, target_lum.width, target_lum.height)
    return motion + [rest] * fps


def exp2_stimulus_pair(
    left_amp: float,
    mode: str,
    target: ColorRaster,
    geom: ViewingGeometry,
    spec: SequenceSpec,
    params: ProjectionParams = ProjectionParams(),
    scene: SceneSetup | None = None,
    spatial_freq: float = 1.0,
    seed: int = 0,
    warp_opts: WarpOptions = WarpOptions(),
) -> tuple[list[ColorRaster], list[ColorRaster]]:
    """Left/right movies for one magnitude-matching trial.

    The left movie is always a colour pixel warp at ``left_amp``. The right one
    shows the fixed reference amplitude, either as a pixel warp or as the
    simulated appearance of the picture under the projected luminance residual
    (``scene`` defaults to the target itself as reflectance with no ambient).
    """
    if not _on_grid(left_amp, EXP2_LEFT_LEVELS_CM):
        raise InvalidLevelError(f"left amplitude {left_amp} cm not in {EXP2_LEFT_LEVELS_CM}")
    if mode not in EXP2_MODES:
        raise InvalidLevelError(f"mode must be one of {EXP2_MODES}, got {mode!r}")
    phase = random_spatial_phase(seed)
    h, w = target.shape

    def fields(amp):
        p = SinusoidParams(amp, spatial_freq, phase, EXP1_TEMPORAL_FREQ_HZ, 0.0)
        return [sinusoidal_field(p, t, w, h) for t in spec.times()]

    left = [warp_color(target, f, geom, warp_opts) for f in fields(left_amp)]
    ref_fields = fields(EXP2_REFERENCE_CM)
    if mode == "pixel_warp":
        right = [warp_color(target, f, geom, warp_opts) for f in ref_fields]
    else:
        scene = scene or SceneSetup(reflectance_K=target)
        P_seq, _ = build_projection_sequence(to_luminance(target), ref_fields, geom, warp_opts, params)
        right = simulate_perceived_sequence(scene, P_seq)
    return left, right


# ---------------------------------------------------------------------------
# trial data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialRecord:
    observer_id: str
    image_id: str
    distance_cm: float
    spatial_freq_cpi: float
    amplitude_cm: float
    response: int

    def __post_init__(self):
        if self.response not in (0, 1):
            raise ValueError(f"response must be 0 or 1, got {self.response}")
        if not self.amplitude_cm > 0:
            raise ValueError(f"stimulus level must be > 0, got {self.amplitude_cm}")

    @property
    def condition(self) -> tuple[str, str, float, float]:
        return (self.observer_id, self.image_id, self.distance_cm, self.spatial_freq_cpi)


def read_trials_csv(path: str | os.PathLike) -> list[TrialRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRIAL_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: trial CSV lacks column(s) {', '.join(missing)}")
        records = []
        for line, row in enumerate(reader, start=2):
            try:
                records.append(TrialRecord(
                    observer_id=row["observer_id"],
                    image_id=row["image_id"],
                    distance_cm=float(row["distance_cm"]),
                    spatial_freq_cpi=float(row["spatial_freq_cpi"]),
                    amplitude_cm=float(row["amplitude_cm"]),
                    response=int(row["response"]),
                ))
            except ValueError as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
    return records


def write_trials_csv(path: str | os.PathLike, records: Iterable[TrialRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRIAL_COLUMNS)
        for r in records:
            writer.writerow([r.observer_id, r.image_id, f"{r.distance_cm:g}",
                             f"{r.spatial_freq_cpi:g}", repr(r.amplitude_cm), r.response])


@dataclass(frozen=True, eq=False)
class PsychometricDataset:
    levels: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.float64).ravel()
        responses = np.asarray(self.responses).ravel()
        if levels.shape != responses.shape:
            raise ValueError("levels and responses differ in length")
        if not np.all(np.isin(responses, (0, 1))):
            raise ValueError("responses must be 0/1")
        if levels.size and not np.all(np.isfinite(levels)):
            raise ValueError("levels must be finite")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "responses", responses.astype(np.int64))

    @classmethod
    def from_records(cls, records: Iterable[TrialRecord]) -> "PsychometricDataset":
        records = list(records)
        return cls([r.amplitude_cm for r in records], [r.response for r in records])

    def complement(self) -> "PsychometricDataset":
        """Same trials with responses inverted (e.g. 'seen' -> 'not seen')."""
        return PsychometricDataset(self.levels, 1 - self.responses)

    def aggregate(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unique levels with trial counts and 'yes' counts, sorted by level."""
        lv, inv = np.unique(self.levels, return_inverse=True)
        n = np.bincount(inv, minlength=lv.size).astype(np.float64)
        k = np.bincount(inv, weights=self.responses, minlength=lv.size)
        return lv, n, k

    def __len__(self) -> int:
        return self.levels.size


def group_trials(records: Iterable[TrialRecord]) -> dict[tuple, PsychometricDataset]:
    groups: dict[tuple, list[TrialRecord]] = defaultdict(list)
    for r in records:
        groups[r.condition].append(r)
    return {key: PsychometricDataset.from_records(rs) for key, rs in sorted(groups.items())}


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PsychometricFit:
    mu: float
    sigma: float
    log_likelihood: float
    n_trials: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


def _nll(lv, n, k, mu, sigma) -> float:
    z = (lv - mu) / sigma
    return -float(np.sum(k * log_ndtr(z) + (n - k) * log_ndtr(-z)))


def log_likelihood(data: PsychometricDataset, mu: float, sigma: float) -> float:
    """Bernoulli log-likelihood of ``p(x) = Phi((x - mu) / sigma)``."""
    lv, n, k = data.aggregate()
    return -_nll(lv, n, k, mu, sigma)


def fit_cumulative_gaussian(
    data: PsychometricDataset, start: tuple[float, float] | None = None
) -> PsychometricFit:
    """Maximum-likelihood cumulative Gaussian with no guess or lapse rate.

    A coarse grid over (mu, log sigma) seeds a bounded Nelder-Mead refinement.
    Work is done on levels divided by their span, so the fit is scale
    equivariant. ``start`` replaces the grid seed with a given (mu, sigma).
    """
    lv, n, k = data.aggregate()
    if lv.size < 2:
        raise DegenerateDataError("need at least two distinct stimulus levels")
    if k.sum() == 0 or k.sum() == n.sum():
        raise DegenerateDataError("all responses identical; the curve is unconstrained")

    scale = float(lv[-1] - lv[0])
    x = lv / scale
    lo, hi = float(x[0]), float(x[-1])
    ls_bounds = (math.log(1e-4), math.log(10.0))
    mu_bounds = (lo - 1.0, hi + 1.0)

    def objective(theta):
        return _nll(x, n, k, theta[0], math.exp(theta[1]))

    if start is None:
        mus = np.linspace(lo - 0.25, hi + 0.25, 61)
        lss = np.linspace(math.log(2e-3), math.log(2.0), 31)
        grid = np.array([[objective((m, s)) for s in lss] for m in mus])
        i, j = np.unravel_index(np.argmin(grid), grid.shape)
        theta0 = np.array([mus[i], lss[j]])
    else:
        theta0 = np.array([start[0] / scale, math.log(start[1] / scale)])
        theta0 = np.clip(theta0, [mu_bounds[0], ls_bounds[0]], [mu_bounds[1], ls_bounds[1]])

    res = optimize.minimize(
        objective, theta0, method="Nelder-Mead", bounds=[mu_bounds, ls_bounds],
        options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 4000},
    )
    theta = res.x if res.fun <= objective(theta0) else theta0
    mu = float(theta[0]) * scale
    sigma = math.exp(float(theta[1])) * scale
    return PsychometricFit(mu=mu, sigma=sigma,
                           log_likelihood=-float(objective(theta)), n_trials=int(n.sum()))


def critical_amplitude(fit: PsychometricFit) -> float:
    """Amplitude where 'deformation seen' reports cross 50%.

    Expects the fit to come from the 'not seen' complement (see ``fit_exp1``),
    so the curve rises and its 50% point is simply ``mu``.
    """
    return fit.mu


def pse(fit: PsychometricFit) -> float:
    return fit.mu


def fit_exp1(data: PsychometricDataset) -> PsychometricFit:
    return fit_cumulative_gaussian(data.complement())


def fit_exp2(data: PsychometricDataset) -> PsychometricFit:
    return fit_cumulative_gaussian(data)


def analyze_trials(records: Iterable[TrialRecord], experiment: str = "exp1") -> list[dict]:
    """Independent per-condition fits, one row per (observer, image, distance, frequency)."""
    if experiment not in ("exp1", "exp2"):
        raise ValueError(f"experiment must be 'exp1' or 'exp2', got {experiment!r}")
    fitter = fit_exp1 if experiment == "exp1" else fit_exp2
    rows = []
    for (obs, img, dist, fs), data in group_trials(records).items():
        row = {"observer_id": obs, "image_id": img, "distance_cm": dist,
               "spatial_freq_cpi": fs, "n_trials": len(data)}
        try:
            fit = fitter(data)
        except DegenerateDataError:
            row.update(mu_cm=float("nan"), sigma_cm=float("nan"), flag="degenerate")
        else:
            row.update(mu_cm=fit.mu, sigma_cm=fit.sigma, flag="ok")
        rows.append(row)
    return rows


def write_fits_csv(path: str | os.PathLike, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=FIT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for col in ("distance_cm", "spatial_freq_cpi"):
                out[col] = f"{out[col]:g}"
            for col in ("mu_cm", "sigma_cm"):
                out[col] = "" if math.isnan(out[col]) else f"{out[col]:.6f}"
            writer.writerow(out)


# ---------------------------------------------------------------------------
# synthetic observers
# ---------------------------------------------------------------------------


def simulate_gaussian_observer(levels: Sequence[float], trials_per_level: int,
                               mu: float, sigma: float,
                               rng: np.random.Generator) -> PsychometricDataset:
    """Responses drawn from ``Phi((level - mu) / sigma)``."""
    lv = np.repeat(np.asarray(levels, dtype=np.float64), trials_per_level)
    p = ndtr((lv - mu) / sigma)
    return PsychometricDataset(lv, (rng.random(lv.size) < p).astype(np.int64))


def simulate_comparator(levels: Sequence[float], trials_per_level: int, reference: float,
                        lapse: float, rng: np.random.Generator) -> PsychometricDataset:
    """Veridical 2AFC observer answering 'test greater' iff level > reference.

    Each answer is inverted with probability ``lapse``.
    """
    lv = np.repeat(np.asarray(levels, dtype=np.float64), trials_per_level)
    truth = (lv > reference).astype(np.int64)
    flip = rng.random(lv.size) < lapse
    return PsychometricDataset(lv, np.where(flip, 1 - truth, truth))
