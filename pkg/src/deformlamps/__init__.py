"""Deformation Lamps in software.

Build the gray-scale projection sequence that makes a static picture appear
to deform, simulate what an observer sees when it is projected, and run the
stimulus/analysis side of the threshold and magnitude-matching experiments.
"""

__version__ = "0.1.0"

from .core import (LUMA_WEIGHTS, ColorRaster, DisplacementField, Raster, Residual,
                   SequenceSpec, ViewingGeometry, cm_to_px, px_to_cm, to_luminance,
                   visual_angle_deg)
from .fields import (NoiseFieldParams, SinusoidParams, load_field_sequence,
                     noise_field_sequence, save_field_sequence, sinusoidal_field,
                     sinusoidal_sequence)
from .optics import SceneSetup, lambertian_composite, lcd_composite, simulate_perceived_sequence
from .psycho import (Exp1Condition, PsychometricDataset, PsychometricFit, TrialRecord,
                     critical_amplitude, exp1_stimulus, exp2_stimulus_pair,
                     fit_cumulative_gaussian, pse)
from .synth import (ProjectionParams, SynthesisReport, build_projection_sequence,
                    decompose_movie, luminance_residual, projection_signal, select_keyframe)
from .warp import WarpOptions, warp_color, warp_image
