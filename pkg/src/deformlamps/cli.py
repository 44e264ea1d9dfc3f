"""``deformlamps`` command line.

Each subcommand reads one YAML (or JSON) config file; ``--set dotted.key=value``
overrides single entries. Every run writes its artifacts plus a
``manifest.json`` (config hash, tool version, per-file SHA-256) into
``output_dir``. Exit status: 0 ok, 2 config error, 3 data error.
"""

from __future__ import annotations

import argparse
import contextlib
import copy
import csv
import hashlib
import json
import logging
import sys
import zlib
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import __version__
from .core import ColorRaster, Raster, SequenceSpec, ViewingGeometry, visual_angle_deg
from .errors import ConfigError, DeformLampsError, InvalidLevelError
from .fields import (NoiseFieldParams, SinusoidParams, load_field_sequence, noise_field_sequence,
                     save_field_sequence, sinusoidal_sequence)
from .optics import SceneSetup, simulate_perceived_sequence
from .pngio import list_frames, read_color, read_image, read_raster, write_frames
from .psycho import (EXP1_AMPLITUDES_CM, EXP1_DISTANCES_CM, EXP1_SPATIAL_FREQS, EXP2_LEFT_LEVELS_CM,
                     EXP2_MODES, EXP2_REFERENCE_CM, PRINT_SIZE_CM, Exp1Condition, analyze_trials,
                     exp1_sinusoid, exp1_stimulus, exp2_stimulus_pair, read_trials_csv,
                     write_fits_csv)
from .synth import ProjectionParams, build_projection_sequence, select_keyframe
from .warp import WarpOptions, warp_color, warp_image

log = logging.getLogger("deformlamps")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
FLOAT_STACK = "frames.npy"

_MISSING = object()


class Config:
    """Nested mapping with dotted-key access; records every value it hands out."""

    def __init__(self, data: dict):
        self.data = data
        self.resolved: dict[str, Any] = {}

    def get(self, key: str, default: Any = _MISSING, kind: Callable | None = None) -> Any:
        node: Any = self.data
        for part in key.split("."):
            if not isinstance(node, dict) or part not in node:
                if default is _MISSING:
                    raise ConfigError("required key missing", key)
                node = default
                break
            node = node[part]
        if kind is not None and node is not None:
            try:
                node = kind(node)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value {node!r} ({exc})", key) from None
        self.resolved[key] = node
        return node

    def path(self, key: str, must_exist: bool = True, default: Any = _MISSING) -> Path | None:
        value = self.get(key, default)
        if value is None:
            return None
        p = Path(str(value))
        if must_exist and not p.exists():
            raise ConfigError(f"path does not exist: {p}", key)
        self.resolved[key] = str(p)
        return p


def _float_list(value) -> list[float]:
    if isinstance(value, (int, float)):
        return [float(value)]
    return [float(v) for v in value]


def _band(value) -> tuple[float, float]:
    lo, hi = (float(v) for v in value)
    return lo, hi


@contextlib.contextmanager
def _validating(key: str):
    """Turn constructor ValueErrors into ConfigErrors naming ``key``."""
    try:
        yield
    except InvalidLevelError as exc:
        raise ConfigError(str(exc), key) from None
    except DeformLampsError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), key) from None


def _set_dotted(data: dict, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = data
    for part in parts[:-1]:
        nxt = node.get(part)
        if not isinstance(nxt, dict):
            nxt = node[part] = {}
        node = nxt
    node[parts[-1]] = value


def load_config(path: str | None, overrides: list[str]) -> dict:
    data: dict = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", "config") from None
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config: {exc}", "config") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping", "config")
    data = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", "--set")
        key, raw = item.split("=", 1)
        _set_dotted(data, key.strip(), yaml.safe_load(raw))
    return data


# ---------------------------------------------------------------------------
# shared config sections
# ---------------------------------------------------------------------------


def _geometry(cfg: Config, width: int) -> ViewingGeometry:
    with _validating("geometry"):
        return ViewingGeometry(
            distance_cm=cfg.get("geometry.distance_cm", 110.0, float),
            pixel_pitch_cm=cfg.get("geometry.pixel_pitch_cm", PRINT_SIZE_CM / width, float),
        )


def _warp_opts(cfg: Config) -> WarpOptions:
    with _validating("warp"):
        return WarpOptions(boundary=cfg.get("warp.boundary", "clamp", str),
                           interpolation=cfg.get("warp.interpolation", "bilinear", str))


def _projection(cfg: Config) -> ProjectionParams:
    with _validating("projection"):
        return ProjectionParams(
            weight_w=cfg.get("projection.weight_w", 0.4, float),
            background_B=cfg.get("projection.background_B", 0.5, float),
            clip_policy=cfg.get("projection.clip_policy", "clamp_and_report", str),
            clip_threshold=cfg.get("projection.clip_threshold", 0.0, float),
            compensation=cfg.get("projection.compensation", "off", str),
            k_min=cfg.get("projection.k_min", 0.1, float),
        )


def _bit_depth(cfg: Config) -> int:
    depth = cfg.get("bit_depth", 16, int)
    if depth not in (8, 16):
        raise ConfigError("must be 8 or 16", "bit_depth")
    return depth


def _scene(cfg: Config, reflectance: ColorRaster) -> SceneSetup:
    ambient = cfg.get("ambient", 0.0)
    if isinstance(ambient, str):
        p = cfg.path("ambient")
        env: ColorRaster | float = read_color(p)
    else:
        env = cfg.get("ambient", 0.0, float)
    with _validating("scene"):
        return SceneSetup(reflectance_K=reflectance, ambient_Env=env,
                          blur_sigma=cfg.get("blur_sigma", 0.0, float),
                          blur_boundary=cfg.get("blur_boundary", "clamp", str))


def _output_dir(cfg: Config) -> Path:
    out = Path(str(cfg.get("output_dir")))
    out.mkdir(parents=True, exist_ok=True)
    cfg.resolved["output_dir"] = str(out)
    return out


def _frames_from_dir(directory: Path) -> list[Raster | ColorRaster]:
    stack_path = directory / FLOAT_STACK
    if stack_path.exists():
        # lossless float copy written alongside the PNGs
        stack = np.load(stack_path)
        cls = Raster if stack.ndim == 3 else ColorRaster
        return [cls(f) for f in stack]
    return [read_image(p) for p in list_frames(directory)]


def _write_float_stack(directory: Path, frames) -> Path:
    path = directory / FLOAT_STACK
    np.save(path, np.stack([f.data for f in frames]))
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, subcommand: str, cfg: Config, extra: dict | None = None) -> Path:
    files = {
        p.relative_to(out).as_posix(): _sha256(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }
    config_blob = json.dumps(cfg.resolved, sort_keys=True, default=str).encode()
    manifest = {
        "tool": "deformlamps",
        "version": __version__,
        "subcommand": subcommand,
        "config_sha256": hashlib.sha256(config_blob).hexdigest(),
        "config": cfg.resolved,
        "files": files,
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_map(cfg: Config) -> int:
    out = _output_dir(cfg)
    width = cfg.get("width", kind=int)
    height = cfg.get("height", kind=int)
    if width < 1 or height < 1:
        raise ConfigError("width and height must be >= 1", "width")
    geom = _geometry(cfg, width)
    with _validating("sequence"):
        spec = SequenceSpec(frame_count=cfg.get("sequence.frame_count", 60, int),
                            fps=cfg.get("sequence.fps", 60.0, float))
    kind = cfg.get("field.kind", "sinusoid", str)
    if kind == "sinusoid":
        with _validating("field"):
            p = SinusoidParams(
                amplitude_A=cfg.get("field.amplitude_cm", kind=float),
                spatial_freq_fs=cfg.get("field.spatial_freq_cpi", 1.0, float),
                spatial_phase_phi_s=cfg.get("field.spatial_phase_rad", 0.0, float),
                temporal_freq_ft=cfg.get("field.temporal_freq_hz", 1.0, float),
                temporal_phase_phi_t=cfg.get("field.temporal_phase_rad", 0.0, float),
            )
        seq = sinusoidal_sequence(p, spec, width, height, geom)
    elif kind == "noise":
        with _validating("field"):
            p = NoiseFieldParams(
                rms_amplitude=cfg.get("field.rms_amplitude_cm", kind=float),
                spatial_band=cfg.get("field.spatial_band", kind=_band),
                temporal_band=cfg.get("field.temporal_band", kind=_band),
                seed=cfg.get("seed", 0, int),
            )
        seq = noise_field_sequence(p, spec, width, height, geom)
    else:
        raise ConfigError(f"unknown field kind {kind!r} (sinusoid|noise)", "field.kind")
    save_field_sequence(seq, out / "fields.dlf")
    write_manifest(out, "gen-map", cfg, {"frames": len(seq)})
    return EXIT_OK


def cmd_warp(cfg: Config) -> int:
    image = read_image(cfg.path("image"))
    fields = load_field_sequence(cfg.path("fields"))
    out = _output_dir(cfg)
    geom = _geometry(cfg, image.width)
    opts = _warp_opts(cfg)
    depth = _bit_depth(cfg)
    warp = warp_color if isinstance(image, ColorRaster) else warp_image
    frames = []
    for k, f in enumerate(fields):
        try:
            frames.append(warp(image, f, geom, opts))
        except DeformLampsError as exc:
            exc.frame_index = k
            raise
    write_frames(out, frames, depth)
    write_manifest(out, "warp", cfg, {"frames": len(frames)})
    return EXIT_OK


def cmd_synth(cfg: Config) -> int:
    target = read_raster(cfg.path("target"))
    fields = load_field_sequence(cfg.path("fields"))
    out = _output_dir(cfg)
    geom = _geometry(cfg, target.width)
    opts = _warp_opts(cfg)
    params = _projection(cfg)
    depth = _bit_depth(cfg)
    k_path = cfg.path("reflectance", default=None)
    K_lum = read_raster(k_path) if k_path is not None else None
    frames, reports = build_projection_sequence(target, fields, geom, opts, params, K_lum)
    write_frames(out, frames, depth)
    _write_float_stack(out, frames)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "clipped_fraction", "min", "max"])
        for k, r in enumerate(reports):
            w.writerow([k, f"{r.clipped_fraction:.6f}", f"{r.min_value:.6f}", f"{r.max_value:.6f}"])
    worst = max(r.clipped_fraction for r in reports)
    if worst > 0:
        log.warning("up to %.2f%% of pixels clipped in a frame; see report.csv", 100 * worst)
    write_manifest(out, "synth", cfg, {"frames": len(frames), "max_clipped_fraction": worst})
    return EXIT_OK


def cmd_simulate(cfg: Config) -> int:
    P_seq = _frames_from_dir(cfg.path("frames_dir"))
    if any(isinstance(P, ColorRaster) for P in P_seq):
        raise DeformLampsError("projection frames must be single-channel")
    reflectance = read_color(cfg.path("reflectance"))
    scene = _scene(cfg, reflectance)
    out = _output_dir(cfg)
    depth = _bit_depth(cfg)
    frames = []
    for k, P in enumerate(P_seq):
        try:
            frames.extend(simulate_perceived_sequence(scene, [P]))
        except DeformLampsError as exc:
            exc.frame_index = k
            raise
    write_frames(out, frames, depth)
    _write_float_stack(out, frames)
    write_manifest(out, "simulate", cfg, {"frames": len(frames)})
    return EXIT_OK


def cmd_keyframe(cfg: Config) -> int:
    movie = [read_color(p) for p in list_frames(cfg.path("frames_dir"))]
    out = _output_dir(cfg)
    index = select_keyframe(movie)
    (out / "keyframe.json").write_text(json.dumps({"index": index, "frames": len(movie)}) + "\n")
    write_manifest(out, "keyframe", cfg)
    print(index)
    return EXIT_OK


def _condition_seed(seed: int, image_id: str, cond: Exp1Condition) -> int:
    ss = np.random.SeedSequence([
        seed, zlib.crc32(image_id.encode()), int(round(cond.distance)),
        int(cond.spatial_freq), int(round(cond.amplitude_A * 1000)),
    ])
    return int(ss.generate_state(1)[0])


def cmd_exp1_stim(cfg: Config) -> int:
    target = read_raster(cfg.path("target"))
    out = _output_dir(cfg)
    image_id = str(cfg.get("image_id", Path(cfg.resolved["target"]).stem))
    print_size = cfg.get("print_size_cm", PRINT_SIZE_CM, float)
    distances = cfg.get("distances_cm", list(EXP1_DISTANCES_CM), _float_list)
    amplitudes = cfg.get("amplitudes_cm", list(EXP1_AMPLITUDES_CM), _float_list)
    freqs = cfg.get("spatial_freqs_cpi", list(EXP1_SPATIAL_FREQS), _float_list)
    with _validating("sequence.fps"):
        spec = SequenceSpec(frame_count=1, fps=cfg.get("sequence.fps", 60.0, float))
    params = _projection(cfg)
    opts = _warp_opts(cfg)
    depth = _bit_depth(cfg)
    seed = cfg.get("seed", 0, int)

    conditions = []
    for d in distances:
        with _validating("distances_cm/print_size_cm"):
            geom = ViewingGeometry(distance_cm=d, pixel_pitch_cm=print_size / target.width)
        for fs in freqs:
            for a in amplitudes:
                with _validating("amplitudes_cm/spatial_freqs_cpi/distances_cm"):
                    cond = Exp1Condition(a, fs, d)
                cseed = _condition_seed(seed, image_id, cond)
                frames = exp1_stimulus(target, cond, geom, spec, params, cseed, opts)
                rel = f"d{d:g}cm/{cond.key}"
                write_frames(out / rel, frames, depth)
                conditions.append({
                    "directory": rel,
                    "distance_cm": d,
                    "spatial_freq_cpi": fs,
                    "amplitude_cm": a,
                    "amplitude_deg": visual_angle_deg(a, geom),
                    "spatial_phase_rad": exp1_sinusoid(cond, cseed).spatial_phase_phi_s,
                    "frames": len(frames),
                })
    write_manifest(out, "exp1-stim", cfg, {"image_id": image_id, "conditions": conditions})
    return EXIT_OK


def cmd_exp2_stim(cfg: Config) -> int:
    target = read_color(cfg.path("target"))
    out = _output_dir(cfg)
    print_size = cfg.get("print_size_cm", PRINT_SIZE_CM, float)
    with _validating("distance_cm/print_size_cm"):
        geom = ViewingGeometry(distance_cm=cfg.get("distance_cm", 110.0, float),
                               pixel_pitch_cm=print_size / target.width)
    modes = cfg.get("modes", list(EXP2_MODES), lambda v: [str(v)] if isinstance(v, str) else list(v))
    levels = cfg.get("levels_cm", list(EXP2_LEFT_LEVELS_CM), _float_list)
    with _validating("sequence"):
        spec = SequenceSpec(frame_count=cfg.get("sequence.frame_count", 60, int),
                            fps=cfg.get("sequence.fps", 60.0, float))
    params = _projection(cfg)
    opts = _warp_opts(cfg)
    depth = _bit_depth(cfg)
    scene = _scene(cfg, target)
    fs = cfg.get("spatial_freq_cpi", 1.0, float)
    seed = cfg.get("seed", 0, int)

    pairs = []
    for mode in modes:
        for level in levels:
            with _validating("levels_cm/modes"):
                left, right = exp2_stimulus_pair(level, mode, target, geom, spec, params,
                                                 scene, fs, seed, opts)
            rel = f"{mode}/L{level:.2f}cm"
            write_frames(out / rel / "left", left, depth)
            write_frames(out / rel / "right", right, depth)
            pairs.append({"directory": rel, "mode": mode, "left_cm": level,
                          "right_cm": EXP2_REFERENCE_CM, "frames": len(left)})
    write_manifest(out, "exp2-stim", cfg, {"pairs": pairs})
    return EXIT_OK


def cmd_analyze(cfg: Config) -> int:
    trials_path = cfg.path("trials")
    experiment = cfg.get("experiment", "exp1", str)
    if experiment not in ("exp1", "exp2"):
        raise ConfigError("must be exp1 or exp2", "experiment")
    out = _output_dir(cfg)
    try:
        records = read_trials_csv(trials_path)
    except ValueError as exc:
        raise DeformLampsError(str(exc)) from None
    rows = analyze_trials(records, experiment)
    write_fits_csv(out / "fits.csv", rows)
    write_manifest(out, "analyze", cfg, {"conditions": len(rows)})
    return EXIT_OK


COMMANDS: dict[str, tuple[Callable[[Config], int], str]] = {
    "gen-map": (cmd_gen_map, "generate a deformation-map sequence (DLF1)"),
    "warp": (cmd_warp, "pixel-warp an image by a field sequence"),
    "synth": (cmd_synth, "build projection frames from a target and field sequence"),
    "simulate": (cmd_simulate, "render what the observer sees for projection frames"),
    "keyframe": (cmd_keyframe, "pick the movie frame closest to the temporal mean"),
    "exp1-stim": (cmd_exp1_stim, "emit the deformation-threshold stimulus grid"),
    "exp2-stim": (cmd_exp2_stim, "emit magnitude-matching stimulus pairs"),
    "analyze": (cmd_analyze, "fit cumulative Gaussians to trial data"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deformlamps", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", help="YAML/JSON config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a (dotted) config key")
    return parser


def run(subcommand: str, config: dict) -> int:
    """Run one subcommand on an already-loaded config mapping; returns the exit status."""
    func = COMMANDS[subcommand][0]
    cfg = Config(config)
    try:
        return func(cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DeformLampsError, ValueError, OSError) as exc:
        frame = getattr(exc, "frame_index", None)
        prefix = f"frame {frame}: " if frame is not None else ""
        log.error("%s%s", prefix, exc)
        return EXIT_DATA


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s")
    try:
        config = load_config(args.config, args.overrides)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    return run(args.command, config)


if __name__ == "__main__":
    sys.exit(main())
