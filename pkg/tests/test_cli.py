import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

import oracle
from deformlamps import cli
from deformlamps.core import ColorRaster, Raster
from deformlamps.pngio import list_frames, read_image, write_frames, write_png
from deformlamps.psycho import TrialRecord, simulate_gaussian_observer, write_trials_csv

REPO = Path(__file__).resolve().parents[1]
DEMO = REPO / "configs" / "demo"


def demo_config(name, **paths):
    """Demo config with repo-relative paths made absolute and outputs redirected."""
    cfg = cli.load_config(str(DEMO / f"{name}.yaml"), [])
    for key in ("target", "reflectance"):
        if key in cfg:
            cfg[key] = str(REPO / cfg[key])
    cfg.update({k: str(v) for k, v in paths.items()})
    return cfg


def run_demo(root: Path):
    assert cli.run("gen-map", demo_config("gen-map", output_dir=root / "fields")) == 0
    assert cli.run("synth", demo_config("synth", output_dir=root / "proj",
                                        fields=root / "fields" / "fields.dlf")) == 0
    assert cli.run("simulate", demo_config("simulate", output_dir=root / "seen",
                                           frames_dir=root / "proj")) == 0


def tree_bytes(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def demo_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("demo")
    run_demo(root)
    return root


def test_demo_artifacts(demo_run):
    assert (demo_run / "fields" / "fields.dlf").exists()
    assert len(list_frames(demo_run / "proj")) == 60
    assert len(list_frames(demo_run / "seen")) == 60
    report = (demo_run / "proj" / "report.csv").read_text().splitlines()
    assert report[0] == "frame,clipped_fraction,min,max"
    assert len(report) == 61


def test_demo_matches_oracle(demo_run):
    import cv2

    target = cv2.imread(str(DEMO / "gradient64.png"), cv2.IMREAD_UNCHANGED) / 65535.0
    fields = oracle.read_dlf(demo_run / "fields" / "fields.dlf")
    pitch = 13.2 / 64
    P = oracle.projection_frames(target, fields, pitch, 0.4, 0.5)
    np.testing.assert_allclose(np.load(demo_run / "proj" / "frames.npy"), P, atol=1e-6)
    K = np.repeat(target[:, :, None], 3, axis=2)
    seen = oracle.perceived_frames(K, 0.05, P)
    np.testing.assert_allclose(np.load(demo_run / "seen" / "frames.npy"), seen, atol=1e-6)
    # PNG copies agree to the 16-bit quantum
    png = read_image(list_frames(demo_run / "proj")[7]).data
    np.testing.assert_allclose(png, P[7], atol=0.5 / 65535 + 1e-12)


def test_demo_fields_match_closed_form(demo_run):
    fields = oracle.read_dlf(demo_run / "fields" / "fields.dlf")
    for k in (0, 13, 45):
        dx, dy = fields[k]
        expected = oracle.sinusoid_dx(0.4, 1, 0.0, 1, 0.0, k / 60, 64, 64)
        np.testing.assert_allclose(dx, expected, atol=1e-7)
        assert not dy.any()


def test_manifest_checksums(demo_run):
    for stage in ("fields", "proj", "seen"):
        manifest = json.loads((demo_run / stage / "manifest.json").read_text())
        assert manifest["version"] and len(manifest["config_sha256"]) == 64
        on_disk = {p.relative_to(demo_run / stage).as_posix() for p in (demo_run / stage).rglob("*")
                   if p.is_file() and p.name != "manifest.json"}
        assert set(manifest["files"]) == on_disk
        for name, digest in manifest["files"].items():
            assert hashlib.sha256((demo_run / stage / name).read_bytes()).hexdigest() == digest


def test_repeat_runs_are_byte_identical(demo_run, tmp_path):
    first = tree_bytes(demo_run)
    import shutil
    shutil.rmtree(demo_run)
    run_demo(demo_run)
    assert tree_bytes(demo_run) == first


def test_zero_amplitude_synth_is_uniform(tmp_path):
    cfg = demo_config("gen-map", output_dir=tmp_path / "f")
    cfg["field"]["amplitude_cm"] = 0.0
    cfg["sequence"]["frame_count"] = 5
    assert cli.run("gen-map", cfg) == 0
    assert cli.run("synth", demo_config("synth", output_dir=tmp_path / "p",
                                        fields=tmp_path / "f" / "fields.dlf")) == 0
    frames = [read_image(p).data for p in list_frames(tmp_path / "p")]
    assert len(frames) == 5
    for f in frames:
        assert np.all(f == frames[0][0, 0])
        assert f[0, 0] == pytest.approx(0.5, abs=0.5 / 65535)


def test_noise_gen_map(tmp_path):
    cfg = {"output_dir": str(tmp_path), "width": 32, "height": 32,
           "sequence": {"fps": 30, "frame_count": 16},
           "field": {"kind": "noise", "rms_amplitude_cm": 0.2, "spatial_band": [2, 6],
                     "temporal_band": [1, 4]}, "seed": 3}
    assert cli.run("gen-map", cfg) == 0
    assert len(oracle.read_dlf(tmp_path / "fields.dlf")) == 16
    cfg["field"]["spatial_band"] = [2, 40]
    assert cli.run("gen-map", cfg) == 3


def test_warp_subcommand(tmp_path, rng):
    img = ColorRaster(rng.random((64, 64, 3)))
    write_png(tmp_path / "img.png", img, 16)
    cfg = demo_config("gen-map", output_dir=tmp_path / "f")
    cfg["sequence"]["frame_count"] = 3
    assert cli.run("gen-map", cfg) == 0
    assert cli.run("warp", {"image": str(tmp_path / "img.png"), "fields": str(tmp_path / "f" / "fields.dlf"),
                            "output_dir": str(tmp_path / "w")}) == 0
    frames = list_frames(tmp_path / "w")
    assert len(frames) == 3
    assert isinstance(read_image(frames[0]), ColorRaster)


def test_keyframe_subcommand(tmp_path, capsys):
    a = np.full((4, 4, 3), 0.2)
    b = np.full((4, 4, 3), 0.6)
    write_frames(tmp_path / "movie", [ColorRaster(a), ColorRaster(b), ColorRaster((a + b) / 2)], 16)
    assert cli.run("keyframe", {"frames_dir": str(tmp_path / "movie"), "output_dir": str(tmp_path / "k")}) == 0
    assert capsys.readouterr().out.strip() == "2"
    assert json.loads((tmp_path / "k" / "keyframe.json").read_text())["index"] == 2


def test_exp1_stim_grid(tmp_path):
    target = tmp_path / "t.png"
    write_png(target, Raster(np.tile(np.linspace(0, 1, 16), (16, 1))), 16)
    cfg = {"target": str(target), "output_dir": str(tmp_path / "e1"), "distances_cm": [110],
           "sequence": {"fps": 4}, "image_id": "ramp"}
    assert cli.run("exp1-stim", cfg) == 0
    dirs = sorted(p for p in (tmp_path / "e1" / "d110cm").iterdir() if p.is_dir())
    assert len(dirs) == 18
    manifest = json.loads((tmp_path / "e1" / "manifest.json").read_text())
    assert len(manifest["conditions"]) == 18
    assert all(len(list_frames(d)) == 8 for d in dirs)
    a04 = next(c for c in manifest["conditions"] if c["amplitude_cm"] == 0.4)
    assert a04["amplitude_deg"] == pytest.approx(0.2083, abs=5e-5)


def test_exp2_stim(tmp_path, rng):
    target = tmp_path / "t.png"
    write_png(target, ColorRaster(rng.uniform(0.2, 0.8, (16, 16, 3))), 16)
    cfg = {"target": str(target), "output_dir": str(tmp_path / "e2"), "levels_cm": [0.1, 0.21],
           "sequence": {"fps": 4, "frame_count": 4}}
    assert cli.run("exp2-stim", cfg) == 0
    for mode in ("pixel_warp", "deformation_lamps"):
        for lvl in ("0.10", "0.21"):
            for side in ("left", "right"):
                assert len(list_frames(tmp_path / "e2" / mode / f"L{lvl}cm" / side)) == 4
    same = tmp_path / "e2" / "pixel_warp" / "L0.21cm"
    for l, r in zip(list_frames(same / "left"), list_frames(same / "right")):
        assert l.read_bytes() == r.read_bytes()
    cfg["levels_cm"] = [0.2]
    assert cli.run("exp2-stim", cfg) == 2


def test_analyze_subcommand(tmp_path):
    rng = np.random.default_rng(0)
    data = simulate_gaussian_observer([0.1, 0.2, 0.4, 0.8, 1.7, 3.3], 100, 0.4, 0.15, rng)
    recs = [TrialRecord("s1", "img", 110, 1, float(a), 1 - int(r))
            for a, r in zip(data.levels, data.responses)]
    write_trials_csv(tmp_path / "t.csv", recs)
    cfg = {"trials": str(tmp_path / "t.csv"), "experiment": "exp1", "output_dir": str(tmp_path / "a")}
    assert cli.run("analyze", cfg) == 0
    lines = (tmp_path / "a" / "fits.csv").read_text().splitlines()
    assert len(lines) == 2
    row = dict(zip(lines[0].split(","), lines[1].split(",")))
    assert float(row["mu_cm"]) == pytest.approx(0.4, abs=0.05)
    assert row["flag"] == "ok"


def test_config_errors_name_key(tmp_path, caplog):
    cfg = demo_config("gen-map", output_dir=tmp_path)
    del cfg["field"]["amplitude_cm"]
    assert cli.run("gen-map", cfg) == 2
    assert "field.amplitude_cm" in caplog.text

    caplog.clear()
    cfg = demo_config("gen-map", output_dir=tmp_path)
    cfg["geometry"]["distance_cm"] = "far"
    assert cli.run("gen-map", cfg) == 2
    assert "geometry.distance_cm" in caplog.text

    caplog.clear()
    cfg = demo_config("synth", output_dir=tmp_path, fields=tmp_path / "missing.dlf")
    assert cli.run("synth", cfg) == 2
    assert "fields" in caplog.text

    caplog.clear()
    cfg = demo_config("gen-map", output_dir=tmp_path)
    cfg["field"]["kind"] = "vortex"
    assert cli.run("gen-map", cfg) == 2
    assert "field.kind" in caplog.text


def test_data_error_exit_code(tmp_path, caplog):
    (tmp_path / "bad.dlf").write_bytes(b"DLF1\x01")
    cfg = demo_config("synth", output_dir=tmp_path / "o", fields=tmp_path / "bad.dlf")
    assert cli.run("synth", cfg) == 3


def test_clip_error_reports_frame(tmp_path, caplog):
    cfg = demo_config("gen-map", output_dir=tmp_path / "f")
    cfg["sequence"]["frame_count"] = 3
    cfg["field"]["amplitude_cm"] = 3.3
    assert cli.run("gen-map", cfg) == 0
    cfg = demo_config("synth", output_dir=tmp_path / "p", fields=tmp_path / "f" / "fields.dlf")
    cfg["projection"].update(weight_w=4.0, clip_policy="error_if_over", clip_threshold=0.0)
    assert cli.run("synth", cfg) == 3
    assert "frame 0:" in caplog.text


def test_main_with_overrides(tmp_path):
    out = tmp_path / "f"
    code = cli.main(["gen-map", "-c", str(DEMO / "gen-map.yaml"), "--set", f"output_dir={out}",
                     "--set", "sequence.frame_count=2"])
    assert code == 0
    assert len(oracle.read_dlf(out / "fields.dlf")) == 2
    assert cli.main(["gen-map", "-c", str(tmp_path / "nope.yaml")]) == 2
    assert cli.main(["gen-map", "--set", "novalue"]) == 2
