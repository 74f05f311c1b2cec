import csv
import dataclasses

import numpy as np
import pytest

from snapfield import dataset as D
from snapfield.cli import main
from snapfield.errors import FileFormatError
from snapfield.geometry import Pose, read_poses
from snapfield.io import load_config, read_tensor, write_tensor
from snapfield.metrics import psnr
from snapfield.radiance_field import SamplingConfig, load_grid, render_frame
from snapfield.scenes import EMPTY_RAW, PRESETS, Primitive, ToyScene, bake_scene, preset_scene, render_analytic
from snapfield.sci_model import encode_measurement, load_masks, load_measurement
from snapfield.trainer import read_history

SMALL = SamplingConfig(2.5, 5.5, 32)


# ---- tensor files and config ------------------------------------------

@pytest.mark.parametrize("shape", [(), (5,), (2, 3), (4, 6, 5, 3)])
def test_tensor_roundtrip(tmp_path, rng, shape):
    a = rng.random(shape).astype(np.float32)
    write_tensor(tmp_path / "t", a)
    b = read_tensor(tmp_path / "t")
    assert b.shape == a.shape and b.dtype == np.float32 and np.array_equal(a, b)
    raw = (tmp_path / "t").read_bytes()
    assert raw[:4] == b"SCTF" and len(raw) == 12 + 4 * len(shape) + 4 + 4 * a.size


def test_tensor_rejects_bad_files(tmp_path):
    write_tensor(tmp_path / "t", np.zeros((2, 2)))
    good = (tmp_path / "t").read_bytes()
    for name, data in [("magic", b"XXXX" + good[4:]), ("short", good[:-1]),
                       ("tag", good[:20] + b"f64\0" + good[24:]),
                       ("version", good[:4] + b"\x02" + good[5:])]:
        (tmp_path / name).write_bytes(data)
        with pytest.raises(FileFormatError):
            read_tensor(tmp_path / name)


def test_config_overrides(tmp_path):
    (tmp_path / "c.ini").write_text("[train]\niterations = 10\nbatch_rays = 7\n")
    cp = load_config(tmp_path / "c.ini", ["train.iterations=20", "gaptv.tv_weight = 0.2"])
    assert cp.get("train", "iterations") == "20" and cp.get("train", "batch_rays") == "7"
    assert cp.get("gaptv", "tv_weight") == "0.2"
    with pytest.raises(ValueError):
        load_config(None, ["noequals"])
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.ini")


# ---- scenes -----------------------------------------------------------

def test_empty_scene_bakes_to_zero_density():
    g = bake_scene(ToyScene([]), 8)
    assert np.all(g.density_raw == EMPTY_RAW)
    assert g.density.max() < 1e-25


def test_sphere_membership():
    sphere = Primitive("sphere", (0, 0, 0), (0.5,), (0.2, 0.4, 0.6), 20.0)
    g = bake_scene(ToyScene([sphere]), 16)
    r = np.linalg.norm(g.voxel_centers(), axis=-1)
    inner = r < 0.5 - 0.08
    outer = r > 0.5 + 0.15
    assert np.allclose(g.density[inner], 20.0)
    assert np.allclose(g.sh_coeffs[inner][:, 0, :] * 0.28209479177387814, [0.2, 0.4, 0.6])
    assert g.density[outer].max() < 1e-3


def test_primitive_validation():
    with pytest.raises(ValueError):
        Primitive("cone", (0, 0, 0), (1,), (0.5, 0.5, 0.5), 1.0)
    with pytest.raises(ValueError):
        Primitive("box", (0, 0, 0), (1,), (0.5, 0.5, 0.5), 0.0)
    with pytest.raises(ValueError):
        Primitive("box", (0, 0, 0), (1,), (1.5, 0.5, 0.5), 1.0)
    with pytest.raises(ValueError):
        preset_scene("forest")


@pytest.mark.parametrize("scene", PRESETS)
def test_baked_scene_matches_analytic_renderer(scene):
    # oracle: ray marching the analytic scene directly, with 4x the samples
    intr = D.default_intrinsics(40)
    cfg = SamplingConfig(2.5, 5.5, 96)
    fine = dataclasses.replace(cfg, n_samples=4 * cfg.n_samples)
    pose = D.DEFAULT_REFERENCE
    baked = render_frame(bake_scene(preset_scene(scene), 128), pose, intr, cfg)
    analytic = render_analytic(preset_scene(scene), pose, intr, fine)
    assert psnr(analytic, baked) >= 40.0


# ---- datasets ---------------------------------------------------------

def _ds(n=8, rate=0.25, length=0.2, seed=0, size=24):
    return D.make_dataset(preset_scene("simple"), D.linear_trajectory(D.DEFAULT_REFERENCE, length),
                          D.default_intrinsics(size), n, rate, seed=seed, sampling=SMALL,
                          bake_resolution=16)


def test_measurement_is_bit_exact_reencode():
    ds = _ds()
    again = encode_measurement(ds.frames, ds.masks)
    assert np.array_equal(again.pixels, ds.measurement.pixels)
    oracle = np.einsum("nhw,nhwc->hwc", ds.masks.masks.astype(np.float64), ds.frames)
    assert np.allclose(ds.measurement.pixels, oracle, atol=1e-5)


def test_zero_length_trajectory_gives_identical_frames():
    ds = _ds(length=0.0)
    assert all(np.array_equal(f, ds.frames[0]) for f in ds.frames)


def test_thirty_two_frames():
    ds = _ds(n=32)
    assert ds.frames.shape[0] == 32 and ds.masks.n == 32
    assert ds.measurement.shape == (24, 24)
    assert np.all(ds.masks.counts() == 8)


def test_moving_camera_changes_frames():
    ds = _ds()
    assert not np.array_equal(ds.frames[0], ds.frames[-1])
    assert np.allclose(ds.poses[0].matrix(), ds.trajectory[0].matrix())


def test_dataset_save_load_roundtrip(tmp_path):
    ds = _ds()
    D.save_dataset(tmp_path / "d", ds)
    back = D.load_dataset(tmp_path / "d")
    assert np.array_equal(back.measurement.pixels, ds.measurement.pixels)
    assert np.array_equal(back.masks.masks, ds.masks.masks)
    assert np.array_equal(back.frames, ds.frames)
    assert back.intrinsics == ds.intrinsics and back.sampling == ds.sampling
    for p, q in zip(back.poses, ds.poses):
        assert np.array_equal(p.matrix(), q.matrix())
    assert np.array_equal(back.reference.matrix(), ds.reference.matrix())


def test_dataset_reproducible_bytes(tmp_path):
    for name in ("a", "b"):
        D.save_dataset(tmp_path / name, _ds(seed=5))
    for f in ("measurement.scms", "masks.scmk", "frames.sctf"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


# ---- command line -----------------------------------------------------

def _make(tmp_path, *extra):
    out = tmp_path / "data"
    code = main(["make-dataset", "--out", str(out), "--set", "dataset.size=16",
                 "--set", "dataset.bake_resolution=12", "--set", "sampling.n_samples=16", *extra])
    assert code == 0
    return out


def test_cli_eval_identical(tmp_path, rng, capsys):
    write_tensor(tmp_path / "a", rng.random((2, 12, 12, 3)))
    assert main(["eval", "--ref", str(tmp_path / "a"), "--cand", str(tmp_path / "a")]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0] == ["frame_index", "psnr_db", "ssim"]
    assert rows[1] == ["0", "inf", "1.0"] and rows[2] == ["1", "inf", "1.0"]


def test_cli_usage_errors(tmp_path, capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1
    assert main(["eval", "--ref", "x"]) == 1
    assert main(["make-dataset", "--out", str(tmp_path), "--set", "bogus"]) == 1
    assert main(["make-dataset", "--out", str(tmp_path), "--set", "sampling.colour=1"]) == 1
    assert main(["make-dataset", "--out", str(tmp_path), "--set", "dataset.scene=forest"]) == 1


def test_cli_data_errors(tmp_path):
    assert main(["eval", "--ref", str(tmp_path / "nope"), "--cand", str(tmp_path / "nope")]) == 2
    (tmp_path / "junk").write_bytes(b"junk")
    assert main(["eval", "--ref", str(tmp_path / "junk"), "--cand", str(tmp_path / "junk")]) == 2
    assert main(["make-dataset", "--out", str(tmp_path / "d"), "--set", "dataset.overlap_rate=0.3"]) == 2


def test_cli_encode_matches_dataset(tmp_path):
    data = _make(tmp_path)
    assert main(["encode", "--frames", str(data / "frames.sctf"), "--masks", str(data / "masks.scmk"),
                 "--out", str(tmp_path / "y.scms")]) == 0
    assert np.array_equal(load_measurement(tmp_path / "y.scms").pixels,
                          load_measurement(data / "measurement.scms").pixels)


def test_cli_pipeline(tmp_path):
    data = _make(tmp_path, "--png")
    assert (data / "measurement.png").exists()
    ck = tmp_path / "ck"
    assert main(["train", "--data", str(data), "--out", str(ck), "--set", "train.iterations=4",
                 "--set", "train.batch_rays=64", "--set", "train.grid_resolution=8"]) == 0
    for f in ("grid.scgr", "trajectory.txt", "poses.txt", "optimizer.npz", "loss.csv", "camera.ini"):
        assert (ck / f).exists()
    assert len(read_history(ck / "loss.csv")) == 4
    assert len(read_poses(ck / "poses.txt")) == 8
    # render at the checkpoint's frame poses reproduces the trainer's frames bit for bit
    assert main(["render", "--checkpoint", str(ck), "--out", str(tmp_path / "r.sctf")]) == 0
    assert np.array_equal(read_tensor(tmp_path / "r.sctf"), read_tensor(ck / "frames.sctf"))
    # novel views from a user pose file
    (tmp_path / "novel.txt").write_text("1 0 0 0.3 0 1 0 0 0 0 1 -4\n")
    assert main(["render", "--checkpoint", str(ck), "--poses", str(tmp_path / "novel.txt"),
                 "--out", str(tmp_path / "n.sctf"), "--png-dir", str(tmp_path / "png")]) == 0
    assert read_tensor(tmp_path / "n.sctf").shape == (1, 16, 16, 3)
    assert (tmp_path / "png" / "view_000.png").exists()
    assert main(["decode-gaptv", "--data", str(data), "--out", str(tmp_path / "g.sctf"),
                 "--set", "gaptv.outer_iterations=3"]) == 0
    assert read_tensor(tmp_path / "g.sctf").shape == (8, 16, 16, 3)
    assert main(["eval", "--ref", str(data / "frames.sctf"), "--cand", str(tmp_path / "g.sctf"),
                 "--out", str(tmp_path / "m.csv")]) == 0
    rows = list(csv.reader((tmp_path / "m.csv").read_text().splitlines()))
    assert len(rows) == 9 and all(float(r[1]) > 5 for r in rows[1:])


def test_cli_known_poses_training(tmp_path):
    data = _make(tmp_path)
    ck = tmp_path / "ck"
    assert main(["train", "--data", str(data), "--out", str(ck), "--known-poses",
                 "--set", "train.optimize_poses=false", "--set", "train.iterations=2",
                 "--set", "train.batch_rays=32", "--set", "train.grid_resolution=8"]) == 0
    gt = read_poses(data / "trajectory.txt")
    got = read_poses(ck / "trajectory.txt")
    assert all(np.allclose(a.matrix(), b.matrix(), atol=1e-12) for a, b in zip(gt, got))


def test_cli_config_file(tmp_path):
    (tmp_path / "c.ini").write_text("[dataset]\nsize = 16\nn = 4\noverlap_rate = 0.5\n"
                                    "bake_resolution = 8\n[sampling]\nn_samples = 8\n")
    assert main(["make-dataset", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path / "d")]) == 0
    assert load_masks(tmp_path / "d" / "masks.scmk").masks.shape == (4, 16, 16)
    assert main(["make-dataset", "--config", str(tmp_path / "none.ini"), "--out", str(tmp_path / "e")]) == 1
