"""Acceptance criteria 1-10, each at its stated tolerance.

End-to-end criteria share one protocol: 64x64 frames of a preset toy scene,
a 0.2-unit sideways trajectory, noiseless measurement, 1500 iterations with
2048 rays per batch.  Runs are cached so later criteria reuse earlier ones.
"""
import dataclasses
import functools
import time

import numpy as np
import pytest

from snapfield import _reference
from snapfield import dataset as D
from snapfield.gaptv import gap_tv_decode
from snapfield.geometry import camera_directions, pixel_grid
from snapfield.metrics import mean_psnr, psnr, ssim
from snapfield.radiance_field import SamplingConfig, render_rays, render_rays_backward, sample_field
from snapfield.scenes import preset_scene
from snapfield.sci_model import generate_masks, sci_loss
from snapfield.trainer import (RayBatch, TrainConfig, TrajectoryParams, align_to_start,
                               batch_loss_and_grads, render_trajectory, train, write_history)

from conftest import random_grid, random_rays, record

ITERATIONS = 1500
BATCH = 2048
TRAJECTORY_LENGTH = 0.2


@functools.lru_cache(maxsize=None)
def dataset(scene="simple", rate=0.25, n=8):
    return D.make_dataset(preset_scene(scene), D.linear_trajectory(D.DEFAULT_REFERENCE, TRAJECTORY_LENGTH),
                          D.default_intrinsics(64), n, rate)


def config(joint=False, seed=0):
    return TrainConfig(iterations=ITERATIONS, batch_rays=BATCH, seed=seed, optimize_poses=joint,
                       pose_init_trans_sigma=0.01, deterministic=True,
                       sampling=dataclasses.replace(D.DEFAULT_SAMPLING, stratified=True))


def run(scene="simple", rate=0.25, n=8, joint=False):
    ds = dataset(scene, rate, n)
    gt = TrajectoryParams.from_poses(*ds.trajectory, ds.reference)
    cfg = config(joint)
    t0 = time.perf_counter()
    res = train(ds.measurement, ds.masks, ds.intrinsics, cfg, reference=ds.reference,
                trajectory=None if joint else gt)
    frames = render_trajectory(res.grid, res.trajectory, n, ds.intrinsics, cfg.sampling)
    return dict(result=res, psnr=mean_psnr(ds.frames, frames), seconds=time.perf_counter() - t0)


cached_run = functools.lru_cache(maxsize=None)(run)


@functools.lru_cache(maxsize=None)
def gaptv_psnr(scene="simple", rate=0.25, n=8):
    ds = dataset(scene, rate, n)
    return mean_psnr(ds.frames, gap_tv_decode(ds.measurement, ds.masks))


# ---- 1: gradients ---------------------------------------------------------

def _fd_parameter_error(rng):
    grid = random_grid(rng, res=8, sh_degree=int(rng.integers(0, 3)))
    o, d = random_rays(rng, 1)
    cfg = SamplingConfig(1.0, 5.0, 32)
    off = rng.random((1, 32))
    up = rng.normal(size=(1, 3))
    an = render_rays_backward(grid, o, d, cfg, up, off)

    def loss():
        return float(np.sum(render_rays(grid, o, d, cfg, off)[0] * up))

    worst, scale = 0.0, 0.0
    eps = 1e-4
    for arr, g in ((grid.density_raw, an.density_raw), (grid.sh_coeffs, an.sh_coeffs)):
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        touched = np.flatnonzero(gflat)
        idx = rng.choice(touched, min(25, touched.size), replace=False)
        idx = np.concatenate([idx, rng.choice(flat.size, 5, replace=False)])
        for i in idx:
            keep = flat[i]
            flat[i] = keep + eps
            lp = loss()
            flat[i] = keep - eps
            lm = loss()
            flat[i] = keep
            fd = (lp - lm) / (2 * eps)
            worst = max(worst, abs(fd - gflat[i]))
            scale = max(scale, abs(fd))
    return worst / scale


def multilinear_grid(rng, res=8, sh_degree=1):
    """Grid sampled from a global multilinear field.

    Trilinear interpolation reproduces such a field exactly, so inside the
    hull of voxel centres the rendered loss is smooth in the camera pose and
    a central difference is a valid oracle.  Random voxel values would make
    it only piecewise smooth.
    """
    grid = random_grid(rng, res=res, sh_degree=sh_degree)
    c = grid.voxel_centers()
    x, y, z = c[..., 0], c[..., 1], c[..., 2]
    basis = np.stack([np.ones_like(x), x, y, z, x * y, x * z, y * z, x * y * z], axis=-1)
    grid.density_raw[:] = basis @ rng.normal(0.0, 1.0, 8)
    sh = np.einsum("xyzb,bkc->xyzkc", basis, rng.normal(0.0, 0.05, (8, grid.num_sh, 3)))
    sh[..., 0, :] += 1.7
    grid.sh_coeffs[:] = sh
    return grid


def _fd_pose_error(rng, eps=1e-5):
    # narrow field of view and a short depth range keep every sample inside
    # the hull of voxel centres, where the multilinear field is smooth
    intr = D.default_intrinsics(12, fov_deg=15.0)
    grid = multilinear_grid(rng)
    traj = TrajectoryParams(rng.normal(0, 0.03, 6), rng.normal(0, 0.03, 6), D.DEFAULT_REFERENCE)
    n = 4
    masks = (rng.random((n, 144)) < 0.5).astype(np.uint8)
    batch = RayBatch(rng.integers(0, 144, 40), masks, rng.random((144, 3)) * 2, 24, rng)
    rows, cols = pixel_grid(intr)
    dirs = camera_directions(intr, rows, cols)
    sampling = SamplingConfig(3.3, 4.7, 24, stratified=True)
    _, _, g = batch_loss_and_grads(grid, traj, batch, dirs, n, sampling, normalize=True)
    v = traj.vector
    fd = np.zeros(12)
    for k in range(12):
        e = np.zeros(12)
        e[k] = eps
        lp = batch_loss_and_grads(grid, traj.with_vector(v + e), batch, dirs, n, sampling,
                                  want_pose=False, normalize=True)[0]
        lm = batch_loss_and_grads(grid, traj.with_vector(v - e), batch, dirs, n, sampling,
                                  want_pose=False, normalize=True)[0]
        fd[k] = (lp - lm) / (2 * eps)
    return np.max(np.abs(g - fd)) / np.max(np.abs(fd))


def test_criterion_01_gradients():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    field = max(_fd_parameter_error(rng) for _ in range(100))
    pose = max(_fd_pose_error(rng) for _ in range(20))
    sec = time.perf_counter() - t0
    ok = field <= 1e-4 and pose <= 1e-3 and sec <= 30
    record(1, ok, f"field rel err {field:.1e} (<=1e-4, 100 instances), pose rel err {pose:.1e} "
                  f"(<=1e-3, 20 multilinear-field instances, eps 1e-5), {sec:.1f}s (<=30s)")
    assert ok


# ---- 2: formation model ---------------------------------------------------

def test_criterion_02_formation_model():
    t0 = time.perf_counter()
    ds = dataset()
    n = ds.masks.n
    rendered = ds.frames.reshape(n, -1, 3).transpose(1, 0, 2)
    loss, _ = sci_loss(rendered, ds.masks.masks.reshape(n, -1).T, ds.measurement.pixels.reshape(-1, 3))
    counts_ok = all(np.all(generate_masks(64, 64, 8, r, seed=s).counts() == round(8 * r))
                    for r in (1 / 8, 2 / 8, 4 / 8, 6 / 8) for s in range(3))
    sec = time.perf_counter() - t0
    ok = loss == 0.0 and counts_ok and sec <= 5
    record(2, ok, f"noiseless loss {loss!r} (exactly 0), exact mask counts {counts_ok}, {sec:.1f}s (<=5s)")
    assert ok


# ---- 3: volume rendering invariants ---------------------------------------

def test_criterion_03_rendering_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    cfg = SamplingConfig(0.5, 5.5, 64)
    norm_err, mono, opaque_err, zero_ok = 0.0, True, 0.0, True
    for _ in range(100):
        grid = random_grid(rng, res=8, sh_degree=int(rng.integers(0, 3)),
                           density_scale=float(rng.uniform(0.5, 4)))
        o, d = random_rays(rng, 100)
        args = (grid.density_raw, grid.sh_coeffs.reshape(-1, grid.num_sh * 3), grid.sh_degree,
                grid.bbox_min, grid.bbox_max, o, d, cfg.t_near, cfg.t_far, cfg.n_samples, None,
                np.zeros(3), 0.0)
        _, tfin, w = _reference.render_forward(*args, return_weights=True)
        norm_err = max(norm_err, float(np.max(np.abs(w.sum(1) + tfin - 1))))
        trans = 1 - np.concatenate([np.zeros((100, 1)), np.cumsum(w, 1)], 1)
        mono &= bool(np.all(np.diff(trans, axis=1) <= 1e-12)) and bool(np.all(w >= 0))
        # opaque limit: rays starting inside the box stop at their first sample
        opaque = grid.copy()
        opaque.density_raw[:] = 2000.0     # sigma * delta ~ 110
        oi = rng.uniform(-0.5, 0.5, (100, 3))
        col, t_op = render_rays(opaque, oi, d, SamplingConfig(0.1, 1.0, 16))
        first = oi + d * (0.1 + 0.5 * 0.9 / 16)
        expect = np.array([sample_field(opaque, p, di)[1] for p, di in zip(first, d)])
        opaque_err = max(opaque_err, float(np.max(np.abs(col - expect))), float(np.max(t_op)))
        # zero-density limit: background only, full transmittance
        empty = grid.copy()
        empty.density_raw[:] = -200.0
        bg = SamplingConfig(0.5, 5.5, 64, background="white")
        col, t_z = render_rays(empty, o, d, bg)
        zero_ok &= bool(np.all(col == 1.0)) and bool(np.all(t_z == 1.0))
    sec = time.perf_counter() - t0
    ok = norm_err <= 1e-6 and mono and opaque_err <= 1e-6 and zero_ok and sec <= 10
    record(3, ok, f"10^4 rays: |sum w + T - 1| {norm_err:.1e}, monotone T {mono}, opaque err "
                  f"{opaque_err:.1e}, zero-density exact {zero_ok}, {sec:.1f}s (<=10s)")
    assert ok


# ---- 4, 5: end-to-end recovery ----------------------------------------------

@pytest.mark.slow
def test_criterion_04_known_pose_recovery():
    r = cached_run()
    ok = r["psnr"] >= 28.0 and r["seconds"] <= 15 * 60
    record(4, ok, f"known poses: mean PSNR {r['psnr']:.2f} dB (>=28), {ITERATIONS} iterations, "
                  f"{r['seconds']:.0f}s (<=900s)")
    assert ok


@pytest.mark.slow
def test_criterion_05_joint_pose_recovery():
    ds = dataset()
    known = cached_run()["psnr"]
    r = cached_run(joint=True)
    _, end = align_to_start(r["result"].trajectory, ds.trajectory[0])
    err = float(np.linalg.norm(end.translation - ds.trajectory[1].translation))
    raw_s, raw_e = r["result"].trajectory.endpoints()
    raw = max(np.linalg.norm(raw_s.translation - ds.trajectory[0].translation),
              np.linalg.norm(raw_e.translation - ds.trajectory[1].translation))
    limit = 0.1 * TRAJECTORY_LENGTH
    ok = err <= limit and abs(r["psnr"] - known) <= 2.0
    record(5, ok, f"joint poses: end translation error {err:.4f} after start alignment "
                  f"(<={limit:.3f}; unaligned {raw:.3f}), PSNR {r['psnr']:.2f} vs known {known:.2f} dB (within 2)")
    assert ok


# ---- 6, 7, 8: trends ----------------------------------------------------------

@pytest.mark.slow
def test_criterion_06_beats_gaptv_on_every_scene():
    rows = []
    for scene in ("simple", "medium", "cluttered"):
        rows.append((scene, cached_run(scene)["psnr"], gaptv_psnr(scene)))
    ok = all(t - g >= 2.0 for _, t, g in rows)
    record(6, ok, "; ".join(f"{s} {t:.2f} vs GAP-TV {g:.2f} dB" for s, t, g in rows) + " (margin >=2)")
    assert ok


@pytest.mark.slow
def test_criterion_07_overlap_rate_trend():
    rates = (0.125, 0.25, 0.5, 0.75)
    p = {r: cached_run(rate=r)["psnr"] for r in rates}
    worst_is_075 = p[0.75] == min(p.values())
    quarter_ok = p[0.25] >= p[0.125] - 0.5
    ok = worst_is_075 and quarter_ok
    record(7, ok, "PSNR by OR " + ", ".join(f"{r}: {p[r]:.2f}" for r in rates)
           + f"; 0.75 is minimum {worst_is_075}; 0.25 >= 0.125 - 0.5 dB {quarter_ok}")
    assert worst_is_075, "OR=0.75 is not the worst overlap rate"
    assert quarter_ok


@pytest.mark.slow
def test_criterion_08_compression_ratio_trend():
    ds8, ds24 = dataset(n=8), dataset(n=24)
    assert ds24.masks.n == 24
    t8, t24 = cached_run()["psnr"], cached_run(n=24)["psnr"]
    g8, g24 = gaptv_psnr(), gaptv_psnr(n=24)
    drop_t, drop_g = t8 - t24, g8 - g24
    ok = abs(t24 - t8) <= 5.0 and drop_g > drop_t
    record(8, ok, f"trainer CR8 {t8:.2f} -> CR24 {t24:.2f} dB (drop {drop_t:.2f}, within 5); "
                  f"GAP-TV {g8:.2f} -> {g24:.2f} dB (drop {drop_g:.2f} > trainer's)")
    assert ok


# ---- 9: determinism -------------------------------------------------------------

@pytest.mark.slow
def test_criterion_09_determinism(tmp_path):
    first = cached_run()["result"]
    second = run()["result"]
    write_history(tmp_path / "a.csv", first.history)
    write_history(tmp_path / "b.csv", second.history)
    same = (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    record(9, same, f"two seeded runs of criterion 4 give identical loss CSVs: {same}")
    assert same


# ---- 10: metrics ------------------------------------------------------------------

def test_criterion_10_metric_sanity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1010)
    ok = psnr(np.zeros((8, 8, 3)), np.full((8, 8, 3), 0.1)) == pytest.approx(20.0, abs=1e-12)
    for _ in range(100):
        shape = (int(rng.integers(11, 33)), int(rng.integers(11, 33)), int(rng.choice([1, 3])))
        a, b = rng.random(shape), rng.random(shape)
        ok &= psnr(a, a) == np.inf and abs(ssim(a, a) - 1.0) <= 1e-9
        ok &= psnr(a, b) == psnr(b, a)
        base = 0.25 + 0.5 * a
        noise = rng.normal(size=shape)
        vals = [psnr(base, base + s * noise) for s in (0.01, 0.02, 0.04, 0.08, 0.16)]
        ok &= all(x > y for x, y in zip(vals, vals[1:]))
        m1, m2 = rng.uniform(0, 1, 2)
        lum = (2 * m1 * m2 + 1e-4) / (m1 * m1 + m2 * m2 + 1e-4)
        ok &= abs(ssim(np.full(shape, m1), np.full(shape, m2)) - lum) <= 1e-9
    sec = time.perf_counter() - t0
    ok = bool(ok) and sec <= 5
    record(10, ok, f"psnr/ssim identities, symmetry, noise monotonicity on 100 pairs: {ok}, {sec:.1f}s (<=5s)")
    assert ok
