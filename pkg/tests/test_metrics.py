import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from snapfield.errors import DimensionMismatch, ImageTooSmall
from snapfield.metrics import SSIM_K1, frame_metrics, mean_psnr, psnr, ssim


def test_psnr_identical_is_inf(rng):
    a = rng.random((8, 8, 3))
    assert psnr(a, a) == math.inf


def test_psnr_twenty_db():
    assert psnr(np.zeros((4, 4, 3)), np.full((4, 4, 3), 0.1)) == pytest.approx(20.0, abs=1e-12)


def test_psnr_matches_direct_computation(rng):
    a, b = rng.random((2, 20, 17, 3))
    mse = np.mean((a - b) ** 2)
    assert psnr(a, b) == pytest.approx(10 * np.log10(1 / mse), abs=1e-9)


def test_psnr_symmetric(rng):
    a, b = rng.random((2, 9, 9))
    assert psnr(a, b) == psnr(b, a)


def test_psnr_clamps_inputs():
    assert psnr(np.zeros((3, 3)), np.full((3, 3), -5.0)) == math.inf


def test_psnr_decreases_with_noise(rng):
    a = 0.25 + 0.5 * rng.random((32, 32, 3))
    noise = rng.normal(size=a.shape)
    values = [psnr(a, a + s * noise) for s in (0.01, 0.02, 0.04, 0.08, 0.16)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(DimensionMismatch):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))


def test_ssim_identity(rng):
    a = rng.random((16, 20, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)


def test_ssim_inverted_binary_image(rng):
    a = (rng.random((32, 32)) > 0.5).astype(float)
    assert ssim(a, 1 - a) < 0.2


def test_ssim_constant_images_luminance_only():
    m1, m2 = 0.3, 0.7
    c1 = SSIM_K1 ** 2
    expect = (2 * m1 * m2 + c1) / (m1 ** 2 + m2 ** 2 + c1)
    assert ssim(np.full((15, 15), m1), np.full((15, 15), m2)) == pytest.approx(expect, abs=1e-12)


@pytest.mark.parametrize("shape", [(11, 11), (24, 31), (20, 20, 3)])
def test_ssim_matches_reference_implementation(rng, shape):
    a = rng.random(shape)
    b = np.clip(a + rng.normal(0, 0.1, shape), 0, 1)
    ref = structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False,
                                channel_axis=-1 if len(shape) == 3 else None)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)


def test_ssim_too_small():
    with pytest.raises(ImageTooSmall):
        ssim(np.zeros((10, 40)), np.zeros((10, 40)))


def test_frame_metrics(rng):
    ref = rng.random((3, 12, 12, 3))
    cand = ref.copy()
    cand[1] = np.clip(cand[1] + 0.05, 0, 1)
    rows = frame_metrics(ref, cand)
    assert [r[0] for r in rows] == [0, 1, 2]
    assert rows[0][1] == math.inf and rows[1][1] < 40
    assert rows[2][2] == pytest.approx(1.0)
    assert mean_psnr(ref[1:2], cand[1:2]) == rows[1][1]
