import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gcfs.metrics import PSNR_CAP, MetricReport, psnr, ssim, ssim_details, to_luma

C1, C2 = 0.01 ** 2, 0.03 ** 2


def brute_ssim(x, y):
    """Window-by-window SSIM with an explicit 11x11 Gaussian (sigma 1.5)."""
    r = np.arange(11) - 5
    g1 = np.exp(-(r ** 2) / (2 * 1.5 ** 2))
    w = np.outer(g1, g1)
    w /= w.sum()
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            px, py = x[i : i + 11, j : j + 11], y[i : i + 11, j : j + 11]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * (px - mx) ** 2).sum()
            vy = (w * (py - my) ** 2).sum()
            cxy = (w * (px - mx) * (py - my)).sum()
            vals.append(((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx ** 2 + my ** 2 + C1) * (vx + vy + C2)))
    return float(np.mean(vals))


def test_psnr_identical_is_cap():
    x = np.random.default_rng(0).random((3, 8, 8))
    assert psnr(x, x) == PSNR_CAP == 100.0


def test_psnr_uniform_one_level():
    a = np.full((3, 10, 10), 0.5)
    assert abs(psnr(a, a + 1 / 255) - 48.1308) < 1e-3
    assert psnr(a, a + 1 / 255) == pytest.approx(20 * math.log10(255), abs=1e-9)


def test_psnr_peak():
    a = np.zeros((4, 4))
    assert psnr(a, a + 1.0, peak=255.0) == pytest.approx(20 * math.log10(255), abs=1e-9)


def test_psnr_decreases_with_noise():
    a = np.full((3, 16, 16), 0.5)
    vals = [psnr(a, a + amp) for amp in (0.01, 0.05, 0.2)]
    assert vals[0] > vals[1] > vals[2]


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="dimensions"):
        psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))
    with pytest.raises(ValueError):
        ssim(np.zeros((12, 12)), np.zeros((13, 12)))


img_pairs = st.integers(0, 2**32 - 1).map(
    lambda s: np.random.default_rng(s).random((2, 3, 14, 13)))


@given(img_pairs)
@settings(max_examples=25, deadline=None)
def test_metrics_symmetric(pair):
    a, b = pair
    assert psnr(a, b) == psnr(b, a)
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12


@given(arrays(np.float64, (3, 12, 12), elements=st.floats(0, 1)))
@settings(max_examples=25, deadline=None)
def test_ssim_self_is_one(x):
    assert abs(ssim(x, x) - 1.0) < 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_ssim_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    x = rng.random((17, 15))
    y = np.clip(x + rng.normal(0, 0.1, x.shape), 0, 1)
    val, fallback = ssim_details(x, y)
    assert not fallback
    assert abs(val - brute_ssim(x, y)) < 1e-10


def test_ssim_color_uses_luma():
    rng = np.random.default_rng(4)
    a, b = rng.random((2, 3, 13, 13))
    assert abs(ssim(a, b) - brute_ssim(to_luma(a), to_luma(b))) < 1e-10
    assert np.allclose(to_luma(np.ones((3, 2, 2))), 1.0)


def test_ssim_constant_black_white():
    a, b = np.zeros((16, 16)), np.ones((16, 16))
    assert ssim(a, b) == pytest.approx(C1 / (1 + C1), rel=1e-9)
    assert abs(ssim(a, b) - 1.0e-4) < 1e-6


def test_ssim_small_image_fallback_flagged():
    val, fallback = ssim_details(np.zeros((5, 5)), np.ones((5, 5)))
    assert fallback
    assert val == pytest.approx(C1 / (1 + C1), rel=1e-9)


def test_ssim_translation_consistent():
    rng = np.random.default_rng(5)
    big_a = rng.random((30, 30))
    big_b = np.clip(big_a + rng.normal(0, 0.05, big_a.shape), 0, 1)
    base = ssim(big_a[2:22, 3:23], big_b[2:22, 3:23])
    # roll both by the same offset and crop the same region of the original content
    ra, rb = np.roll(big_a, (4, 5), axis=(0, 1)), np.roll(big_b, (4, 5), axis=(0, 1))
    assert abs(ssim(ra[6:26, 8:28], rb[6:26, 8:28]) - base) < 1e-9


def test_report_mean_and_csv():
    rep = MetricReport()
    rng = np.random.default_rng(6)
    t = rng.random((3, 12, 12))
    rep.add("a", t, t)
    rep.add("b", np.clip(t + 0.02, 0, 1), t)
    assert rep.mean_psnr == pytest.approx((rep.rows[0][1] + rep.rows[1][1]) / 2)
    rep.notes.append("padded")
    lines = rep.to_csv().splitlines()
    assert lines[0] == "name,psnr,ssim"
    assert lines[1].startswith("a,100.0,1.0")
    assert lines[3].startswith("mean,")
    assert lines[4] == "#note,padded,"
    assert float(lines[3].split(",")[1]) == rep.mean_psnr
