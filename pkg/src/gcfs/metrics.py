"""Full-reference image quality: PSNR and SSIM.

Images are float arrays in [0, 1], either ``(H, W)`` or planar ``(C, H, W)``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

__all__ = ["psnr", "ssim", "ssim_details", "MetricReport", "PSNR_CAP", "to_luma"]

PSNR_CAP = 100.0

_K1, _K2 = 0.01, 0.03
_WIN = 11
_SIGMA = 1.5


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``; identical images give :data:`PSNR_CAP`."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse)))


def to_luma(img: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of a planar RGB image; grayscale passes through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[0] == 1:
        return img[0]
    if img.shape[0] == 3:
        return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]
    raise ValueError(f"expected 1 or 3 channels, got shape {img.shape}")


def _gauss_window() -> np.ndarray:
    r = np.arange(_WIN) - _WIN // 2
    g = np.exp(-(r ** 2) / (2 * _SIGMA ** 2))
    return g / g.sum()


def _valid_filter(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable filter keeping only windows fully inside the image
    h = correlate1d(x, g, axis=0, mode="constant")
    h = correlate1d(h, g, axis=1, mode="constant")
    r = _WIN // 2
    return h[r : x.shape[0] - r, r : x.shape[1] - r]


def ssim_details(a, b) -> tuple[float, bool]:
    """Mean SSIM and whether the global-statistics fallback was used."""
    a, b = _check_pair(a, b)
    x, y = to_luma(a), to_luma(b)
    c1 = (_K1 * 1.0) ** 2
    c2 = (_K2 * 1.0) ** 2
    if x.shape[0] < _WIN or x.shape[1] < _WIN:
        mx, my = x.mean(), y.mean()
        vx, vy = x.var(), y.var()
        cov = np.mean((x - mx) * (y - my))
        val = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        return float(val), True
    g = _gauss_window()
    mx = _valid_filter(x, g)
    my = _valid_filter(y, g)
    sxx = _valid_filter(x * x, g) - mx * mx
    syy = _valid_filter(y * y, g) - my * my
    sxy = _valid_filter(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den)), False


def ssim(a, b) -> float:
    """Mean SSIM over valid 11x11 Gaussian (sigma 1.5) windows, range 1.0."""
    return ssim_details(a, b)[0]


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)  # (name, psnr, ssim)
    notes: list = field(default_factory=list)

    def add(self, name: str, restored, target) -> None:
        self.rows.append((name, psnr(restored, target), ssim(restored, target)))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows])) if self.rows else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "psnr", "ssim"])
        for name, p, s in self.rows:
            w.writerow([name, repr(float(p)), repr(float(s))])
        w.writerow(["mean", repr(self.mean_psnr), repr(self.mean_ssim)])
        for note in self.notes:
            w.writerow(["#note", note, ""])
        return buf.getvalue()
