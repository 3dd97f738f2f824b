"""Full-reference quality metrics and the iteration relative error.

All images are ``W x H x S`` arrays normalized to ``[0, 1]``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import correlate1d

SSIM_TAPS = 11
SSIM_SIGMA = 1.5


def _check(ref: np.ndarray, est: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref, est = np.asarray(ref, dtype=float), np.asarray(est, dtype=float)
    if ref.shape != est.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {est.shape}")
    if ref.ndim == 2:
        ref, est = ref[..., None], est[..., None]
    return ref, est


def psnr(ref: np.ndarray, est: np.ndarray, peak: float = 1.0) -> tuple[float, np.ndarray]:
    """Band-averaged PSNR in dB and the per-band values.

    Bands reproduced exactly give ``inf``; so does the mean when every
    band is exact.
    """
    if peak <= 0:
        raise ValueError("peak must be positive")
    ref, est = _check(ref, est)
    mse = np.mean((ref - est) ** 2, axis=(0, 1))
    with np.errstate(divide="ignore"):
        per_band = 10 * np.log10(peak**2 / mse)
    return float(np.mean(per_band)), per_band


def _gaussian_window(taps: int = SSIM_TAPS, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(taps) - (taps - 1) / 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    half = len(g) // 2
    y = correlate1d(correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return y[half:x.shape[0] - half, half:x.shape[1] - half]


def ssim(ref: np.ndarray, est: np.ndarray, peak: float = 1.0) -> float:
    """Mean single-scale SSIM over bands, Gaussian window, valid region only."""
    ref, est = _check(ref, est)
    if min(ref.shape[:2]) < SSIM_TAPS:
        raise ValueError(f"image {ref.shape[:2]} is smaller than the {SSIM_TAPS}-tap window")
    g = _gaussian_window()
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    vals = []
    for b in range(ref.shape[2]):
        x, y = ref[..., b], est[..., b]
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx**2 + my**2 + c1) * (sxx + syy + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


def ergas(ref: np.ndarray, est: np.ndarray, sf: float) -> float:
    """``100/sf * sqrt(mean_b (RMSE_b / mean_b)^2)``."""
    if sf < 1:
        raise ValueError("scale factor must be at least 1")
    ref, est = _check(ref, est)
    means = ref.mean(axis=(0, 1))
    if np.any(means == 0):
        raise ValueError("a reference band has zero mean")
    rmse = np.sqrt(np.mean((ref - est) ** 2, axis=(0, 1)))
    return float(100 / sf * np.sqrt(np.mean((rmse / means) ** 2)))


def sam(ref: np.ndarray, est: np.ndarray, return_skipped: bool = False):
    """Mean spectral angle in degrees over pixels with nonzero spectra."""
    ref, est = _check(ref, est)
    nr, ne = np.linalg.norm(ref, axis=2), np.linalg.norm(est, axis=2)
    valid = (nr > 0) & (ne > 0)
    if not valid.any():
        raise ValueError("every pixel has a zero spectrum")
    cos = np.sum(ref * est, axis=2)[valid] / (nr[valid] * ne[valid])
    angle = float(np.degrees(np.mean(np.arccos(np.clip(cos, -1.0, 1.0)))))
    if return_skipped:
        return angle, int(valid.size - valid.sum())
    return angle


def relative_error(prev: np.ndarray, curr: np.ndarray) -> float:
    """``ln(||curr - prev||_F / ||prev||_F)``; ``-inf`` when unchanged."""
    prev, curr = np.asarray(prev, dtype=float), np.asarray(curr, dtype=float)
    if prev.shape != curr.shape:
        raise ValueError(f"shape mismatch: {prev.shape} vs {curr.shape}")
    norm = np.linalg.norm(prev)
    if norm == 0:
        raise ValueError("previous iterate has zero norm")
    diff = np.linalg.norm(curr - prev)
    return -math.inf if diff == 0 else float(np.log(diff / norm))


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    ergas: float
    sam_deg: float
    psnr_per_band: list[float]

    @classmethod
    def compute(cls, ref: np.ndarray, est: np.ndarray, sf: float) -> "MetricReport":
        """All four metrics; SAM is NaN when every estimated spectrum is zero."""
        mean, per_band = psnr(ref, est)
        try:
            angle = sam(ref, est)
        except ValueError:
            angle = math.nan
        return cls(mean, ssim(ref, est), ergas(ref, est, sf), angle, per_band.tolist())

    def as_dict(self) -> dict:
        return asdict(self)
