"""Spatial/spectral degradation operators and Wald-style pair synthesis.

Axis convention for images: ``z[x, y, band]`` with mode 0 the width (``x``)
and mode 1 the height (``y``).  A 2D kernel ``k[tx, ty]`` is indexed the same
way.  Blur-then-decimate keeps the sample at the start of every
``sf``-block, with the kernel centred on that block, and replicates the
border symmetrically (``... x1 x0 | x0 x1 ...``).
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import convolve2d

from .tensor import mode_product

WEIGHT_FLOOR = 1e-12


class KernelKind(str, enum.Enum):
    AVERAGE = "average"
    GAUSSIAN = "gaussian"
    MOTION = "motion"
    ELLIPTICAL = "elliptical"
    HYBRID = "hybrid"
    SENSOR_VARYING = "sensor_varying"


@dataclass
class Kernel2D:
    """Normalised blur kernel.

    ``values`` is ``(kx, ky)`` for band-shared kernels and ``(kx, ky, S)``
    for :attr:`KernelKind.SENSOR_VARYING`.
    """

    values: np.ndarray
    kind: KernelKind
    params: dict = field(default_factory=dict)

    @property
    def band_varying(self) -> bool:
        return self.values.ndim == 3


def _normalize(k: np.ndarray) -> np.ndarray:
    total = k.sum(axis=(0, 1), keepdims=True)
    if np.any(total <= 0):
        raise ValueError("kernel has no positive mass")
    return k / total


def _gaussian_1d(size: int, sigma: float) -> np.ndarray:
    if size < 1:
        raise ValueError(f"kernel support must be >= 1, got {size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    # even supports sample at half-integer offsets
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _motion(length: float, angle_deg: float, samples_per_pixel: int = 1000) -> np.ndarray:
    if length <= 0:
        raise ValueError(f"motion length must be positive, got {length}")
    n = max(1, int(round(length * samples_per_pixel)))
    t = -0.5 + (np.arange(n) + 0.5) * (length / n)
    theta = math.radians(angle_deg)
    x = np.floor(t * math.cos(theta) + 0.5).astype(int)
    y = np.floor(t * math.sin(theta) + 0.5).astype(int)
    x -= x.min()
    y -= y.min()
    k = np.zeros((x.max() + 1, y.max() + 1))
    np.add.at(k, (x, y), 1.0)
    return k / k.sum()


def _elliptical(size: int, sigma_x: float, sigma_y: float, angle_deg: float) -> np.ndarray:
    if sigma_x <= 0 or sigma_y <= 0:
        raise ValueError("elliptical sigmas must be positive")
    if size < 1:
        raise ValueError(f"kernel support must be >= 1, got {size}")
    c = (size - 1) / 2.0
    x, y = np.meshgrid(np.arange(size) - c, np.arange(size) - c, indexing="ij")
    theta = math.radians(angle_deg)
    xr = x * math.cos(theta) + y * math.sin(theta)
    yr = -x * math.sin(theta) + y * math.cos(theta)
    k = np.exp(-0.5 * ((xr / sigma_x) ** 2 + (yr / sigma_y) ** 2))
    return k / k.sum()


def build_kernel(kind: KernelKind | str, **params) -> Kernel2D:
    """Build one of the supported blur kernels.

    Parameters per kind (defaults in brackets)::

        average         size [4]
        gaussian        size [4], sigma [2.0]
        motion          length [4], angle [30.0] degrees
        elliptical      sigma_x [1.0], sigma_y [3.0], angle [30.0], size [2*ceil(3*max sigma)+1]
        hybrid          sigma [2.0], size [7], length [4], angle [30.0]
        sensor_varying  sigmas (one per band) or sigma_min/sigma_max/bands, size [7]
    """
    kind = KernelKind(kind)
    if kind is KernelKind.AVERAGE:
        size = int(params.get("size", 4))
        if size < 1:
            raise ValueError(f"kernel support must be >= 1, got {size}")
        values = np.full((size, size), 1.0 / size**2)
        used = {"size": size}
    elif kind is KernelKind.GAUSSIAN:
        size, sigma = int(params.get("size", 4)), float(params.get("sigma", 2.0))
        g = _gaussian_1d(size, sigma)
        values = np.outer(g, g)
        used = {"size": size, "sigma": sigma}
    elif kind is KernelKind.MOTION:
        length, angle = float(params.get("length", 4)), float(params.get("angle", 30.0))
        values = _motion(length, angle)
        used = {"length": length, "angle": angle}
    elif kind is KernelKind.ELLIPTICAL:
        sx, sy = float(params.get("sigma_x", 1.0)), float(params.get("sigma_y", 3.0))
        angle = float(params.get("angle", 30.0))
        size = int(params.get("size", 2 * math.ceil(3 * max(sx, sy)) + 1))
        values = _elliptical(size, sx, sy, angle)
        used = {"sigma_x": sx, "sigma_y": sy, "angle": angle, "size": size}
    elif kind is KernelKind.HYBRID:
        sigma, size = float(params.get("sigma", 2.0)), int(params.get("size", 7))
        length, angle = float(params.get("length", 4)), float(params.get("angle", 30.0))
        g = _gaussian_1d(size, sigma)
        values = _normalize(convolve2d(np.outer(g, g), _motion(length, angle)))
        used = {"sigma": sigma, "size": size, "length": length, "angle": angle}
    else:
        if "sigmas" in params:
            sigmas = [float(s) for s in params["sigmas"]]
        else:
            bands = int(params["bands"])
            sigmas = list(np.linspace(float(params.get("sigma_min", 0.5)),
                                      float(params.get("sigma_max", 2.5)), bands))
        if not sigmas:
            raise ValueError("sensor_varying kernel needs at least one band sigma")
        size = int(params.get("size", 7))
        values = np.stack([np.outer(g, g) for g in (_gaussian_1d(size, s) for s in sigmas)], axis=-1)
        used = {"sigmas": sigmas, "size": size}
    return Kernel2D(_normalize(values), kind, used)


def separate_kernel(k: Kernel2D | np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Best rank-1 split ``k ~ u v^T`` after zero-padding to a square support.

    Returns ``(u, v, quality)`` with ``u`` acting on mode 0, ``v`` on mode 1,
    both positive-signed and summing to one, and ``quality`` the fraction of
    squared singular-value energy kept by the leading term.
    """
    values = k.values if isinstance(k, Kernel2D) else np.asarray(k, dtype=float)
    if values.ndim != 2:
        raise ValueError("separate_kernel expects a band-shared 2D kernel")
    if not np.any(values):
        raise ValueError("cannot separate an all-zero kernel")
    n = max(values.shape)
    padded = np.zeros((n, n))
    ox, oy = (n - values.shape[0]) // 2, (n - values.shape[1]) // 2
    padded[ox:ox + values.shape[0], oy:oy + values.shape[1]] = values
    uu, s, vt = np.linalg.svd(padded)
    u, v = uu[:, 0] * np.sqrt(s[0]), vt[0] * np.sqrt(s[0])
    if u.sum() < 0:
        u, v = -u, -v
    u, v = u / u.sum(), v / v.sum()
    u[np.abs(u) < WEIGHT_FLOOR] = 0.0
    v[np.abs(v) < WEIGHT_FLOOR] = 0.0
    quality = float(s[0] ** 2 / np.sum(s**2))
    return u, v, quality


def _reflect(idx: np.ndarray, n: int) -> np.ndarray:
    m = np.mod(idx, 2 * n)
    return np.where(m >= n, 2 * n - 1 - m, m)


def _tap_indices(length: int, sf: int, size: int) -> np.ndarray:
    # (size // sf, length) source indices, kernel centred on each sf-block
    start = sf * np.arange(size // sf) + (sf - length) // 2
    return _reflect(start[:, None] + np.arange(length)[None, :], size)


def build_spatial_operator(u: np.ndarray, sf: int, size: int) -> np.ndarray:
    """Blur-then-decimate matrix of shape ``(size // sf, size)``."""
    u = np.asarray(u, dtype=float).ravel()
    if sf < 1 or size % sf:
        raise ValueError(f"scale factor {sf} must divide the size {size}")
    idx = _tap_indices(u.size, sf, size)
    p = np.zeros((size // sf, size))
    rows = np.repeat(np.arange(size // sf), u.size)
    np.add.at(p, (rows, idx.ravel()), np.tile(u, size // sf))
    return p


def build_spectral_operator(srf: np.ndarray) -> np.ndarray:
    """Row-normalised spectral response matrix (``s x S``)."""
    srf = np.atleast_2d(np.asarray(srf, dtype=float))
    if np.any(srf < 0):
        raise ValueError("spectral response must be nonnegative")
    totals = srf.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        bad = int(np.flatnonzero(totals.ravel() <= 0)[0])
        raise ValueError(f"spectral response row {bad} has zero total response")
    p = srf / totals
    p[p < WEIGHT_FLOOR] = 0.0
    return p / p.sum(axis=1, keepdims=True)


def gaussian_srf(bands: int, centers: Sequence[float] | None = None, sigma: float = 4.0,
                 out_bands: int = 3) -> np.ndarray:
    """Synthetic Gaussian spectral responses over band indices ``0..bands-1``."""
    if centers is None:
        centers = [(2 * j + 1) * bands / (2 * out_bands) - 0.5 for j in range(out_bands)]
    b = np.arange(bands)
    srf = np.exp(-0.5 * ((b[None, :] - np.asarray(centers, float)[:, None]) / sigma) ** 2)
    return build_spectral_operator(srf)


def block_srf(bands: int, out_bands: int) -> np.ndarray:
    """Box responses over contiguous, near-equal band ranges."""
    edges = np.linspace(0, bands, out_bands + 1).round().astype(int)
    srf = np.zeros((out_bands, bands))
    for j in range(out_bands):
        srf[j, edges[j]:edges[j + 1]] = 1.0
    return build_spectral_operator(srf)


def load_srf_csv(path: str | Path) -> np.ndarray:
    """Read an ``s x S`` response table; a non-numeric first row is a header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: empty SRF file")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    return build_spectral_operator(np.array([[float(c) for c in r] for r in rows]))


@dataclass
class DegradationModel:
    """Separable degradation ``H = Z x0 P1 x1 P2``, ``M = Z x2 P3``."""

    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray
    sf: int
    separation_quality: float = 1.0
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    kernel: Kernel2D | None = None

    def __post_init__(self):
        if self.p1.shape[1] != self.sf * self.p1.shape[0] or self.p2.shape[1] != self.sf * self.p2.shape[0]:
            raise ValueError("spatial operators do not match the scale factor")

    @classmethod
    def build(cls, kernel: Kernel2D, sf: int, width: int, height: int, srf: np.ndarray) -> "DegradationModel":
        """Operators for a ``width x height`` image; non-separable kernels are
        replaced by their rank-1 approximation, band-varying kernels by the
        mean-sigma Gaussian."""
        u, v, quality = fusion_kernel(kernel)
        return cls(build_spatial_operator(u, sf, width), build_spatial_operator(v, sf, height),
                   build_spectral_operator(srf), sf, quality, u, v, kernel)

    def for_patch(self, m: int) -> "DegradationModel":
        """The same blur and SRF restricted to an ``m x m`` patch."""
        if self.u is None or self.v is None:
            raise ValueError("model was not built from 1D kernels")
        return DegradationModel(build_spatial_operator(self.u, self.sf, m),
                                build_spatial_operator(self.v, self.sf, m),
                                self.p3, self.sf, self.separation_quality, self.u, self.v, self.kernel)


def fusion_kernel(kernel: Kernel2D) -> tuple[np.ndarray, np.ndarray, float]:
    """Separable kernel the fusion model assumes for ``kernel``."""
    if kernel.band_varying:
        sigma = float(np.mean(kernel.params["sigmas"]))
        g = _gaussian_1d(int(kernel.params["size"]), sigma)
        return separate_kernel(np.outer(g, g))
    return separate_kernel(kernel)


def degrade(z: np.ndarray, dm: DegradationModel) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free ``(H, M)`` from ``z`` under the separable model."""
    if z.ndim != 3 or z.shape[0] != dm.p1.shape[1] or z.shape[1] != dm.p2.shape[1] or z.shape[2] != dm.p3.shape[1]:
        raise ValueError(f"image shape {z.shape} does not match the degradation operators")
    h = mode_product(mode_product(z, dm.p1, 0), dm.p2, 1)
    return h, mode_product(z, dm.p3, 2)


def blur_decimate(z: np.ndarray, kernel: Kernel2D | np.ndarray, sf: int) -> np.ndarray:
    """Blur ``z`` with the full 2D (possibly band-varying) kernel, then decimate."""
    k = kernel.values if isinstance(kernel, Kernel2D) else np.asarray(kernel, dtype=float)
    w, h, s = z.shape
    if w % sf or h % sf:
        raise ValueError(f"scale factor {sf} must divide the image size {w}x{h}")
    if k.ndim == 3 and k.shape[2] != s:
        raise ValueError(f"band-varying kernel has {k.shape[2]} bands, image has {s}")
    ix = _tap_indices(k.shape[0], sf, w)
    iy = _tap_indices(k.shape[1], sf, h)
    out = np.zeros((w // sf, h // sf, s))
    for a in range(k.shape[0]):
        for b in range(k.shape[1]):
            weight = k[a, b]
            if not np.any(weight):
                continue
            out += z[np.ix_(ix[:, a], iy[:, b])] * weight
    return out


def simulate_pair(z: np.ndarray, kernel: Kernel2D, sf: int, srf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free LR-HSI and HR-MSI using the true (unseparated) kernel."""
    return blur_decimate(z, kernel, sf), mode_product(z, build_spectral_operator(srf), 2)


def add_noise(x: np.ndarray, snr_db: float | None, seed: int | np.random.Generator) -> np.ndarray:
    """Add white Gaussian noise at ``snr_db`` relative to the mean-square of ``x``.

    ``snr_db`` of ``None`` or ``inf`` returns an unchanged copy.
    """
    if snr_db is None or np.isposinf(snr_db):
        return np.array(x, dtype=float, copy=True)
    if not np.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite or +inf, got {snr_db}")
    power = float(np.mean(np.square(x)))
    if power == 0.0:
        raise ValueError("cannot calibrate noise on a zero-power signal")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sigma = math.sqrt(power / 10 ** (snr_db / 10))
    return x + sigma * rng.standard_normal(x.shape)
