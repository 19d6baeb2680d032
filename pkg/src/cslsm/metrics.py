"""PSNR and Gaussian-window SSIM for 2-D slices and 3-D volumes."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 1.0) ** 2
SSIM_C2 = (0.03 * 1.0) ** 2


def _arrays(reference, test):
    a = np.asarray(getattr(reference, "data", reference), dtype=np.float64)
    b = np.asarray(getattr(test, "data", test), dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(reference, test, peak=1.0):
    """``10 log10(count * peak^2 / ||ref - test||^2)`` over all voxels.

    Identical inputs give ``inf``.
    """
    if not peak > 0:
        raise ConfigError("peak must be > 0")
    a, b = _arrays(reference, test)
    err = float(np.sum((a - b) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(a.size * peak * peak / err)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Normalised 1-D Gaussian taps; the n-D window is their outer product."""
    x = np.arange(size) - (size - 1) / 2
    w = np.exp(-(x ** 2) / (2 * sigma * sigma))
    return w / w.sum()


def ssim_map(a, b):
    """Local SSIM at every voxel (any dimensionality), reflect-padded."""
    w = gaussian_window()

    def blur(x):
        for axis in range(x.ndim):
            x = ndimage.correlate1d(x, w, axis=axis, mode="reflect")
        return x

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a ** 2
    var_b = blur(b * b) - mu_b ** 2
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def ssim(reference, test):
    """Mean local SSIM with an 11-tap (per axis) Gaussian window, sigma 1.5."""
    a, b = _arrays(reference, test)
    return float(np.mean(ssim_map(a, b)))


def ssim3d(reference, test):
    a, b = _arrays(reference, test)
    if a.ndim != 3:
        raise ConfigError("ssim3d expects 3-D volumes")
    return ssim(a, b)


def ssim2d(reference, test):
    a, b = _arrays(reference, test)
    if a.ndim != 2:
        raise ConfigError("ssim2d expects 2-D slices")
    return ssim(a, b)


@dataclass
class MetricsReport:
    psnr_db: float
    ssim: float
    wall_seconds: float = 0.0
    iterations: int = 0
    method_label: str = ""
    compression_ratio: int = 0

    def row(self):
        return {
            "method": self.method_label,
            "ratio": self.compression_ratio,
            "psnr_db": format_float(self.psnr_db),
            "ssim": format_float(self.ssim),
            "iterations": self.iterations,
            "seconds": format_float(self.wall_seconds),
        }


REPORT_COLUMNS = ["method", "ratio", "psnr_db", "ssim", "iterations", "seconds"]


def format_float(x):
    """``repr``-style shortest round-trip text; infinities become ``inf``."""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def evaluate(reference, test, **meta):
    return MetricsReport(psnr(reference, test), ssim(reference, test), **meta)


def write_reports(reports, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for r in reports:
            writer.writerow(r.row())
