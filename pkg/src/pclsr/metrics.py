"""PSNR / SSIM on the luma channel, SR-benchmark conventions."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .errors import DimensionError, ParameterError, RangeError

PSNR_CAP = 100.0
RANGE_SLACK = 1e-6


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 studio-swing luma in [16, 235] from RGB in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"expected H x W x 3 RGB, got {img.shape}")
    if img.min() < -RANGE_SLACK or img.max() > 1 + RANGE_SLACK:
        raise RangeError(f"RGB values outside [0, 1]: [{img.min()}, {img.max()}]")
    return 16.0 + 65.481 * img[..., 0] + 128.553 * img[..., 1] + 24.966 * img[..., 2]


def _shaved_y(sr, hr, shave, quantized):
    if np.shape(sr) != np.shape(hr):
        raise DimensionError(f"SR {np.shape(sr)} and HR {np.shape(hr)} differ in shape")
    ys, yh = rgb_to_y(sr), rgb_to_y(hr)
    if quantized:
        ys, yh = np.round(ys), np.round(yh)
    if shave:
        ys = ys[shave:-shave, shave:-shave]
        yh = yh[shave:-shave, shave:-shave]
    return ys, yh


def psnr_y(sr, hr, shave=4, quantized=False) -> float:
    """PSNR in dB of the shaved Y planes; ``inf`` for identical inputs."""
    ys, yh = _shaved_y(sr, hr, shave, quantized)
    mse = np.mean((ys - yh) ** 2)
    if mse == 0:
        return math.inf
    return 10 * math.log10(255.0**2 / mse)


def gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_plane(x, y, data_range=255.0, window=None):
    window = gaussian_window() if window is None else window
    if min(x.shape) < window.shape[0]:
        raise ParameterError(f"image {x.shape} is smaller than the {window.shape[0]}px SSIM window")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def filt(a):
        return convolve2d(a, window, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x**2
    syy = filt(y * y) - mu_y**2
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim_y(sr, hr, shave=4, quantized=False) -> float:
    ys, yh = _shaved_y(sr, hr, shave, quantized)
    if np.array_equal(ys, yh):
        return 1.0
    return ssim_plane(ys, yh)


@dataclass
class EvalReport:
    dataset: str
    scale: int
    shave: int
    names: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    def add(self, name, p, s):
        self.names.append(name)
        self.psnr.append(p)
        self.ssim.append(s)

    @property
    def mean_psnr(self):
        return float(np.mean(self.psnr)) if self.psnr else float("nan")

    @property
    def mean_ssim(self):
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def summary_line(self):
        return f"PSNR={self.mean_psnr:.4f} SSIM={self.mean_ssim:.4f}"

    def write_csv(self, path):
        rows = sorted(zip(self.names, self.psnr, self.ssim))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["filename", "psnr", "ssim"])
            for name, p, s in rows:
                w.writerow([name, f"{min(p, PSNR_CAP):.6f}", f"{s:.6f}"])
            w.writerow(["mean", f"{min(self.mean_psnr, PSNR_CAP):.6f}", f"{self.mean_ssim:.6f}"])


def evaluate(dataset, upscaler, shave=None, quantized=False) -> EvalReport:
    """Run ``upscaler(lr) -> sr`` over a PairedDataset and score every image.

    PSNR is capped at 100 dB per image before averaging so identical pairs
    don't make the mean infinite.
    """
    shave = dataset.scale if shave is None else shave
    report = EvalReport(dataset.name, dataset.scale, shave)
    for i in range(len(dataset)):
        lr, hr = dataset.load_pair(i)
        sr = np.clip(upscaler(lr), 0, 1)
        report.add(dataset.stem(i), min(psnr_y(sr, hr, shave, quantized), PSNR_CAP), ssim_y(sr, hr, shave, quantized))
    return report
