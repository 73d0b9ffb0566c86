"""Image and sequence quality metrics, plus HDR-to-display tone mapping.

Metrics operate on tone-mapped LDR images so input/denoised/reference
comparisons match what a viewer sees; exposure is fixed per scenario.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .color import luma709, srgb_encode, xyz_to_rgb

PSNR_CAP_DB = 99.0


def tone_map(xyz_image: np.ndarray, exposure: float = 1.0) -> np.ndarray:
    """XYZ HDR -> display sRGB in [0,1]: exposure, Reinhard, gamma encode."""
    if exposure <= 0:
        raise ValueError("exposure must be positive")
    rgb = xyz_to_rgb(np.asarray(xyz_image, dtype=np.float64)) * exposure
    rgb = np.maximum(rgb, 0.0)  # out-of-gamut negatives
    rgb = rgb / (1.0 + rgb)
    return np.clip(srgb_encode(rgb), 0.0, 1.0)


def _check_dims(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"image dims differ: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) over all channels, capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_dims(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(peak * peak / mse), PSNR_CAP_DB))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean SSIM on Rec.709 luma, 11x11 Gaussian window sigma 1.5."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_dims(a, b)
    x = luma709(a) if a.ndim == 3 else a
    y = luma709(b) if b.ndim == 3 else b
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    win = _gaussian_window()
    mu_x = signal.convolve2d(x, win, mode="valid")
    mu_y = signal.convolve2d(y, win, mode="valid")
    xx = signal.convolve2d(x * x, win, mode="valid") - mu_x**2
    yy = signal.convolve2d(y * y, win, mode="valid") - mu_y**2
    xy = signal.convolve2d(x * y, win, mode="valid") - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def flicker_score(frames) -> float:
    """Mean per-pixel MSE between consecutive frames of a static sequence."""
    seq = [np.asarray(f, dtype=np.float64) for f in frames]
    if len(seq) < 2:
        raise ValueError("flicker_score needs at least 2 frames")
    total = 0.0
    for a, b in zip(seq[:-1], seq[1:]):
        _check_dims(a, b)
        total += float(np.mean((b - a) ** 2))
    return total / (len(seq) - 1)


def error_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel mean absolute channel difference, single channel."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_dims(a, b)
    d = np.abs(a - b)
    return d.mean(axis=-1) if d.ndim == 3 else d


@dataclass
class MetricReport:
    """Per-frame PSNR/SSIM for input and denoised sequences vs a reference."""

    frames: list[int] = field(default_factory=list)
    psnr_input: list[float] = field(default_factory=list)
    psnr_denoised: list[float] = field(default_factory=list)
    ssim_input: list[float] = field(default_factory=list)
    ssim_denoised: list[float] = field(default_factory=list)
    flicker_input: float | None = None
    flicker_denoised: float | None = None

    def add(self, frame: int, p_in: float, p_dn: float, s_in: float, s_dn: float):
        self.frames.append(frame)
        self.psnr_input.append(p_in)
        self.psnr_denoised.append(p_dn)
        self.ssim_input.append(s_in)
        self.ssim_denoised.append(s_dn)

    def mean_psnr_input(self) -> float:
        return float(np.mean(self.psnr_input))

    def mean_psnr_denoised(self) -> float:
        return float(np.mean(self.psnr_denoised))

    def mean_ssim_input(self) -> float:
        return float(np.mean(self.ssim_input))

    def mean_ssim_denoised(self) -> float:
        return float(np.mean(self.ssim_denoised))

    def write_csv(self, path: str | Path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["frame", "psnr_input", "psnr_denoised",
                        "ssim_input", "ssim_denoised"])
            for i, t in enumerate(self.frames):
                w.writerow([t, f"{self.psnr_input[i]:.4f}",
                            f"{self.psnr_denoised[i]:.4f}",
                            f"{self.ssim_input[i]:.6f}",
                            f"{self.ssim_denoised[i]:.6f}"])
            w.writerow(["mean", f"{self.mean_psnr_input():.4f}",
                        f"{self.mean_psnr_denoised():.4f}",
                        f"{self.mean_ssim_input():.6f}",
                        f"{self.mean_ssim_denoised():.6f}"])
            if self.flicker_input is not None:
                w.writerow(["flicker_input", f"{self.flicker_input:.8f}", "", "", ""])
            if self.flicker_denoised is not None:
                w.writerow(["flicker_denoised", f"{self.flicker_denoised:.8f}", "", "", ""])

    @staticmethod
    def read_csv(path: str | Path) -> "MetricReport":
        rep = MetricReport()
        with open(path) as f:
            rows = list(csv.reader(f))
        for row in rows[1:]:
            if row[0] == "mean":
                continue
            if row[0] == "flicker_input":
                rep.flicker_input = float(row[1])
            elif row[0] == "flicker_denoised":
                rep.flicker_denoised = float(row[1])
            else:
                rep.add(int(row[0]), float(row[1]), float(row[2]),
                        float(row[3]), float(row[4]))
        return rep
