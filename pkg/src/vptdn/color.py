"""Colorspace transforms between linear sRGB and CIE XYZ (D65).

The rendering and denoising pipeline works in XYZ; scene colors authored in
linear RGB are converted on load and back again only for display.
"""
from __future__ import annotations

import numpy as np

# IEC 61966-2-1 matrices, D65 white.
RGB_TO_XYZ = np.array(
    [
        [0.4123907992659595, 0.3575843393838780, 0.1804807884018343],
        [0.2126390058715104, 0.7151686787677559, 0.0721923153607337],
        [0.0193308187155918, 0.1191947797946259, 0.9505321522496607],
    ]
)
XYZ_TO_RGB = np.linalg.inv(RGB_TO_XYZ)


def rgb_to_xyz(rgb) -> np.ndarray:
    """Linear sRGB -> XYZ over the last axis."""
    return np.asarray(rgb, dtype=np.float64) @ RGB_TO_XYZ.T


def xyz_to_rgb(xyz) -> np.ndarray:
    """XYZ -> linear sRGB over the last axis (may produce out-of-gamut negatives)."""
    return np.asarray(xyz, dtype=np.float64) @ XYZ_TO_RGB.T


def srgb_encode(linear) -> np.ndarray:
    """Linear [0,1] -> gamma-encoded sRGB [0,1]."""
    x = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    lo = x * 12.92
    hi = 1.055 * np.power(x, 1.0 / 2.4, where=x > 0, out=np.zeros_like(x)) - 0.055
    return np.where(x <= 0.0031308, lo, hi)


def luma709(rgb) -> np.ndarray:
    """Rec. 709 luma over the last axis of an RGB image."""
    r = np.asarray(rgb, dtype=np.float64)
    return r[..., 0] * 0.2126 + r[..., 1] * 0.7152 + r[..., 2] * 0.0722
