"""Per-pixel linear-model denoiser with weighted recursive least squares.

Each pixel carries a temporally accumulated feature, three per-channel
coefficient vectors over the predictor [1, feature], and one shared 4x4
inverse-covariance matrix. Models are reprojected between frames along
per-pixel velocities, updated with a reliability weight that suppresses
high-variance estimates, and finished with a 5x5 bilateral blend of
cross-predictions.

The regression predictor for a frame is the neighborhood-clamped reprojected
history (before the current estimate is blended in); the stored history then
absorbs the current estimate for the next frame. Predictions are a-priori:
the current predictor evaluated through the coefficients from before this
frame's update, whose residual is exactly the quantity the update consumes.
Together these keep single-frame outliers out of the displayed prediction;
the reliability weight keeps them out of the model.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .pfm import write_pfm
from .tracer import FrameEstimate, MotionField

_state_versions = itertools.count(1)


@dataclass
class DenoiserParams:
    lam: float = 0.998  # forgetting factor
    h: float = 0.75  # weight bandwidth
    alpha: float = 0.75  # history blend
    eps: float = 1e-4  # division guard
    p0: float = 100.0  # initial inverse-covariance scale
    sigma_s: float = 1.5  # spatial kernel, pixels
    sigma_r: float = 0.3  # range kernel, relative feature distance

    def validate(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"lam must be in (0,1], got {self.lam}")
        if self.h <= 0 or self.eps <= 0 or self.p0 <= 0:
            raise ValueError("h, eps, p0 must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0,1], got {self.alpha}")
        if self.sigma_s <= 0 or self.sigma_r <= 0:
            raise ValueError("sigma_s, sigma_r must be positive")
        return self


class DenoiserState:
    """Double-buffered per-pixel model state for one image size."""

    def __init__(self, width: int, height: int, params: DenoiserParams | None = None):
        self.width = int(width)
        self.height = int(height)
        self.params = (params or DenoiserParams()).validate()
        h, w = self.height, self.width
        self.z = np.zeros((h, w, 3))  # stored history (Eq.-12 blend)
        self.beta = np.zeros((h, w, 3, 4))
        self.P = np.zeros((h, w, 4, 4))
        self.valid = np.zeros((h, w), dtype=bool)
        self.fresh = np.ones((h, w), dtype=bool)
        self.psi = np.zeros((h, w, 3))  # predictor feature of the current frame
        self.weights = np.ones((h, w))
        self.pred = np.zeros((h, w, 3))  # raw temporal predictions
        self.frame_count = 0
        self.resets = 0
        self.nonfinite = 0
        self.denoise_ms = 0.0
        self.version = next(_state_versions)
        # shadow buffers so per-frame reprojection never allocates
        self._z2 = np.empty_like(self.z)
        self._beta2 = np.empty_like(self.beta)
        self._P2 = np.empty_like(self.P)
        self._valid2 = np.empty_like(self.valid)
        _init_pixels(self, np.ones((h, w), dtype=bool), np.zeros((h, w, 3)))


def _init_pixels(state: DenoiserState, mask: np.ndarray, values: np.ndarray):
    """Reset masked pixels: identity-on-feature model, P0 prior, z = value."""
    p0 = state.params.p0
    state.z[mask] = values[mask]
    state.beta[mask] = 0.0
    for c in range(3):
        state.beta[mask, c, 1 + c] = 1.0
    state.P[mask] = np.eye(4) * p0
    state.valid[mask] = False


def reproject_state(state: DenoiserState, motion: MotionField, frame: FrameEstimate):
    """Pull (z, beta, P) along per-pixel velocities; reset uncovered pixels.

    The fetch is nearest-pixel. Pixels with invalid motion, whose source
    rounds out of bounds, or whose fetched model went non-finite restart
    from the current estimate.
    """
    h, w = state.height, state.width
    if motion.v.shape[:2] != (h, w) or frame.radiance.shape[:2] != (h, w):
        raise ValueError("state, motion, and frame dims must match")
    fresh = np.empty((h, w), dtype=bool)
    bad_rows = np.zeros(h, dtype=np.int64)
    K.reproject_kernel(state.z, state.beta, state.P, state.valid,
                       motion.v, motion.valid, frame.radiance,
                       state.frame_count == 0, state.params.p0,
                       state._z2, state._beta2, state._P2, state._valid2,
                       fresh, bad_rows)
    state.z, state._z2 = state._z2, state.z
    state.beta, state._beta2 = state._beta2, state.beta
    state.P, state._P2 = state._P2, state.P
    state.valid, state._valid2 = state._valid2, state.valid
    state.fresh = fresh
    state.resets += int(fresh.sum())
    state.nonfinite += int(bad_rows.sum())
    return state


def update_temporal_feature(state: DenoiserState, frame: FrameEstimate) -> np.ndarray:
    """Clamp the reprojected history to the current 3x3 box and blend.

    Sets state.psi (the clamped history feeding this frame's regression) and
    state.z (the stored exponentially weighted history). Returns state.z.
    """
    K.feature_clamp_kernel(state.z, frame.radiance, state.fresh,
                           state.params.alpha, state.psi, state._z2)
    state.z, state._z2 = state._z2, state.z
    return state.z


def compute_sample_weight(value, feature, h: float, eps: float):
    """Reliability weight w = exp(-d^2/h^2) with relative feature distance d.

    Works per pixel (3-vectors) or over whole images (..., 3).
    """
    v = np.asarray(value, dtype=np.float64)
    f = np.asarray(feature, dtype=np.float64)
    dist = np.linalg.norm(v - f, axis=-1)
    ref = np.minimum(np.linalg.norm(v, axis=-1), np.linalg.norm(f, axis=-1)) + eps
    d = dist / ref
    with np.errstate(under="ignore"):
        w = np.exp(-(d * d) / (h * h))
    return w


def rls_step(P, beta, p, y, w, lam: float):
    """One weighted RLS update; broadcasts over leading axes.

    P (..., d, d), beta (..., c, d), p (..., d), y (..., c), w (...).
    Returns (P', beta'). With w = 1 this is exactly the unweighted update.
    """
    P = np.asarray(P, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    Pp = np.einsum("...ij,...j->...i", P, p)
    quad = np.einsum("...i,...i->...", p, Pp)
    with np.errstate(over="ignore", divide="ignore"):
        denom = lam / w + quad
    gain = Pp / denom[..., None]
    resid = y - np.einsum("...cd,...d->...c", beta, p)
    beta_new = beta + gain[..., None, :] * resid[..., :, None]
    P_new = (P - gain[..., :, None] * Pp[..., None, :]) / lam
    P_new = 0.5 * (P_new + np.swapaxes(P_new, -1, -2))
    return P_new, beta_new


def wrls_update_pixel(P, beta, feature, value, w: float, lam: float):
    """Single-pixel update; returns (P', beta', a-priori prediction p . beta)."""
    p = np.concatenate([[1.0], np.asarray(feature, dtype=np.float64)])
    pred = np.asarray(beta, dtype=np.float64) @ p
    P_new, beta_new = rls_step(P, beta, p, value, w, lam)
    return P_new, beta_new, pred


def wrls_update(state: DenoiserState, frame: FrameEstimate) -> np.ndarray:
    """Weighted RLS update of every pixel; fills state.pred with the a-priori
    prediction p . beta(t-1) whose residual drove the update. Returns weights."""
    f = frame.radiance.astype(np.float64)
    w = compute_sample_weight(f, state.psi, state.params.h, state.params.eps)
    w = np.maximum(w, 1e-300)  # keep w in (0,1] after exp underflow
    bad_rows = np.zeros(state.height, dtype=np.int64)
    K.wrls_update_kernel(state.P, state.beta, state.psi, f, w,
                         state.params.lam, state.pred, bad_rows)
    n_bad = int(bad_rows.sum())
    if n_bad:
        bad = state.P[..., 0, 0] < 0.0
        _init_pixels(state, bad, f)
        state.psi[bad] = f[bad]
        state.pred[bad] = f[bad]
        state.nonfinite += n_bad
        state.resets += n_bad
    state.weights = w
    state.valid[:] = True
    return w


def temporal_predict(state: DenoiserState) -> np.ndarray:
    """Per-pixel model predictions, negatives clamped for output only."""
    return np.maximum(state.pred, 0.0)




def spatial_filter(state: DenoiserState) -> np.ndarray:
    """5x5 bilateral blend of neighbor-model cross-predictions at each pixel.

    Runs on the models as they stand (before this frame's update when called
    from denoise_frame, so the center term equals the temporal prediction).
    """
    out = np.empty((state.height, state.width, 3))
    with np.errstate(under="ignore"):
        K.spatial_blend_kernel(state.psi, state.beta, state.params.sigma_s,
                               state.params.sigma_r, state.params.eps, out)
    return out


def denoise_frame(state: DenoiserState, frame: FrameEstimate,
                  motion: MotionField):
    """Full per-frame pipeline; returns (final image, state).

    reproject -> feature update -> spatial blend of model predictions ->
    weighted per-pixel model update for the next frame. Predictions are the
    a-priori kind (current predictor through the pre-update coefficients).
    Deterministic for fixed inputs.
    """
    t0 = time.perf_counter()
    reproject_state(state, motion, frame)
    update_temporal_feature(state, frame)
    out = np.maximum(spatial_filter(state), 0.0)
    wrls_update(state, frame)
    state.frame_count += 1
    state.denoise_ms = (time.perf_counter() - t0) * 1e3
    return out.astype(np.float32), state


def write_debug_buffers(state: DenoiserState, directory: str | Path):
    """Dump feature, weights, and per-channel coefficient planes as PFM."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_pfm(d / "feature_z.pfm", state.z.astype(np.float32))
    write_pfm(d / "feature_psi.pfm", state.psi.astype(np.float32))
    write_pfm(d / "weights.pfm", state.weights.astype(np.float32))
    write_pfm(d / "prediction.pfm", state.pred.astype(np.float32))
    for c, name in enumerate("xyz"):
        for k in range(4):
            write_pfm(d / f"beta_{name}{k}.pfm", state.beta[..., c, k].astype(np.float32))
