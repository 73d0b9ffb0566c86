"""Monte Carlo volumetric path tracer.

Produces per-frame noisy HDR radiance estimates (CIE XYZ) together with the
per-pixel first-collision records the denoiser's reprojection needs. All
sampling decisions come from counter-based streams keyed on
(frame seed, pixel, sample, purpose), so frames are deterministic and
independent of worker count.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .rng import derive_seed
from .scene import Camera, LightSet, Scene
from .volume import (MediumProperties, TransferFunction, VolumeGrid,
                     evaluate_medium, sample_scalar)

SAMPLE_CHUNK = 32  # fixed so accumulation order never depends on spp or workers


class RngStream:
    """Mutable handle over one counter-based stream (for the sampling APIs)."""

    def __init__(self, seed: int, pixel: int = 0, sample: int = 0, purpose: int = 1):
        self.state = np.uint64(K._stream_init(
            np.uint64(seed), np.uint64(pixel), np.uint64(sample), np.uint64(purpose)))

    def uniform(self) -> float:
        self.state, u = K._next_u01(self.state)
        return float(u)


@dataclass(frozen=True)
class CollisionEvent:
    kind: str  # "real-collision" | "escaped"
    distance: float
    point: np.ndarray | None = None
    medium: MediumProperties | None = None


@dataclass
class FrameEstimate:
    """Noisy per-pixel radiance plus auxiliary first-collision buffers."""

    radiance: np.ndarray  # (H, W, 3) float32, XYZ
    first_point: np.ndarray  # (H, W, 3) float32, world space
    first_valid: np.ndarray  # (H, W) bool
    first_dist: np.ndarray  # (H, W) float32
    frame: int
    seed: int
    nonfinite: int = 0
    render_ms: float = 0.0


@dataclass
class MotionField:
    v: np.ndarray  # (H, W, 2) float32: (dx, dy) into the previous frame
    valid: np.ndarray  # (H, W) bool


def generate_camera_ray(camera: Camera, pixel, jitter):
    """Ray through `pixel` offset by jitter in [0,1)^2; unit direction."""
    px, py = pixel
    ju, jv = jitter
    if not (0 <= px < camera.width and 0 <= py < camera.height):
        raise ValueError(f"pixel {pixel} outside image")
    if not (0.0 <= ju < 1.0 and 0.0 <= jv < 1.0):
        raise ValueError("jitter must lie in [0,1)")
    ox, oy, oz, dx, dy, dz = K._camera_ray(
        camera.pack(), float(px), float(py), float(ju), float(jv))
    return np.array([ox, oy, oz]), np.array([dx, dy, dz])


def sample_free_path(origin, direction, tmax, grid: VolumeGrid, tf: TransferFunction,
                     mu_max: float, rng: RngStream) -> CollisionEvent:
    """Delta tracking along one segment; origin must lie inside the bounds."""
    sc = Scene(grid, tf, LightSet())
    vol, tfp, _, _ = sc.packs()
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    hit, t, s, state = K.sample_free_path_one(
        vol, tfp, float(mu_max), o[0], o[1], o[2], d[0], d[1], d[2],
        float(tmax), rng.state)
    rng.state = np.uint64(state)
    if not hit:
        return CollisionEvent(kind="escaped", distance=float(t))
    point = o + t * d
    return CollisionEvent(kind="real-collision", distance=float(t), point=point,
                          medium=evaluate_medium(tf, s))


def direct_light(point, scene: Scene, rng: RngStream) -> np.ndarray:
    """One next-event light estimate at a volume point (phase folded in)."""
    vol, tfp, lights, _ = scene.packs()
    y = np.asarray(point, dtype=np.float64)
    r, g, b, state = K.direct_light_one(
        vol, tfp, lights, scene.mu_max, y[0], y[1], y[2], rng.state)
    rng.state = np.uint64(state)
    return np.array([r, g, b])


def estimate_radiance(origin, direction, scene: Scene, seed: int,
                      pixel: int = 0, sample: int = 0, max_bounces: int = 4):
    """One radiance sample; returns (xyz, first CollisionEvent or None, chain).

    The chain is (positions, throughputs) for the recorded path vertices,
    starting at the ray origin with throughput one.
    """
    if max_bounces < 1:
        raise ValueError("max_bounces must be >= 1")
    vol, tfp, lights, env = scene.packs()
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    lr, lg, lb, fv, ft, fx, fy, fz, nv, rec_thr, rec_pos = K.trace_single(
        vol, tfp, lights, env, scene.mu_max,
        o[0], o[1], o[2], d[0], d[1], d[2],
        np.uint64(seed), np.uint64(pixel), np.uint64(sample), int(max_bounces))
    value = np.array([lr, lg, lb])
    event = None
    if fv:
        pt = np.array([fx, fy, fz])
        s = _scalar_at(scene, pt)
        event = CollisionEvent(kind="real-collision", distance=float(ft), point=pt,
                               medium=evaluate_medium(scene.tf, s))
    chain = (rec_pos[: nv + 1].copy(), rec_thr[: nv + 1].copy())
    return value, event, chain


def _scalar_at(scene: Scene, point) -> float:
    return sample_scalar(scene.grid, point)


def radiance_samples(scene: Scene, origin, direction, n: int, seed: int,
                     max_bounces: int = 4) -> np.ndarray:
    """n independent radiance samples of one ray (test statistics helper)."""
    vol, tfp, lights, env = scene.packs()
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    return K.trace_batch(vol, tfp, lights, env, scene.mu_max,
                         o[0], o[1], o[2], d[0], d[1], d[2],
                         np.uint64(seed), int(max_bounces), int(n))


def render_frame(scene: Scene, camera: Camera, spp: int, seed: int, t: int,
                 max_bounces: int = 4) -> FrameEstimate:
    """Render one frame: spp jittered samples per pixel through a separable
    Gaussian reconstruction filter, plus nearest first-collision records."""
    if spp < 1:
        raise ValueError("spp must be >= 1")
    import time

    t_start = time.perf_counter()
    w, h = camera.width, camera.height
    vol, tfp, lights, env = scene.packs()
    cam = camera.pack()
    frame_seed = derive_seed(seed, t)

    accum = np.zeros((h, w, 3), dtype=np.float64)
    wsum = np.zeros((h, w), dtype=np.float64)
    first_t = np.full((h, w), np.inf, dtype=np.float64)
    first_pt = np.zeros((h, w, 3), dtype=np.float64)
    first_valid = np.zeros((h, w), dtype=np.uint8)
    nonfinite = 0
    for s0 in range(0, spp, SAMPLE_CHUNK):
        s1 = min(spp, s0 + SAMPLE_CHUNK)
        rad = np.empty((h, w, s1 - s0, 3), dtype=np.float32)
        wx = np.empty((h, w, s1 - s0, 3), dtype=np.float32)
        wy = np.empty((h, w, s1 - s0, 3), dtype=np.float32)
        nf_rows = np.zeros(h, dtype=np.int64)
        K.render_chunk(vol, tfp, lights, env, scene.mu_max, cam, frame_seed,
                       s0, s1, int(max_bounces), rad, wx, wy, first_t, first_pt,
                       first_valid, nf_rows)
        K.gather_chunk(s0, s1, w, h, rad, wx, wy, accum, wsum)
        nonfinite += int(nf_rows.sum())

    radiance = (accum / wsum[..., None]).astype(np.float32)
    return FrameEstimate(
        radiance=radiance,
        first_point=first_pt.astype(np.float32),
        first_valid=first_valid.astype(bool),
        first_dist=np.where(np.isfinite(first_t), first_t, 0.0).astype(np.float32),
        frame=int(t),
        seed=int(seed),
        nonfinite=nonfinite,
        render_ms=(time.perf_counter() - t_start) * 1e3,
    )


def project_to_image(view_proj: np.ndarray, points: np.ndarray, width: int,
                     height: int):
    """Project world points to continuous pixel coordinates.

    Returns (coords (N,2), in_front (N,) bool); points behind the camera are
    flagged and their coordinates zeroed.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    hom = np.concatenate([p, np.ones((p.shape[0], 1))], axis=1)
    clip = hom @ np.asarray(view_proj, dtype=np.float64).T
    wcl = clip[:, 3]
    ok = wcl > 1e-9
    ndc = np.zeros((p.shape[0], 2))
    np.divide(clip[:, 0], wcl, out=ndc[:, 0], where=ok)
    np.divide(clip[:, 1], wcl, out=ndc[:, 1], where=ok)
    coords = np.zeros_like(ndc)
    coords[:, 0] = (ndc[:, 0] + 1.0) * 0.5 * width
    coords[:, 1] = (1.0 - ndc[:, 1]) * 0.5 * height
    coords[~ok] = 0.0
    return coords, ok


def compute_motion_field(frame: FrameEstimate, view_proj_prev: np.ndarray,
                         view_proj_cur: np.ndarray) -> MotionField:
    """Per-pixel velocity into the previous frame from first-collision points.

    v_j = project_prev(x_w) - project_cur(x_w), which is identically zero for
    an unchanged camera. Pixels without a collision, or whose collision falls
    behind the previous camera, are invalid with v = 0.
    """
    h, w = frame.first_valid.shape
    v = np.zeros((h, w, 2), dtype=np.float32)
    if np.array_equal(view_proj_prev, view_proj_cur):
        # static camera (light/transfer-function edits): keep all history
        return MotionField(v=v, valid=np.ones((h, w), dtype=bool))
    pts = frame.first_point.reshape(-1, 3).astype(np.float64)
    prev_xy, prev_ok = project_to_image(view_proj_prev, pts, w, h)
    cur_xy, cur_ok = project_to_image(view_proj_cur, pts, w, h)
    valid = frame.first_valid.reshape(-1) & prev_ok & cur_ok
    delta = np.where(valid[:, None], prev_xy - cur_xy, 0.0)
    return MotionField(v=delta.reshape(h, w, 2).astype(np.float32),
                       valid=valid.reshape(h, w))
