#!/usr/bin/env python3
"""Generate the single-scatter golden image by brute-force ray marching.

Independent of the renderer's sampling: camera rays are marched at a fixed
1e-3 step; at each quadrature point the direct-light leg is marched at the
same step. Field lookups use scipy's trilinear map_coordinates and the transfer
function is evaluated with np.interp. Writes tests/golden/single_scatter_oracle.pfm.

Run from the repository root:  python scripts/gen_single_scatter_golden.py
"""
import sys
import time
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

REPO = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "tests"))

from support import GOLDEN_DIR, single_scatter_scene  # noqa: E402

from vptdn.pfm import write_pfm  # noqa: E402
from vptdn.tracer import generate_camera_ray  # noqa: E402

STEP = 1e-3


def density_field(grid):
    nx, ny, nz = grid.dims
    data = grid.data.reshape(nz, ny, nx).transpose(2, 1, 0)  # index (x, y, z)

    def scalars(points):
        """Trilinear scalar lookups at world positions (N, 3); 0 outside."""
        p = np.asarray(points, dtype=np.float64)
        vox = p / np.asarray(grid.spacing) - 0.5
        inside = np.all((p >= 0) & (p <= np.asarray(grid.world_max)), axis=-1)
        vals = map_coordinates(data, vox.T, order=1, mode="nearest")
        return np.where(inside, vals, 0.0)

    return scalars


def mu_profile(tf, scalars):
    opacity = np.interp(scalars, tf.positions, tf.opacity)
    return opacity * tf.density_scale


def chord(origin, direction, lo, hi):
    """Entry/exit distances of a ray against the [lo, hi] box."""
    inv = np.where(np.abs(direction) > 1e-12, 1.0 / direction, np.inf)
    t0 = (lo - origin) * inv
    t1 = (hi - origin) * inv
    t_near = np.minimum(t0, t1).max()
    t_far = np.maximum(t0, t1).min()
    return max(t_near, 0.0), t_far


def main():
    scene, camera = single_scatter_scene()
    grid, tf = scene.grid, scene.tf
    light = scene.lights.point[0]
    sample = density_field(grid)
    lo = np.zeros(3)
    hi = np.asarray(grid.world_max)
    albedo = 0.9  # constant across the transfer function of this scene

    w, h = camera.width, camera.height
    out = np.zeros((h, w, 3), dtype=np.float64)
    t_start = time.time()
    for py in range(h):
        for px in range(w):
            o, d = generate_camera_ray(camera, (px, py), (0.5, 0.5))
            t0, t1 = chord(o, d, lo, hi)
            if t1 <= t0:
                continue
            n = int(np.ceil((t1 - t0) / STEP))
            ts = t0 + (np.arange(n) + 0.5) * (t1 - t0) / n
            dt = (t1 - t0) / n
            pts = o[None, :] + ts[:, None] * d[None, :]
            mu_t = mu_profile(tf, sample(pts))
            # transmittance from the camera to each midpoint
            od = np.cumsum(mu_t) * dt
            t_cam = np.exp(-(od - 0.5 * mu_t * dt))
            # direct-light leg, marched at the same step per quadrature point
            to_light = light.position[None, :] - pts
            dist = np.linalg.norm(to_light, axis=1)
            ldir = to_light / dist[:, None]
            t_shadow = np.empty(n)
            for i in range(n):
                s0, s1 = chord(pts[i], ldir[i], lo, hi)
                s1 = min(s1, dist[i])
                if s1 <= s0:
                    t_shadow[i] = 1.0
                    continue
                m = int(np.ceil((s1 - s0) / STEP))
                ss = s0 + (np.arange(m) + 0.5) * (s1 - s0) / m
                spts = pts[i][None, :] + ss[:, None] * ldir[i][None, :]
                t_shadow[i] = np.exp(-mu_profile(tf, sample(spts)).sum()
                                     * (s1 - s0) / m)
            contrib = (t_cam * mu_t * albedo * t_shadow / dist**2).sum() * dt
            out[py, px] = contrib * light.intensity / (4.0 * np.pi)
        print(f"row {py + 1}/{h} ({time.time() - t_start:.0f}s)", flush=True)

    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    write_pfm(GOLDEN_DIR / "single_scatter_oracle.pfm", out.astype(np.float32))
    print(f"wrote {GOLDEN_DIR / 'single_scatter_oracle.pfm'} "
          f"(mean {out.mean():.5f}, max {out.max():.5f})")


if __name__ == "__main__":
    main()
