"""Shared helpers for the test suite: cached sequence rendering and frame IO.

Expensive reference sequences are rendered once into .cache/acceptance,
keyed by the scenario content hash, and reused across runs (and by CI).
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from vptdn import _kernels
from vptdn.denoiser import DenoiserParams
from vptdn.pfm import read_pfm
from vptdn.scenario import Scenario, run_scenario

REPO_ROOT = Path(__file__).resolve().parents[1]
CACHE_ROOT = REPO_ROOT / ".cache" / "acceptance"


def cached_sequence(scenario: Scenario, mode: str, spp: int | None = None,
                    denoiser_params: DenoiserParams | None = None) -> Path:
    """Render (once) and return the directory holding frame_%04d.pfm files."""
    _kernels.set_threads()
    tag = mode if spp is None else f"{mode}-spp{spp}"
    base = CACHE_ROOT / f"{scenario.name}-{scenario.content_hash()}" / tag
    done = base / "done"
    frames_dir = base / scenario.name / mode
    if not done.exists():
        run_scenario(scenario, mode, out_root=base, spp=spp,
                     denoiser_params=denoiser_params)
        done.write_text("ok")
    return frames_dir


def load_sequence(frames_dir: Path, n: int) -> list[np.ndarray]:
    return [read_pfm(frames_dir / f"frame_{t:04d}.pfm") for t in range(n)]


def single_scatter_scene():
    """Scene + camera for the single-scatter oracle: a scattering sphere lit
    by one point light in a dark environment, camera framing the interior."""
    from vptdn.scene import Camera, Environment, LightSet, PointLight, Scene
    from vptdn.volume import TransferFunction, make_procedural_volume

    grid = make_procedural_volume("sphere", (48, 48, 48), {"radius": 0.35})
    tf = TransferFunction.from_points(
        [(0.0, (0.9, 0.9, 0.9), 0.0, (0, 0, 0)),
         (1.0, (0.9, 0.9, 0.9), 0.6, (0, 0, 0))], 6.0)
    lights = LightSet(point=(PointLight(position=(1.8, 2.0, -0.9),
                                        intensity=(30.0, 30.0, 30.0)),),
                      environment=Environment(radiance=(0.0, 0.0, 0.0)))
    camera = Camera.look_at((0.5, 0.5, -1.2), (0.5, 0.5, 0.5), 0.153, 16, 16)
    return Scene(grid, tf, lights), camera


GOLDEN_DIR = REPO_ROOT / "tests" / "golden"


def make_frame(img: np.ndarray, t: int = 0, seed: int = 0):
    """Wrap an array as a FrameEstimate with trivial aux buffers."""
    from vptdn.tracer import FrameEstimate

    h, w = img.shape[:2]
    return FrameEstimate(
        radiance=np.asarray(img, dtype=np.float32),
        first_point=np.zeros((h, w, 3), dtype=np.float32),
        first_valid=np.ones((h, w), dtype=bool),
        first_dist=np.zeros((h, w), dtype=np.float32),
        frame=t, seed=seed)


def zero_motion(h: int, w: int):
    from vptdn.tracer import MotionField

    return MotionField(v=np.zeros((h, w, 2), dtype=np.float32),
                       valid=np.ones((h, w), dtype=bool))
