"""Cameras, lights, and the render-ready scene bundle.

Light energies are stored in the working colorspace (CIE XYZ); scenario
parsing converts linear-RGB authoring values on load. Transfer-function
albedo acts per working channel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .volume import TransferFunction, VolumeGrid, max_extinction


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero-length vector")
    return v / n


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with an orthonormal basis and vertical field of view."""

    position: np.ndarray
    right: np.ndarray
    up: np.ndarray
    forward: np.ndarray
    fov: float  # vertical, radians
    width: int
    height: int

    def __post_init__(self):
        for name in ("position", "right", "up", "forward"):
            a = np.asarray(getattr(self, name), dtype=np.float64).copy()
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        if not 0.0 < self.fov < np.pi:
            raise ValueError(f"fov must be in (0, pi), got {self.fov}")
        b = np.stack([self.right, self.up, self.forward])
        if not np.allclose(b @ b.T, np.eye(3), atol=1e-6):
            raise ValueError("camera basis is not orthonormal")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dims must be positive")

    @staticmethod
    def look_at(position, target, fov, width, height, up=(0.0, 1.0, 0.0)) -> "Camera":
        position = np.asarray(position, dtype=np.float64)
        forward = _unit(np.asarray(target, dtype=np.float64) - position)
        right = _unit(np.cross(forward, np.asarray(up, dtype=np.float64)))
        true_up = np.cross(right, forward)
        return Camera(position, right, true_up, forward, float(fov), int(width), int(height))

    @property
    def tan_half_fov(self) -> float:
        return float(np.tan(self.fov / 2.0))

    def view_proj(self, near: float = 0.05, far: float = 100.0) -> np.ndarray:
        """GL-style view-projection matrix (camera looks down -z in view space)."""
        view = np.eye(4)
        view[0, :3] = self.right
        view[1, :3] = self.up
        view[2, :3] = -self.forward
        view[:3, 3] = -view[:3, :3] @ self.position
        t = self.tan_half_fov
        aspect = self.width / self.height
        proj = np.zeros((4, 4))
        proj[0, 0] = 1.0 / (t * aspect)
        proj[1, 1] = 1.0 / t
        proj[2, 2] = -(far + near) / (far - near)
        proj[2, 3] = -2.0 * far * near / (far - near)
        proj[3, 2] = -1.0
        return proj @ view

    def pack(self):
        return (
            self.position,
            self.right,
            self.up,
            self.forward,
            self.tan_half_fov,
            np.int64(self.width),
            np.int64(self.height),
        )


@dataclass(frozen=True)
class PointLight:
    position: np.ndarray
    intensity: np.ndarray  # XYZ, radiant intensity

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64)
        i = np.asarray(self.intensity, dtype=np.float64)
        if np.any(i < 0):
            raise ValueError("light intensity must be >= 0")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "intensity", i)


@dataclass(frozen=True)
class AreaLight:
    """Rectangular two-sided emitter: corner plus two edge vectors."""

    corner: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    radiance: np.ndarray  # XYZ

    def __post_init__(self):
        for name in ("corner", "edge_u", "edge_v", "radiance"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.linalg.norm(np.cross(self.edge_u, self.edge_v)) <= 0:
            raise ValueError("area light edges are degenerate")
        if np.any(self.radiance < 0):
            raise ValueError("light radiance must be >= 0")


@dataclass(frozen=True)
class Environment:
    """Constant background radiance, optionally replaced by a lat-long map."""

    radiance: np.ndarray = field(default_factory=lambda: np.zeros(3))
    map: np.ndarray | None = None  # (H, W, 3) float32, XYZ

    def __post_init__(self):
        object.__setattr__(self, "radiance", np.asarray(self.radiance, dtype=np.float64))
        if np.any(self.radiance < 0):
            raise ValueError("environment radiance must be >= 0")
        if self.map is not None:
            m = np.ascontiguousarray(self.map, dtype=np.float32)
            if m.ndim != 3 or m.shape[2] != 3 or not np.all(np.isfinite(m)):
                raise ValueError("environment map must be finite (H, W, 3)")
            object.__setattr__(self, "map", m)


@dataclass(frozen=True)
class LightSet:
    point: tuple[PointLight, ...] = ()
    area: tuple[AreaLight, ...] = ()
    environment: Environment = field(default_factory=Environment)

    def pack(self):
        n_pt = len(self.point)
        n_ar = len(self.area)
        pl_pos = np.zeros((n_pt, 3))
        pl_int = np.zeros((n_pt, 3))
        for i, pl in enumerate(self.point):
            pl_pos[i] = pl.position
            pl_int[i] = pl.intensity
        al_c = np.zeros((n_ar, 3))
        al_u = np.zeros((n_ar, 3))
        al_v = np.zeros((n_ar, 3))
        al_r = np.zeros((n_ar, 3))
        for i, al in enumerate(self.area):
            al_c[i] = al.corner
            al_u[i] = al.edge_u
            al_v[i] = al.edge_v
            al_r[i] = al.radiance
        return (pl_pos, pl_int, al_c, al_u, al_v, al_r)

    def pack_env(self):
        env = self.environment
        if env.map is not None:
            return (env.radiance, env.map, np.uint8(1))
        return (env.radiance, np.zeros((1, 1, 3), dtype=np.float32), np.uint8(0))


@dataclass(frozen=True)
class Scene:
    """Immutable render inputs plus cached kernel-ready packed arrays."""

    grid: VolumeGrid
    tf: TransferFunction
    lights: LightSet

    def __post_init__(self):
        object.__setattr__(self, "_mu_max", max_extinction(self.grid, self.tf))
        nx, ny, nz = self.grid.dims
        sx, sy, sz = self.grid.spacing
        wx, wy, wz = self.grid.world_max
        vol = (
            self.grid.data,
            np.int64(nx), np.int64(ny), np.int64(nz),
            np.float64(sx), np.float64(sy), np.float64(sz),
            np.float64(wx), np.float64(wy), np.float64(wz),
        )
        tfp = (
            self.tf.positions, self.tf.albedo, self.tf.opacity,
            self.tf.emission, np.float64(self.tf.density_scale),
        )
        object.__setattr__(self, "_packs", (vol, tfp, self.lights.pack(), self.lights.pack_env()))

    @property
    def mu_max(self) -> float:
        return self._mu_max

    def packs(self):
        """(vol, tf, lights, env) tuples in the layout _kernels expects."""
        return self._packs
