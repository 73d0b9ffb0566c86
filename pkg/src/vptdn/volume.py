"""Volume data model, transfer functions, and medium property sampling.

A VolumeGrid is a normalized scalar field on a regular lattice; a
TransferFunction maps normalized scalars to optical properties (albedo,
extinction through opacity x density_scale, emission). Both are immutable
after construction and shared read-only by the renderer and the tests.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class VolumeError(ValueError):
    """Raised for malformed volume files or invalid construction arguments."""


@dataclass(frozen=True)
class VolumeMeta:
    """Sidecar metadata for a headerless raw volume (x-fastest voxel order)."""

    dims: tuple[int, int, int]
    bps: int = 8
    endianness: str = "little"
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    @staticmethod
    def from_json(path: str | Path) -> "VolumeMeta":
        doc = json.loads(Path(path).read_text())
        return VolumeMeta(
            dims=tuple(int(v) for v in doc["dims"]),
            bps=int(doc.get("bps", 8)),
            endianness=str(doc.get("endianness", "little")),
            spacing=tuple(float(v) for v in doc.get("spacing", (1.0, 1.0, 1.0))),
        )


@dataclass(frozen=True)
class VolumeGrid:
    """Scalar field in [0,1] with world placement derived from dims x spacing.

    data is flat float32 in x-fastest order: index = x + nx*(y + ny*z).
    Voxel (x,y,z) has its sample point at ((x+.5)*sx, (y+.5)*sy, (z+.5)*sz);
    the world bounds run from the origin to dims*spacing.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    data: np.ndarray

    def __post_init__(self):
        nx, ny, nz = self.dims
        if nx <= 0 or ny <= 0 or nz <= 0:
            raise VolumeError(f"dims must be positive, got {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise VolumeError(f"spacing must be positive, got {self.spacing}")
        d = np.ascontiguousarray(self.data, dtype=np.float32).ravel()
        if d.size != nx * ny * nz:
            raise VolumeError(
                f"data length {d.size} does not match dims product {nx * ny * nz}"
            )
        if d.size and (d.min() < 0.0 or d.max() > 1.0):
            raise VolumeError("volume scalars must lie in [0, 1]")
        object.__setattr__(self, "data", d)
        d.flags.writeable = False

    @property
    def world_max(self) -> tuple[float, float, float]:
        return (
            self.dims[0] * self.spacing[0],
            self.dims[1] * self.spacing[1],
            self.dims[2] * self.spacing[2],
        )

    def max_scalar(self) -> float:
        return float(self.data.max()) if self.data.size else 0.0

    def voxel(self, x: int, y: int, z: int) -> float:
        nx, ny, _ = self.dims
        return float(self.data[x + nx * (y + ny * z)])


@dataclass(frozen=True)
class MediumProperties:
    """Optical properties at a point: extinction, per-channel albedo, emission."""

    mu_t: float
    albedo: np.ndarray
    emission: np.ndarray


@dataclass(frozen=True)
class TransferFunction:
    """Piecewise-linear map from normalized scalar to medium properties.

    Control points are (position, albedo[3], opacity, emission[3]) with
    strictly increasing positions covering [0, 1]. Extinction at a scalar s
    is opacity(s) * density_scale.
    """

    positions: np.ndarray  # (n,)
    albedo: np.ndarray  # (n, 3) in [0,1]
    opacity: np.ndarray  # (n,) in [0,1]
    emission: np.ndarray  # (n, 3) >= 0
    density_scale: float = 1.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).ravel()
        alb = np.asarray(self.albedo, dtype=np.float64).reshape(-1, 3)
        opa = np.asarray(self.opacity, dtype=np.float64).ravel()
        emi = np.asarray(self.emission, dtype=np.float64).reshape(-1, 3)
        n = pos.size
        if n < 2 or alb.shape[0] != n or opa.size != n or emi.shape[0] != n:
            raise VolumeError("transfer function needs >= 2 matched control points")
        if pos[0] != 0.0 or pos[-1] != 1.0 or np.any(np.diff(pos) <= 0):
            raise VolumeError(
                "control point positions must be strictly increasing from 0 to 1"
            )
        if np.any(opa < 0) or np.any(opa > 1) or np.any(alb < 0) or np.any(alb > 1):
            raise VolumeError("opacity and albedo must lie in [0, 1]")
        if np.any(emi < 0) or self.density_scale <= 0:
            raise VolumeError("emission must be >= 0 and density_scale > 0")
        for name, arr in (("positions", pos), ("albedo", alb),
                          ("opacity", opa), ("emission", emi)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @staticmethod
    def from_points(points, density_scale: float = 1.0) -> "TransferFunction":
        """Build from an iterable of (position, albedo3, opacity, emission3)."""
        pos, alb, opa, emi = [], [], [], []
        for p in points:
            pos.append(p[0]); alb.append(p[1]); opa.append(p[2]); emi.append(p[3])
        return TransferFunction(np.array(pos), np.array(alb), np.array(opa),
                                np.array(emi), density_scale)

    @staticmethod
    def from_json(doc_or_path) -> "TransferFunction":
        if isinstance(doc_or_path, (str, Path)):
            doc = json.loads(Path(doc_or_path).read_text())
        else:
            doc = doc_or_path
        pts = [(p["x"], p["albedo"], p["opacity"], p.get("emission", (0.0, 0.0, 0.0)))
               for p in doc["points"]]
        return TransferFunction.from_points(pts, float(doc.get("density_scale", 1.0)))

    def to_json(self) -> dict:
        return {
            "density_scale": self.density_scale,
            "points": [
                {"x": float(self.positions[i]),
                 "albedo": [float(v) for v in self.albedo[i]],
                 "opacity": float(self.opacity[i]),
                 "emission": [float(v) for v in self.emission[i]]}
                for i in range(self.positions.size)
            ],
        }


def load_raw_volume(path: str | Path, meta: VolumeMeta) -> VolumeGrid:
    """Load a headerless raw volume, normalizing scalars by the type maximum."""
    if meta.bps not in (8, 16):
        raise VolumeError(f"unsupported bits per sample: {meta.bps} (expected 8 or 16)")
    nx, ny, nz = meta.dims
    nvox = nx * ny * nz
    nbytes_expected = nvox * (meta.bps // 8)
    raw = Path(path).read_bytes()
    if len(raw) != nbytes_expected:
        raise VolumeError(
            f"size mismatch for {path}: expected {nbytes_expected} bytes "
            f"({nvox} voxels x {meta.bps // 8} B), got {len(raw)}"
        )
    if meta.bps == 8:
        samples = np.frombuffer(raw, dtype=np.uint8)
        peak = 255.0
    else:
        dt = np.dtype(np.uint16).newbyteorder("<" if meta.endianness == "little" else ">")
        samples = np.frombuffer(raw, dtype=dt)
        peak = 65535.0
    data = samples.astype(np.float32) / np.float32(peak)
    return VolumeGrid(dims=meta.dims, spacing=meta.spacing, data=data)


def make_procedural_volume(kind: str, dims, params: dict | None = None) -> VolumeGrid:
    """Generate a deterministic test volume: constant, sphere, shell, or fbm-noise."""
    params = dict(params or {})
    nx, ny, nz = (int(d) for d in dims)
    if nx <= 0 or ny <= 0 or nz <= 0:
        raise VolumeError(f"dims must be positive, got {dims}")
    spacing = tuple(float(s) for s in params.pop("spacing", (1.0 / nx, 1.0 / ny, 1.0 / nz)))

    x = (np.arange(nx) + 0.5) / nx
    y = (np.arange(ny) + 0.5) / ny
    z = (np.arange(nz) + 0.5) / nz
    # normalized coordinates in [0,1), broadcast to (nz, ny, nx) then flattened
    zz, yy, xx = np.meshgrid(z, y, x, indexing="ij")

    if kind == "constant":
        value = float(params.pop("value", 1.0))
        if not 0.0 <= value <= 1.0:
            raise VolumeError(f"constant value must be in [0,1], got {value}")
        data = np.full(nx * ny * nz, value, dtype=np.float32)
    elif kind in ("sphere", "shell"):
        radius = float(params.pop("radius", 0.4))
        center = params.pop("center", (0.5, 0.5, 0.5))
        r = np.sqrt((xx - center[0]) ** 2 + (yy - center[1]) ** 2 + (zz - center[2]) ** 2)
        if kind == "sphere":
            data = (r <= radius).astype(np.float32).ravel()
        else:
            thickness = float(params.pop("thickness", 0.1))
            inner = max(radius - thickness, 0.0)
            data = ((r <= radius) & (r >= inner)).astype(np.float32).ravel()
    elif kind == "fbm-noise":
        seed = int(params.pop("seed", 0))
        octaves = int(params.pop("octaves", 4))
        base_res = int(params.pop("base_res", 4))
        rng = np.random.default_rng(seed)
        acc = np.zeros((nz, ny, nx), dtype=np.float64)
        amp, total = 1.0, 0.0
        for o in range(octaves):
            res = base_res * (2 ** o)
            lattice = rng.random((res + 1, res + 1, res + 1))
            acc += amp * _trilerp_lattice(lattice, zz * res, yy * res, xx * res)
            total += amp
            amp *= 0.5
        data = (acc / total).astype(np.float32).ravel()
        np.clip(data, 0.0, 1.0, out=data)
    else:
        raise VolumeError(f"unknown procedural volume kind: {kind!r}")
    if params:
        raise VolumeError(f"unrecognized params for kind {kind!r}: {sorted(params)}")
    return VolumeGrid(dims=(nx, ny, nz), spacing=spacing, data=data)


def _trilerp_lattice(lattice: np.ndarray, z, y, x) -> np.ndarray:
    """Trilinearly interpolate a (R+1)^3 lattice at fractional coordinates."""
    r = lattice.shape[0] - 1
    iz = np.minimum(z.astype(np.int64), r - 1); fz = z - iz
    iy = np.minimum(y.astype(np.int64), r - 1); fy = y - iy
    ix = np.minimum(x.astype(np.int64), r - 1); fx = x - ix
    c = lattice
    c00 = c[iz, iy, ix] * (1 - fx) + c[iz, iy, ix + 1] * fx
    c10 = c[iz, iy + 1, ix] * (1 - fx) + c[iz, iy + 1, ix + 1] * fx
    c01 = c[iz + 1, iy, ix] * (1 - fx) + c[iz + 1, iy, ix + 1] * fx
    c11 = c[iz + 1, iy + 1, ix] * (1 - fx) + c[iz + 1, iy + 1, ix + 1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return c0 * (1 - fz) + c1 * fz


def sample_scalar(grid: VolumeGrid, point) -> float:
    """Trilinear scalar lookup at a world position; 0 outside the bounds."""
    p = np.asarray(point, dtype=np.float64)
    wx, wy, wz = grid.world_max
    if (p[0] < 0 or p[1] < 0 or p[2] < 0 or p[0] > wx or p[1] > wy or p[2] > wz):
        return 0.0
    return _sample_scalar_inside(grid, p)


def _sample_scalar_inside(grid: VolumeGrid, p) -> float:
    nx, ny, nz = grid.dims
    sx, sy, sz = grid.spacing
    # continuous voxel coordinates relative to voxel centers
    vx = p[0] / sx - 0.5
    vy = p[1] / sy - 0.5
    vz = p[2] / sz - 0.5
    ix = int(np.clip(np.floor(vx), 0, max(nx - 2, 0)))
    iy = int(np.clip(np.floor(vy), 0, max(ny - 2, 0)))
    iz = int(np.clip(np.floor(vz), 0, max(nz - 2, 0)))
    fx = min(max(vx - ix, 0.0), 1.0) if nx > 1 else 0.0
    fy = min(max(vy - iy, 0.0), 1.0) if ny > 1 else 0.0
    fz = min(max(vz - iz, 0.0), 1.0) if nz > 1 else 0.0
    d = grid.data
    jx = min(ix + 1, nx - 1); jy = min(iy + 1, ny - 1); jz = min(iz + 1, nz - 1)

    def at(x, y, z):
        return float(d[x + nx * (y + ny * z)])

    c00 = at(ix, iy, iz) * (1 - fx) + at(jx, iy, iz) * fx
    c10 = at(ix, jy, iz) * (1 - fx) + at(jx, jy, iz) * fx
    c01 = at(ix, iy, jz) * (1 - fx) + at(jx, iy, jz) * fx
    c11 = at(ix, jy, jz) * (1 - fx) + at(jx, jy, jz) * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return c0 * (1 - fz) + c1 * fz


def evaluate_medium(tf: TransferFunction, scalar: float) -> MediumProperties:
    """Interpolate control points at a scalar in [0,1]; mu_t = opacity * scale."""
    s = float(scalar)
    pos = tf.positions
    i = int(np.searchsorted(pos, s, side="right")) - 1
    i = min(max(i, 0), pos.size - 2)
    t = (s - pos[i]) / (pos[i + 1] - pos[i])
    t = min(max(t, 0.0), 1.0)
    opa = tf.opacity[i] * (1 - t) + tf.opacity[i + 1] * t
    alb = tf.albedo[i] * (1 - t) + tf.albedo[i + 1] * t
    emi = tf.emission[i] * (1 - t) + tf.emission[i + 1] * t
    return MediumProperties(mu_t=float(opa * tf.density_scale), albedo=alb, emission=emi)


def max_extinction(grid: VolumeGrid, tf: TransferFunction) -> float:
    """Conservative extinction majorant over all scalars reachable by sampling.

    Trilinear interpolation never exceeds the maximum stored voxel value, so
    maximizing the (piecewise-linear) opacity over [0, max voxel scalar]
    bounds mu_t everywhere.
    """
    smax = grid.max_scalar()
    candidates = [float(o) for p, o in zip(tf.positions, tf.opacity) if p <= smax]
    edge = evaluate_medium(tf, smax)
    peak_opacity = max(candidates + [edge.mu_t / tf.density_scale])
    return float(peak_opacity * tf.density_scale)
