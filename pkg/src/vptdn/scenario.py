"""Declarative keyframed scenarios and end-to-end evaluation runs.

A scenario is a JSON document: a volume (procedural or raw file), image and
sampling settings, and per-frame linear-interpolated tracks for the camera,
each light, and the transfer function. Runs are deterministic: frame t is
rendered with a seed derived from (scenario seed, t) inside the renderer.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .color import rgb_to_xyz
from .denoiser import DenoiserParams, DenoiserState, denoise_frame
from .metrics import MetricReport, flicker_score, psnr, ssim, tone_map
from .pfm import read_pfm, read_pgm, write_pfm, write_pgm
from .scene import AreaLight, Camera, Environment, LightSet, PointLight, Scene
from .tracer import FrameEstimate, MotionField, compute_motion_field, render_frame
from .volume import TransferFunction, VolumeGrid, VolumeMeta, load_raw_volume, \
    make_procedural_volume


class ScenarioError(ValueError):
    """Raised for malformed scenario documents, with field context."""


@dataclass(frozen=True)
class VolumeSpec:
    kind: str | None = None  # procedural kind
    dims: tuple[int, int, int] | None = None
    params: dict | None = None
    raw: str | None = None  # raw file path
    meta: str | None = None  # sidecar JSON path

    def build(self, base_dir: Path | None = None) -> VolumeGrid:
        if self.raw is not None:
            base = base_dir or Path(".")
            meta = VolumeMeta.from_json(base / self.meta)
            return load_raw_volume(base / self.raw, meta)
        return make_procedural_volume(self.kind, self.dims, dict(self.params or {}))


@dataclass(frozen=True)
class Scenario:
    name: str
    volume: VolumeSpec
    frames: int
    width: int
    height: int
    spp: int
    seed: int
    reference_spp: int = 1024
    exposure: float = 1.0
    max_bounces: int = 4
    camera_keys: tuple = ()  # (frame, position3, target3, fov)
    light_tracks: tuple = ()  # (type, keys) with keys = ((frame, {params}), ...)
    tf_keys: tuple = ()  # (frame, density_scale, ((x, albedo3, opacity, emission3), ...))

    def content_hash(self) -> str:
        doc = json.dumps(scenario_to_json(self), sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()[:16]


def _t3(v):
    return tuple(float(x) for x in v)


def _check_keys(frames, key_frames, track: str):
    if not key_frames:
        raise ScenarioError(f"tracks.{track}: track needs at least one keyframe")
    for a, b in zip(key_frames[:-1], key_frames[1:]):
        if b <= a:
            raise ScenarioError(f"tracks.{track}: keyframes must be strictly increasing "
                                f"({a} then {b})")
    if key_frames[0] < 0 or key_frames[-1] >= frames:
        raise ScenarioError(f"tracks.{track}: keyframe {key_frames[-1] if key_frames[-1] >= frames else key_frames[0]} "
                            f"outside [0, {frames})")


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    """Parse and validate a scenario JSON document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"invalid JSON: {e}") from e
    known = {"name", "volume", "frames", "width", "height", "spp", "seed",
             "reference_spp", "exposure", "max_bounces", "tracks"}
    for k in doc:
        if k not in known:
            raise ScenarioError(f"unknown field: {k}")
    for req in ("volume", "frames", "width", "height", "spp", "seed", "tracks"):
        if req not in doc:
            raise ScenarioError(f"missing field: {req}")

    vol = doc["volume"]
    if "raw" in vol:
        vspec = VolumeSpec(raw=str(vol["raw"]), meta=str(vol.get("meta", "")))
        if not vspec.meta:
            raise ScenarioError("volume.meta: raw volumes need a metadata sidecar path")
    elif "kind" in vol:
        if "dims" not in vol:
            raise ScenarioError("volume.dims: missing")
        vspec = VolumeSpec(kind=str(vol["kind"]),
                           dims=tuple(int(d) for d in vol["dims"]),
                           params=dict(vol.get("params", {})))
    else:
        raise ScenarioError("volume: needs either 'kind' (procedural) or 'raw' (file)")

    frames = int(doc["frames"])
    if frames < 1:
        raise ScenarioError("frames: must be >= 1")

    tracks = doc["tracks"]
    cam_keys = []
    for i, k in enumerate(tracks.get("camera", [])):
        try:
            cam_keys.append((int(k["frame"]), _t3(k["position"]), _t3(k["target"]),
                             float(k["fov"])))
        except KeyError as e:
            raise ScenarioError(f"tracks.camera[{i}]: missing {e}") from e
    if not cam_keys:
        raise ScenarioError("tracks.camera: at least one keyframe required")
    _check_keys(frames, [k[0] for k in cam_keys], "camera")

    light_tracks = []
    for li, lt in enumerate(tracks.get("lights", [])):
        ltype = lt.get("type")
        if ltype not in ("point", "area", "env"):
            raise ScenarioError(f"tracks.lights[{li}].type: expected point|area|env, "
                                f"got {ltype!r}")
        keys = []
        fields_by_type = {"point": ("position", "intensity"),
                          "area": ("corner", "edge_u", "edge_v", "radiance"),
                          "env": ("radiance",)}
        for ki, k in enumerate(lt.get("keys", [])):
            entry = {"frame": int(k["frame"])}
            for f in fields_by_type[ltype]:
                if f not in k:
                    raise ScenarioError(f"tracks.lights[{li}].keys[{ki}]: missing {f}")
                entry[f] = _t3(k[f])
            keys.append(entry)
        if not keys:
            raise ScenarioError(f"tracks.lights[{li}]: needs at least one keyframe")
        _check_keys(frames, [k["frame"] for k in keys], f"lights[{li}]")
        light_tracks.append((ltype, tuple((k["frame"], {f: v for f, v in k.items() if f != "frame"})
                                          for k in keys)))

    tf_keys = []
    n_points = None
    for ti, k in enumerate(tracks.get("transfer_function", [])):
        pts = []
        for pi, p in enumerate(k.get("points", [])):
            try:
                pts.append((float(p["x"]), _t3(p["albedo"]), float(p["opacity"]),
                            _t3(p.get("emission", (0.0, 0.0, 0.0)))))
            except KeyError as e:
                raise ScenarioError(
                    f"tracks.transfer_function[{ti}].points[{pi}]: missing {e}") from e
        if n_points is None:
            n_points = len(pts)
        elif len(pts) != n_points:
            raise ScenarioError(f"tracks.transfer_function[{ti}]: control point count "
                                f"changed ({len(pts)} vs {n_points}); counts must match "
                                f"across keyframes")
        tf_keys.append((int(k["frame"]), float(k.get("density_scale", 1.0)), tuple(pts)))
    if not tf_keys:
        raise ScenarioError("tracks.transfer_function: at least one keyframe required")
    _check_keys(frames, [k[0] for k in tf_keys], "transfer_function")

    scen = Scenario(
        name=str(doc.get("name", name)),
        volume=vspec,
        frames=frames,
        width=int(doc["width"]),
        height=int(doc["height"]),
        spp=int(doc["spp"]),
        seed=int(doc["seed"]),
        reference_spp=int(doc.get("reference_spp", 1024)),
        exposure=float(doc.get("exposure", 1.0)),
        max_bounces=int(doc.get("max_bounces", 4)),
        camera_keys=tuple(cam_keys),
        light_tracks=tuple(light_tracks),
        tf_keys=tuple(tf_keys),
    )
    # interpolated transfer functions must stay valid at every frame
    for t in range(scen.frames):
        _tf_at(scen, t)
    return scen


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    return parse_scenario(p.read_text(), name=p.stem)


def scenario_to_json(s: Scenario) -> dict:
    vol = ({"raw": s.volume.raw, "meta": s.volume.meta} if s.volume.raw
           else {"kind": s.volume.kind, "dims": list(s.volume.dims),
                 "params": dict(s.volume.params or {})})
    return {
        "name": s.name,
        "volume": vol,
        "frames": s.frames,
        "width": s.width,
        "height": s.height,
        "spp": s.spp,
        "seed": s.seed,
        "reference_spp": s.reference_spp,
        "exposure": s.exposure,
        "max_bounces": s.max_bounces,
        "tracks": {
            "camera": [{"frame": f, "position": list(p), "target": list(t),
                        "fov": fov} for f, p, t, fov in s.camera_keys],
            "lights": [{"type": ltype,
                        "keys": [{"frame": f, **{k: list(v) for k, v in params.items()}}
                                 for f, params in keys]}
                       for ltype, keys in s.light_tracks],
            "transfer_function": [
                {"frame": f, "density_scale": ds,
                 "points": [{"x": x, "albedo": list(a), "opacity": o,
                             "emission": list(e)} for x, a, o, e in pts]}
                for f, ds, pts in s.tf_keys],
        },
    }


def _lerp_keys(keys, t: int, extract):
    """Piecewise-linear evaluation of a keyframe track at frame t."""
    if t <= keys[0][0]:
        return extract(keys[0]), extract(keys[0]), 0.0
    if t >= keys[-1][0]:
        return extract(keys[-1]), extract(keys[-1]), 0.0
    for a, b in zip(keys[:-1], keys[1:]):
        if a[0] <= t <= b[0]:
            u = (t - a[0]) / (b[0] - a[0])
            return extract(a), extract(b), u
    raise AssertionError("unreachable")


def _mix(a, b, u):
    if isinstance(a, tuple):
        return tuple(x * (1 - u) + y * u for x, y in zip(a, b))
    return a * (1 - u) + b * u


def _tf_at(s: Scenario, t: int) -> TransferFunction:
    (ka, kb, u) = _lerp_keys(s.tf_keys, t, lambda k: k)
    ds = _mix(ka[1], kb[1], u)
    pts = []
    for pa, pb in zip(ka[2], kb[2]):
        x = _mix(pa[0], pb[0], u)
        alb = _mix(pa[1], pb[1], u)
        opa = _mix(pa[2], pb[2], u)
        emi = _mix(pa[3], pb[3], u)
        pts.append((x, alb, opa, tuple(rgb_to_xyz(np.asarray(emi)))))
    return TransferFunction.from_points(pts, ds)


def scene_at_frame(s: Scenario, t: int, grid: VolumeGrid):
    """Interpolate all tracks at frame t; returns (Scene, Camera)."""
    if not 0 <= t < s.frames:
        raise ValueError(f"frame {t} outside [0, {s.frames})")
    ka, kb, u = _lerp_keys(s.camera_keys, t, lambda k: k)
    position = _mix(ka[1], kb[1], u)
    target = _mix(ka[2], kb[2], u)
    fov = _mix(ka[3], kb[3], u)
    camera = Camera.look_at(position, target, fov, s.width, s.height)

    points, areas, env = [], [], Environment()
    for ltype, keys in s.light_tracks:
        a, b, v = _lerp_keys(keys, t, lambda k: k[1])
        vals = {name: _mix(a[name], b[name], v) for name in a}
        if ltype == "point":
            points.append(PointLight(position=np.asarray(vals["position"]),
                                     intensity=rgb_to_xyz(np.asarray(vals["intensity"]))))
        elif ltype == "area":
            areas.append(AreaLight(corner=np.asarray(vals["corner"]),
                                   edge_u=np.asarray(vals["edge_u"]),
                                   edge_v=np.asarray(vals["edge_v"]),
                                   radiance=rgb_to_xyz(np.asarray(vals["radiance"]))))
        else:
            env = Environment(radiance=rgb_to_xyz(np.asarray(vals["radiance"])))
    lights = LightSet(point=tuple(points), area=tuple(areas), environment=env)
    return Scene(grid, _tf_at(s, t), lights), camera


@dataclass
class RunResult:
    scenario: Scenario
    mode: str
    frames: list  # (H, W, 3) float32 XYZ per frame
    report: MetricReport | None = None
    render_ms: list = field(default_factory=list)
    denoise_ms: list = field(default_factory=list)
    nonfinite: int = 0
    out_dir: Path | None = None


def _frame_path(d: Path, t: int) -> Path:
    return d / f"frame_{t:04d}.pfm"


def run_scenario(scenario: Scenario, mode: str, out_root: str | Path | None = None,
                 denoiser_params: DenoiserParams | None = None,
                 spp: int | None = None,
                 reference_dir: str | Path | None = None,
                 require_reference: bool = False,
                 base_dir: Path | None = None,
                 progress=None) -> RunResult:
    """Render a scenario in one of three modes, write outputs, compute metrics.

    noisy: per-frame renders at scenario spp, plus first-collision aux files.
    denoised: noisy renders threaded through the denoiser across frames.
    reference: renders at reference_spp (same code path, higher sampling).
    Metrics (vs the reference sequence on disk) are added when available.
    """
    if mode not in ("noisy", "denoised", "reference"):
        raise ValueError(f"unknown mode: {mode}")
    grid = scenario.volume.build(base_dir)
    eff_spp = spp if spp is not None else (
        scenario.reference_spp if mode == "reference" else scenario.spp)

    out_dir = None
    if out_root is not None:
        out_dir = Path(out_root) / scenario.name / mode
        out_dir.mkdir(parents=True, exist_ok=True)

    ref_dir = Path(reference_dir) if reference_dir else (
        Path(out_root) / scenario.name / "reference" if out_root else None)
    have_ref = (mode != "reference" and ref_dir is not None
                and _frame_path(ref_dir, 0).exists()
                and _frame_path(ref_dir, scenario.frames - 1).exists())
    if require_reference and mode != "reference" and not have_ref:
        raise FileNotFoundError(
            f"reference sequence not found under {ref_dir} "
            f"(expected {_frame_path(ref_dir, 0).name}..)")

    state = None
    if mode == "denoised":
        state = DenoiserState(scenario.width, scenario.height,
                              denoiser_params or DenoiserParams())
    prev_vp = None

    result = RunResult(scenario=scenario, mode=mode, frames=[], out_dir=out_dir)
    report = MetricReport() if have_ref else None
    noisy_tone, out_tone = [], []

    for t in range(scenario.frames):
        scene, camera = scene_at_frame(scenario, t, grid)
        est = render_frame(scene, camera, eff_spp, scenario.seed, t,
                           max_bounces=scenario.max_bounces)
        result.render_ms.append(est.render_ms)
        result.nonfinite += est.nonfinite

        if mode == "denoised":
            vp = camera.view_proj()
            motion = compute_motion_field(est, prev_vp if prev_vp is not None else vp, vp)
            prev_vp = vp
            image, state = denoise_frame(state, est, motion)
            result.denoise_ms.append(state.denoise_ms)
        else:
            image = est.radiance

        result.frames.append(image)
        if out_dir is not None:
            write_pfm(_frame_path(out_dir, t), image)
            if mode == "noisy":
                write_pfm(out_dir / f"first_{t:04d}.pfm", est.first_point)
                write_pgm(out_dir / f"firstmask_{t:04d}.pgm", est.first_valid)

        if report is not None:
            ref = read_pfm(_frame_path(ref_dir, t))
            tm_ref = tone_map(ref, scenario.exposure)
            tm_in = tone_map(est.radiance, scenario.exposure)
            noisy_tone.append(tm_in)
            if mode == "denoised":
                tm_out = tone_map(image, scenario.exposure)
                out_tone.append(tm_out)
                report.add(t, psnr(tm_in, tm_ref), psnr(tm_out, tm_ref),
                           ssim(tm_in, tm_ref), ssim(tm_out, tm_ref))
            else:
                report.add(t, psnr(tm_in, tm_ref), psnr(tm_in, tm_ref),
                           ssim(tm_in, tm_ref), ssim(tm_in, tm_ref))
        if progress is not None:
            progress(t, scenario.frames, mode)

    if report is not None and scenario.frames >= 2:
        report.flicker_input = flicker_score(noisy_tone)
        if out_tone:
            report.flicker_denoised = flicker_score(out_tone)
    if report is not None and out_dir is not None:
        report.write_csv(out_dir / "report.csv")
    result.report = report
    return result


def load_noisy_sequence(noisy_dir: str | Path, scenario: Scenario):
    """Reconstruct FrameEstimates from a noisy run's files (offline denoise)."""
    d = Path(noisy_dir)
    for t in range(scenario.frames):
        rad = read_pfm(_frame_path(d, t))
        first = read_pfm(d / f"first_{t:04d}.pfm")
        mask = read_pgm(d / f"firstmask_{t:04d}.pgm") > 0
        yield FrameEstimate(radiance=rad, first_point=first, first_valid=mask,
                            first_dist=np.zeros(mask.shape, dtype=np.float32),
                            frame=t, seed=scenario.seed)


def denoise_offline(scenario: Scenario, noisy_dir: str | Path,
                    out_dir: str | Path | None = None,
                    denoiser_params: DenoiserParams | None = None,
                    base_dir: Path | None = None) -> RunResult:
    """Replay the online denoiser over a stored noisy sequence."""
    grid = scenario.volume.build(base_dir)
    state = DenoiserState(scenario.width, scenario.height,
                          denoiser_params or DenoiserParams())
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    result = RunResult(scenario=scenario, mode="denoised", frames=[],
                       out_dir=out)
    prev_vp = None
    for t, est in enumerate(load_noisy_sequence(noisy_dir, scenario)):
        _, camera = scene_at_frame(scenario, t, grid)
        vp = camera.view_proj()
        motion = compute_motion_field(est, prev_vp if prev_vp is not None else vp, vp)
        prev_vp = vp
        image, state = denoise_frame(state, est, motion)
        result.denoise_ms.append(state.denoise_ms)
        result.frames.append(image)
        if out:
            write_pfm(_frame_path(out, t), image)
    return result


# ---------------------------------------------------------------------------
# built-in scenarios (procedural, deterministic)


def _orbit_camera_keys(frames: int, center, radius: float, height: float,
                       fov: float, n_keys: int = 13, arc: float = 3.5,
                       phase: float = 0.0):
    keys = []
    key_frames = [round(i * (frames - 1) / (n_keys - 1)) for i in range(n_keys)]
    for i, f in enumerate(key_frames):
        th = phase + arc * i / (n_keys - 1)
        pos = (center[0] + radius * math.cos(th), center[1] + height,
               center[2] + radius * math.sin(th))
        keys.append((f, pos, tuple(center), fov))
    return tuple(keys)


_SOFT_TF_POINTS = [
    {"x": 0.0, "albedo": [0.9, 0.88, 0.85], "opacity": 0.0, "emission": [0, 0, 0]},
    {"x": 0.3, "albedo": [0.9, 0.88, 0.85], "opacity": 0.0, "emission": [0, 0, 0]},
    {"x": 0.6, "albedo": [0.92, 0.9, 0.86], "opacity": 0.5, "emission": [0, 0, 0]},
    {"x": 1.0, "albedo": [0.95, 0.93, 0.9], "opacity": 0.85, "emission": [0, 0, 0]},
]


def _base_doc(name: str, frames: int, width: int, height: int, spp: int,
              seed: int, volume: dict, camera_keys, lights, tf_keys,
              exposure: float = 1.4, reference_spp: int = 1024,
              max_bounces: int = 3) -> dict:
    return {
        "name": name,
        "volume": volume,
        "frames": frames,
        "width": width,
        "height": height,
        "spp": spp,
        "seed": seed,
        "reference_spp": reference_spp,
        "exposure": exposure,
        "max_bounces": max_bounces,
        "tracks": {
            "camera": [{"frame": f, "position": list(p), "target": list(t), "fov": fov}
                       for f, p, t, fov in camera_keys],
            "lights": lights,
            "transfer_function": tf_keys,
        },
    }


def builtin_scenarios() -> dict[str, Scenario]:
    """Five generated scenarios covering the evaluation interaction types."""
    center = (0.5, 0.5, 0.5)
    sphere = {"kind": "sphere", "dims": [64, 64, 64], "params": {"radius": 0.33}}
    cloud = {"kind": "fbm-noise", "dims": [64, 64, 64],
             "params": {"seed": 11, "octaves": 4}}
    point_light = {"type": "point",
                   "keys": [{"frame": 0, "position": [2.3, 2.6, -1.2],
                             "intensity": [55, 53, 50]}]}
    dim_env = {"type": "env", "keys": [{"frame": 0, "radiance": [0.28, 0.3, 0.34]}]}
    tf_static = [{"frame": 0, "density_scale": 5.5, "points": _SOFT_TF_POINTS}]

    docs = {}

    docs["camera-orbit"] = _base_doc(
        "camera-orbit", 60, 256, 256, 2, 101, sphere,
        _orbit_camera_keys(60, center, 1.75, 0.5, 0.62),
        [point_light, dim_env], tf_static)

    area_keys = []
    for i, f in enumerate([0, 11, 23, 35, 47]):
        th = 0.4 + 4.4 * i / 4
        cx = center[0] + 1.25 * math.cos(th)
        cz = center[2] + 1.25 * math.sin(th)
        eu = (-0.5 * math.sin(th), 0.0, 0.5 * math.cos(th))
        area_keys.append({"frame": f,
                          "corner": [cx - eu[0] / 2, 1.35, cz - eu[2] / 2],
                          "edge_u": list(eu), "edge_v": [0.0, 0.5, 0.0],
                          "radiance": [38, 36, 33]})
    docs["light-orbit"] = _base_doc(
        "light-orbit", 48, 256, 256, 2, 202, sphere,
        ((0, (0.5 + 1.75 * math.cos(1.1), 1.0, 0.5 + 1.75 * math.sin(1.1)),
          center, 0.62),),
        [{"type": "area", "keys": area_keys}, dim_env], tf_static)

    tf_edit_keys = [
        {"frame": 0, "density_scale": 6.0, "points": [
            {"x": 0.0, "albedo": [0.9, 0.85, 0.8], "opacity": 0.0, "emission": [0, 0, 0]},
            {"x": 0.35, "albedo": [0.9, 0.85, 0.8], "opacity": 0.02, "emission": [0, 0, 0]},
            {"x": 0.65, "albedo": [0.92, 0.88, 0.82], "opacity": 0.3, "emission": [0, 0, 0]},
            {"x": 1.0, "albedo": [0.95, 0.9, 0.85], "opacity": 0.75, "emission": [0, 0, 0]}]},
        {"frame": 23, "density_scale": 7.0, "points": [
            {"x": 0.0, "albedo": [0.85, 0.88, 0.92], "opacity": 0.0, "emission": [0, 0, 0]},
            {"x": 0.35, "albedo": [0.85, 0.88, 0.92], "opacity": 0.22, "emission": [0, 0, 0]},
            {"x": 0.65, "albedo": [0.86, 0.9, 0.94], "opacity": 0.5, "emission": [0, 0, 0]},
            {"x": 1.0, "albedo": [0.88, 0.92, 0.96], "opacity": 0.85, "emission": [0, 0, 0]}]},
        {"frame": 47, "density_scale": 6.0, "points": [
            {"x": 0.0, "albedo": [0.9, 0.9, 0.9], "opacity": 0.0, "emission": [0, 0, 0]},
            {"x": 0.35, "albedo": [0.9, 0.9, 0.9], "opacity": 0.0, "emission": [0, 0, 0]},
            {"x": 0.65, "albedo": [0.92, 0.92, 0.92], "opacity": 0.08, "emission": [0, 0, 0]},
            {"x": 1.0, "albedo": [0.95, 0.95, 0.95], "opacity": 0.95, "emission": [0, 0, 0]}]},
    ]
    docs["tf-edit"] = _base_doc(
        "tf-edit", 48, 256, 256, 2, 303, cloud,
        ((0, (0.5 + 1.7 * math.cos(0.8), 1.05, 0.5 + 1.7 * math.sin(0.8)),
          center, 0.66),),
        [point_light, dim_env], tf_edit_keys)

    docs["static-flicker"] = _base_doc(
        "static-flicker", 64, 192, 192, 2, 404, sphere,
        ((0, (0.5 + 1.75 * math.cos(2.1), 0.95, 0.5 + 1.75 * math.sin(2.1)),
          center, 0.62),),
        [point_light, dim_env], tf_static)

    docs["spp-sweep"] = _base_doc(
        "spp-sweep", 16, 128, 128, 1, 505, sphere,
        ((0, (0.5 + 1.75 * math.cos(0.3), 1.0, 0.5 + 1.75 * math.sin(0.3)),
          center, 0.62),),
        [point_light, dim_env], tf_static, reference_spp=1024)

    return {name: parse_scenario(json.dumps(doc), name=name)
            for name, doc in docs.items()}
