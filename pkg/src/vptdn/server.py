"""Live session server: render -> denoise loop streaming frames to a browser.

One WebSocket session per connection at /session. Frames go out as binary
packets (magic "VPTF", frame id, dims, stage timings, RGBA8 rows top to
bottom); control arrives as JSON text messages and is applied atomically at
frame boundaries. The HTTP side serves the viewer's static assets.
"""
from __future__ import annotations

import asyncio
import json
import math
import os
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles

from .denoiser import DenoiserParams, DenoiserState, denoise_frame
from .metrics import error_map, tone_map
from .pfm import heatmap
from .scenario import Scenario, scene_at_frame
from .scene import Camera, Environment, LightSet, PointLight, Scene
from .tracer import compute_motion_field, render_frame
from .volume import TransferFunction, VolumeError

PACKET_MAGIC = b"VPTF"
PACKET_HEADER = struct.Struct("<4sIHHff")
DISPLAY_MODES = ("denoised", "noisy", "feature", "error-vs-none")
MAX_SPP = 64
MAX_DIM = 1024


def build_frame_packet(frame_id: int, width: int, height: int, render_ms: float,
                       denoise_ms: float, rgba: bytes) -> bytes:
    if len(rgba) != 4 * width * height:
        raise ValueError("payload length must be 4*width*height")
    return PACKET_HEADER.pack(PACKET_MAGIC, frame_id, width, height,
                              render_ms, denoise_ms) + rgba


def validate_control(msg: dict) -> str | None:
    """Returns an error string for malformed/out-of-range messages, else None."""
    if not isinstance(msg, dict) or "type" not in msg:
        return "message must be an object with a 'type' field"
    t = msg["type"]
    try:
        if t == "camera-orbit":
            for k in ("dtheta", "dphi", "dzoom"):
                v = float(msg.get(k, 0.0))
                if not math.isfinite(v) or abs(v) > 10.0:
                    return f"{k} out of range"
        elif t == "light-edit":
            idx = int(msg["index"])
            if idx < 0:
                return "index must be >= 0"
            pos = [float(v) for v in msg["position"]]
            inten = [float(v) for v in msg["intensity"]]
            if len(pos) != 3 or len(inten) != 3:
                return "position and intensity must be 3-vectors"
            if any(not math.isfinite(v) for v in pos + inten):
                return "non-finite light values"
            if any(v < 0 for v in inten):
                return "intensity must be >= 0"
        elif t == "tf-edit":
            pts = msg["points"]
            if not isinstance(pts, list) or len(pts) < 2:
                return "points must be a list of >= 2 control points"
            xs = [float(p["x"]) for p in pts]
            if xs[0] != 0.0 or xs[-1] != 1.0 or any(b <= a for a, b in zip(xs, xs[1:])):
                return "positions must increase strictly from 0 to 1"
            for p in pts:
                if not 0.0 <= float(p["opacity"]) <= 1.0:
                    return "opacity must lie in [0,1]"
                if any(not 0.0 <= float(a) <= 1.0 for a in p["albedo"]):
                    return "albedo must lie in [0,1]"
            ds = float(msg.get("density_scale", 1.0))
            if not (math.isfinite(ds) and 0.0 < ds <= 1e4):
                return "density_scale out of range"
        elif t == "set":
            if "spp" in msg and not 1 <= int(msg["spp"]) <= MAX_SPP:
                return f"spp must lie in [1, {MAX_SPP}]"
            if "denoiser" in msg and not isinstance(msg["denoiser"], bool):
                return "denoiser must be a boolean"
            if "display" in msg and msg["display"] not in DISPLAY_MODES:
                return f"display must be one of {DISPLAY_MODES}"
            if "dims" in msg:
                w, h = (int(v) for v in msg["dims"])
                if not (32 <= w <= MAX_DIM and 32 <= h <= MAX_DIM):
                    return f"dims must lie in [32, {MAX_DIM}]"
        else:
            return f"unknown message type: {t}"
    except (KeyError, TypeError, ValueError) as e:
        return f"malformed {t} message: {e}"
    return None


@dataclass
class SessionState:
    """Mutable scene + denoiser state for one live session."""

    scenario: Scenario
    width: int
    height: int
    spp: int
    denoiser_params: DenoiserParams = field(default_factory=DenoiserParams)
    denoiser_on: bool = True
    display: str = "denoised"
    frame_counter: int = 0

    def __post_init__(self):
        self.grid = self.scenario.volume.build()
        scene, _ = scene_at_frame(self.scenario, 0, self.grid)
        self.tf = scene.tf
        self.point_lights = list(scene.lights.point)
        self.area_lights = list(scene.lights.area)
        self.environment = scene.lights.environment
        # keep the scenario's exact frame-0 pose so untouched-camera sessions
        # reproduce offline runs bit for bit
        ka = self.scenario.camera_keys[0]
        self.cam_position = tuple(ka[1])
        self.cam_target = tuple(ka[2])
        self.fov = float(ka[3])
        self.denoiser = DenoiserState(self.width, self.height, self.denoiser_params)
        self.prev_vp = None
        self.queue: list[dict] = []
        self.render_ms = 0.0
        self.denoise_ms = 0.0

    # -- control ----------------------------------------------------------
    def queue_control(self, msg: dict) -> str | None:
        err = validate_control(msg)
        if err is None:
            self.queue.append(msg)
        return err

    def apply_queued(self):
        pending, self.queue = self.queue, []
        for msg in pending:
            handle_control(self, msg)

    def camera(self) -> Camera:
        return Camera.look_at(self.cam_position, self.cam_target, self.fov,
                              self.width, self.height)

    def scene(self) -> Scene:
        lights = LightSet(point=tuple(self.point_lights),
                          area=tuple(self.area_lights),
                          environment=self.environment)
        return Scene(self.grid, self.tf, lights)

    # -- frame loop -------------------------------------------------------
    def render_next(self):
        """Apply queued edits, render/denoise one frame, return the packet."""
        self.apply_queued()
        camera = self.camera()
        scene = self.scene()
        est = render_frame(scene, camera, self.spp, self.scenario.seed,
                           self.frame_counter, max_bounces=self.scenario.max_bounces)
        self.render_ms = est.render_ms
        vp = camera.view_proj()
        prev = self.prev_vp if self.prev_vp is not None else vp
        denoised = None
        if self.denoiser_on:
            motion = compute_motion_field(est, prev, vp)
            denoised, self.denoiser = denoise_frame(self.denoiser, est, motion)
            self.denoise_ms = self.denoiser.denoise_ms
        else:
            self.denoise_ms = 0.0
        self.prev_vp = vp

        if self.display == "noisy" or denoised is None:
            shown = tone_map(est.radiance, self.scenario.exposure)
        elif self.display == "denoised":
            shown = tone_map(denoised, self.scenario.exposure)
        elif self.display == "feature":
            shown = tone_map(self.denoiser.z, self.scenario.exposure)
        else:  # error-vs-none
            shown = heatmap(error_map(denoised, est.radiance), peak=0.25)
        rgba = np.empty((self.height, self.width, 4), dtype=np.uint8)
        rgba[..., :3] = np.clip(np.rint(shown * 255.0), 0, 255).astype(np.uint8)
        rgba[..., 3] = 255
        packet = build_frame_packet(self.frame_counter, self.width, self.height,
                                    float(self.render_ms), float(self.denoise_ms),
                                    rgba.tobytes())
        self.frame_counter += 1
        return packet


def handle_control(session: SessionState, msg: dict) -> SessionState:
    """Apply one validated control message at a frame boundary.

    Light and transfer-function edits keep the denoiser models (they adapt);
    camera edits only change the matrices; a dims change is the single edit
    that reallocates and resets the denoiser state.
    """
    t = msg["type"]
    if t == "camera-orbit":
        tx, ty, tz = session.cam_target
        px, py, pz = session.cam_position
        dx, dy, dz = px - tx, py - ty, pz - tz
        dist = math.sqrt(dx * dx + dy * dy + dz * dz)
        theta = math.atan2(dz, dx)
        phi = math.asin(max(-1.0, min(1.0, dy / dist)))
        theta += float(msg.get("dtheta", 0.0))
        phi = max(-1.45, min(1.45, phi + float(msg.get("dphi", 0.0))))
        dist = max(0.2, min(20.0, dist * math.exp(float(msg.get("dzoom", 0.0)))))
        session.cam_position = (tx + dist * math.cos(phi) * math.cos(theta),
                                ty + dist * math.sin(phi),
                                tz + dist * math.cos(phi) * math.sin(theta))
    elif t == "light-edit":
        idx = int(msg["index"])
        if idx < len(session.point_lights):
            from .color import rgb_to_xyz

            session.point_lights[idx] = PointLight(
                position=np.asarray(msg["position"], dtype=np.float64),
                intensity=rgb_to_xyz(np.asarray(msg["intensity"], dtype=np.float64)))
    elif t == "tf-edit":
        pts = [(float(p["x"]), tuple(float(a) for a in p["albedo"]),
                float(p["opacity"]),
                tuple(float(e) for e in p.get("emission", (0, 0, 0))))
               for p in msg["points"]]
        from .color import rgb_to_xyz

        pts = [(x, a, o, tuple(rgb_to_xyz(np.asarray(e)))) for x, a, o, e in pts]
        try:
            session.tf = TransferFunction.from_points(
                pts, float(msg.get("density_scale", session.tf.density_scale)))
        except VolumeError:
            pass  # validated upstream; keep the old function on the off chance
    elif t == "set":
        if "spp" in msg:
            session.spp = int(msg["spp"])
        if "denoiser" in msg:
            session.denoiser_on = bool(msg["denoiser"])
        if "display" in msg:
            session.display = str(msg["display"])
        if "dims" in msg:
            w, h = (int(v) for v in msg["dims"])
            if (w, h) != (session.width, session.height):
                session.width, session.height = w, h
                session.denoiser = DenoiserState(w, h, session.denoiser_params)
                session.prev_vp = None
    return session


def frontend_dir() -> Path | None:
    env = os.environ.get("VPTDN_FRONTEND")
    if env:
        p = Path(env)
        return p if p.exists() else None
    p = Path(__file__).resolve().parents[2] / "frontend"  # src-layout repo root
    return p if p.exists() else None


def create_app(scenario: Scenario, denoiser_params: DenoiserParams | None = None,
               width: int = 320, height: int = 240, spp: int = 1):
    app = FastAPI(title="vptdn viewer service")
    params = denoiser_params or DenoiserParams()

    @app.websocket("/session")
    async def session_ws(ws: WebSocket):
        await ws.accept()
        session = SessionState(scenario, width=width, height=height, spp=spp,
                               denoiser_params=params)
        errors: asyncio.Queue[str] = asyncio.Queue()
        loop = asyncio.get_running_loop()

        async def recv_loop():
            while True:
                text = await ws.receive_text()
                try:
                    msg = json.loads(text)
                except json.JSONDecodeError as e:
                    await errors.put(f"invalid JSON: {e}")
                    continue
                err = session.queue_control(msg)
                if err:
                    await errors.put(err)

        recv = asyncio.create_task(recv_loop())
        try:
            while True:
                while not errors.empty():
                    await ws.send_text(json.dumps(
                        {"type": "error", "message": errors.get_nowait()}))
                packet = await loop.run_in_executor(None, session.render_next)
                await ws.send_bytes(packet)
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            recv.cancel()

    static = frontend_dir()
    if static is not None and (static / "index.html").exists():
        index_path = static / "index.html"

        @app.get("/")
        async def index():
            return FileResponse(index_path)

        if (static / "dist").exists():
            app.mount("/dist", StaticFiles(directory=static / "dist"), name="dist")
    return app


def serve(scenario: Scenario, host: str = "127.0.0.1", port: int = 8712,
          denoiser_params: DenoiserParams | None = None,
          width: int = 320, height: int = 240, spp: int = 1):
    """Blocking entry point used by the CLI's serve subcommand."""
    import uvicorn

    app = create_app(scenario, denoiser_params, width, height, spp)
    print(f"viewer service on http://{host}:{port}/ (ws endpoint /session)")
    uvicorn.run(app, host=host, port=port, log_level="warning")
