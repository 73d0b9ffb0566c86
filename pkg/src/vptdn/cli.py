"""Command-line entry point: render, reference, denoise, eval, serve."""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import _kernels
from .denoiser import DenoiserParams
from .metrics import MetricReport, error_map, flicker_score, psnr, ssim, tone_map
from .pfm import heatmap, read_pfm, write_png
from .scenario import (Scenario, ScenarioError, builtin_scenarios, denoise_offline,
                       load_scenario, run_scenario, scenario_to_json)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--scenario", required=True,
                   help="scenario JSON path, or builtin name (e.g. camera-orbit)")
    p.add_argument("--out", default="out", help="output root directory")
    p.add_argument("--spp", type=int, default=None, help="override samples per pixel")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (VPTDN_THREADS wins)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_denoiser_flags(p: argparse.ArgumentParser):
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="forgetting factor in (0,1]")
    p.add_argument("--h", dest="h", type=float, default=None, help="weight bandwidth")
    p.add_argument("--alpha", type=float, default=None, help="history blend in [0,1]")
    p.add_argument("--sigma-s", type=float, default=None, help="spatial kernel sigma")
    p.add_argument("--sigma-r", type=float, default=None, help="range kernel sigma")


def _denoiser_params(args) -> DenoiserParams:
    params = DenoiserParams()
    for src, dst in (("lam", "lam"), ("h", "h"), ("alpha", "alpha"),
                     ("sigma_s", "sigma_s"), ("sigma_r", "sigma_r")):
        v = getattr(args, src, None)
        if v is not None:
            setattr(params, dst, v)
    return params.validate()


def _load(args) -> Scenario:
    builtins = builtin_scenarios()
    if args.scenario in builtins:
        return builtins[args.scenario]
    path = Path(args.scenario)
    if not path.exists():
        raise ScenarioError(
            f"scenario not found: {args.scenario!r} "
            f"(builtins: {', '.join(sorted(builtins))})")
    return load_scenario(path)


def _hash_outputs(out_dir: Path) -> str:
    h = hashlib.sha256()
    for f in sorted(out_dir.glob("frame_*.pfm")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def emit_run_manifest(out_dir: Path, command: str, scenario: Scenario,
                      config: dict, result) -> Path:
    """Write a JSON manifest capturing everything needed to reproduce a run."""
    manifest = {
        "command": command,
        "scenario": scenario_to_json(scenario),
        "scenario_hash": scenario.content_hash(),
        "config": config,
        "seed": scenario.seed,
        "timings": {
            "render_ms_per_frame": (float(np.mean(result.render_ms))
                                    if result.render_ms else None),
            "denoise_ms_per_frame": (float(np.mean(result.denoise_ms))
                                     if result.denoise_ms else None),
            "denoise_ms_median": (float(np.median(result.denoise_ms))
                                  if result.denoise_ms else None),
        },
        "nonfinite_samples": result.nonfinite,
        "output_hash": _hash_outputs(out_dir),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _echo_config(args, scenario: Scenario, mode: str, params: DenoiserParams | None):
    cfg = {
        "mode": mode,
        "scenario": scenario.name,
        "spp": args.spp if args.spp is not None else (
            scenario.reference_spp if mode == "reference" else scenario.spp),
        "frames": scenario.frames,
        "dims": [scenario.width, scenario.height],
        "seed": scenario.seed,
        "max_bounces": scenario.max_bounces,
    }
    if params is not None:
        cfg["denoiser"] = {"lambda": params.lam, "h": params.h,
                           "alpha": params.alpha, "eps": params.eps,
                           "p0": params.p0, "sigma_s": params.sigma_s,
                           "sigma_r": params.sigma_r}
    print("config: " + json.dumps(cfg, sort_keys=True))
    return cfg


def _progress(verbose):
    if not verbose:
        return None

    def cb(t, n, mode):
        print(f"\r{mode} frame {t + 1}/{n}", end="", file=sys.stderr)
        if t + 1 == n:
            print(file=sys.stderr)
    return cb


def cmd_render(args) -> int:
    scenario = _load(args)
    _kernels.set_threads(args.threads)
    cfg = _echo_config(args, scenario, "noisy", None)
    res = run_scenario(scenario, "noisy", out_root=args.out, spp=args.spp,
                       progress=_progress(args.verbose))
    emit_run_manifest(res.out_dir, "render", scenario, cfg, res)
    print(f"wrote {scenario.frames} frames to {res.out_dir}")
    return 0


def cmd_reference(args) -> int:
    scenario = _load(args)
    _kernels.set_threads(args.threads)
    cfg = _echo_config(args, scenario, "reference", None)
    res = run_scenario(scenario, "reference", out_root=args.out, spp=args.spp,
                       progress=_progress(args.verbose))
    emit_run_manifest(res.out_dir, "reference", scenario, cfg, res)
    print(f"wrote {scenario.frames} frames to {res.out_dir}")
    return 0


def cmd_denoise(args) -> int:
    scenario = _load(args)
    _kernels.set_threads(args.threads)
    params = _denoiser_params(args)
    cfg = _echo_config(args, scenario, "denoised", params)
    out_root = Path(args.out)
    if args.from_noisy:
        noisy_dir = out_root / scenario.name / "noisy"
        if not noisy_dir.exists():
            print(f"error: no noisy sequence at {noisy_dir}", file=sys.stderr)
            return 1
        res = denoise_offline(scenario, noisy_dir,
                              out_dir=out_root / scenario.name / "denoised",
                              denoiser_params=params)
    else:
        res = run_scenario(scenario, "denoised", out_root=args.out, spp=args.spp,
                           denoiser_params=params, progress=_progress(args.verbose))
    emit_run_manifest(res.out_dir, "denoise", scenario, cfg, res)
    if res.report is not None:
        print(f"mean PSNR: input {res.report.mean_psnr_input():.2f} dB, "
              f"denoised {res.report.mean_psnr_denoised():.2f} dB")
    print(f"wrote {scenario.frames} frames to {res.out_dir}")
    return 0


def cmd_eval(args) -> int:
    scenario = _load(args)
    out_root = Path(args.out)
    ref_dir = out_root / scenario.name / "reference"
    noisy_dir = out_root / scenario.name / "noisy"
    den_dir = out_root / scenario.name / "denoised"
    for d, what in ((ref_dir, "reference"), (noisy_dir, "noisy")):
        if not (d / "frame_0000.pfm").exists():
            print(f"error: missing {what} sequence at {d}", file=sys.stderr)
            return 1
    have_dn = (den_dir / "frame_0000.pfm").exists()
    report = MetricReport()
    tone_in, tone_dn = [], []
    err_dir = out_root / scenario.name / "error_maps"
    err_dir.mkdir(parents=True, exist_ok=True)
    for t in range(scenario.frames):
        ref = tone_map(read_pfm(ref_dir / f"frame_{t:04d}.pfm"), scenario.exposure)
        noisy = tone_map(read_pfm(noisy_dir / f"frame_{t:04d}.pfm"), scenario.exposure)
        tone_in.append(noisy)
        if have_dn:
            dn = tone_map(read_pfm(den_dir / f"frame_{t:04d}.pfm"), scenario.exposure)
            tone_dn.append(dn)
            report.add(t, psnr(noisy, ref), psnr(dn, ref), ssim(noisy, ref),
                       ssim(dn, ref))
            write_png(err_dir / f"error_denoised_{t:04d}.png",
                      heatmap(error_map(dn, ref), peak=0.25))
        else:
            report.add(t, psnr(noisy, ref), psnr(noisy, ref), ssim(noisy, ref),
                       ssim(noisy, ref))
        write_png(err_dir / f"error_input_{t:04d}.png",
                  heatmap(error_map(noisy, ref), peak=0.25))
    if scenario.frames >= 2:
        report.flicker_input = flicker_score(tone_in)
        if tone_dn:
            report.flicker_denoised = flicker_score(tone_dn)
    csv_path = out_root / scenario.name / "report.csv"
    report.write_csv(csv_path)
    print(f"mean PSNR: input {report.mean_psnr_input():.2f} dB"
          + (f", denoised {report.mean_psnr_denoised():.2f} dB" if have_dn else ""))
    print(f"wrote {csv_path} and error maps to {err_dir}")
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    scenario = _load(args)
    _kernels.set_threads(args.threads)
    params = _denoiser_params(args)
    serve(scenario, host=args.host, port=args.port, denoiser_params=params,
          width=args.live_width, height=args.live_height,
          spp=args.spp if args.spp is not None else 1)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="vptdn",
        description="Volumetric path tracing with real-time wRLS denoising")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a noisy sequence")
    _add_common(p)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("reference", help="render a high-spp reference sequence")
    _add_common(p)
    p.set_defaults(fn=cmd_reference)

    p = sub.add_parser("denoise", help="render + denoise (or replay from noisy files)")
    _add_common(p)
    _add_denoiser_flags(p)
    p.add_argument("--from-noisy", action="store_true",
                   help="replay the denoiser over stored noisy frames + aux buffers")
    p.set_defaults(fn=cmd_denoise)

    p = sub.add_parser("eval", help="metrics + error maps from stored sequences")
    _add_common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve", help="run the live viewer service")
    _add_common(p)
    _add_denoiser_flags(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8712)
    p.add_argument("--live-width", type=int, default=320)
    p.add_argument("--live-height", type=int, default=240)
    p.set_defaults(fn=cmd_serve)
    return ap


def run_command(argv) -> int:
    """Parse argv and execute; returns the process exit status."""
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except (ScenarioError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
