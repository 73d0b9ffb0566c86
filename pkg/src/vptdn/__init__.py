"""Volumetric path tracing for direct volume rendering, denoised in real time
by per-pixel linear models under weighted recursive least squares."""

from .denoiser import (DenoiserParams, DenoiserState, compute_sample_weight,
                       denoise_frame, reproject_state, rls_step, spatial_filter,
                       temporal_predict, update_temporal_feature, wrls_update,
                       wrls_update_pixel)
from .metrics import (MetricReport, error_map, flicker_score, psnr, ssim,
                      tone_map)
from .scenario import (Scenario, ScenarioError, builtin_scenarios, load_scenario,
                       parse_scenario, run_scenario, scenario_to_json,
                       scene_at_frame)
from .scene import (AreaLight, Camera, Environment, LightSet, PointLight, Scene)
from .tracer import (CollisionEvent, FrameEstimate, MotionField, RngStream,
                     compute_motion_field, direct_light, estimate_radiance,
                     generate_camera_ray, render_frame, sample_free_path)
from .volume import (MediumProperties, TransferFunction, VolumeError, VolumeGrid,
                     VolumeMeta, evaluate_medium, load_raw_volume,
                     make_procedural_volume, max_extinction, sample_scalar)

__version__ = "0.1.0"
