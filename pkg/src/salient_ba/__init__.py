"""Saliency-weighted bundle adjustment for visual SLAM back-ends.

Observations carry a weight ``w = a_w * s**2 + b_w`` derived from a
saliency map; the Levenberg-Marquardt solver (motion-only, local and full
bundle adjustment with a Schur-complement reduction) scales each
observation's robust cost by that weight. A synthetic world generator and
trajectory metrics support A/B experiments against uniform weighting.
"""

from .errors import *  # noqa: F401,F403
from .geometry import (
    CameraIntrinsics,
    MapPoint,
    Pose,
    Rotation,
    SimTransform,
    project_mono,
    project_stereo,
    reprojection_jacobians,
    se3_exp,
    se3_log,
    umeyama_align,
)
from .metrics import ErrorStats, RunSummary, Trajectory, aggregate_runs, associate, ate, read_tum, rpe, write_tum
from .pgm import load_raster, save_raster
from .saliency import DepthMap, FusionParams, SaliencyMap, WeightParams, fuse_saliency, sample_saliency, salient_weight
from .solver import (
    LocalWindow,
    NoiseModel,
    Observation,
    RobustKernel,
    SolveReport,
    SolverConfig,
    solve_full_ba,
    solve_local_ba,
    solve_motion_only,
)
from .synthetic import NoiseProfile, SceneConfig, World, generate_world, simulate_observations

__version__ = "0.1.0"
