"""Deterministic synthetic multi-view worlds with saliency-correlated noise.

Each landmark carries a saliency score ``s ~ U[0, 1]``. Measurement noise
shrinks affinely with saliency, outliers and moving (dynamic) landmarks are
confined to low-saliency points, and every keyframe gets a saliency raster
rendered from Gaussian splats of the visible landmarks. All randomness comes
from :class:`salient_ba.rng.SplitMix64`.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetFormatError, GenerationError
from .geometry import CameraIntrinsics, MapPoint, Pose, Rotation, project_batch
from .metrics import Trajectory, read_tum, write_tum
from .pgm import load_raster, save_raster
from .rng import SplitMix64
from .saliency import SaliencyMap
from .snapshot import Problem, load_problem, save_problem
from .solver import NoiseModel, Observation

SHAPES = ("line", "arc", "loop")
LOW_SALIENCY = 0.2
SPLAT_SIGMA_PX = 6.0
MAX_RESAMPLE = 100


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 7
    n_keyframes: int = 12
    n_points: int = 60
    trajectory_shape: str = "loop"
    point_box: tuple[float, float, float] = (6.0, 3.0, 6.0)
    intrinsics: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics(450.0, 450.0, 320.0, 240.0, 0.5))
    image_size: tuple[int, int] = (640, 480)
    camera_distance: float = 12.0
    frame_dt: float = 0.1

    def __post_init__(self):
        if self.n_keyframes < 2:
            raise ValueError("n_keyframes must be >= 2")
        if self.n_points < 8:
            raise ValueError("n_points must be >= 8")
        if self.trajectory_shape not in SHAPES:
            raise ValueError(f"trajectory_shape must be one of {SHAPES}, got {self.trajectory_shape!r}")
        if len(self.point_box) != 3 or not all(v > 0 for v in self.point_box):
            raise ValueError("point_box extents must be three positive numbers")
        if not all(v > 0 for v in self.image_size):
            raise ValueError("image_size must be positive")
        if not (self.camera_distance > 0 and self.frame_dt > 0):
            raise ValueError("camera_distance and frame_dt must be positive")


@dataclass(frozen=True)
class NoiseProfile:
    sigma_min: float = 0.3
    sigma_max: float = 2.0
    outlier_rate_low_saliency: float = 0.05
    outlier_magnitude: float = 20.0
    dynamic_point_fraction: float = 0.2
    dynamic_drift: float = 0.02

    def __post_init__(self):
        if not (0 <= self.sigma_min <= self.sigma_max):
            raise ValueError("need 0 <= sigma_min <= sigma_max")
        for name in ("outlier_rate_low_saliency", "dynamic_point_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.outlier_magnitude < 0 or self.dynamic_drift < 0:
            raise ValueError("outlier_magnitude and dynamic_drift must be non-negative")

    def sigma(self, s):
        """Per-point pixel std, affine and decreasing in saliency."""
        return self.sigma_max - (self.sigma_max - self.sigma_min) * s

    @classmethod
    def noiseless(cls) -> NoiseProfile:
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass
class World:
    config: SceneConfig
    trajectory: Trajectory  # world-from-camera, TUM convention
    poses: list[Pose]  # camera-from-world, one per keyframe
    points: list[MapPoint]
    point_saliency: np.ndarray  # (n_points,) in [0, 1]
    saliency_maps: list[SaliencyMap]
    visibility: np.ndarray  # (n_keyframes, n_points) bool


@dataclass
class SimulatedObservations:
    observations: list[Observation]
    saliency: np.ndarray  # ground-truth saliency of each observation's landmark
    outlier: np.ndarray  # bool per observation
    dynamic_points: frozenset
    seed: int

    def by_frame(self) -> dict[int, list[Observation]]:
        out: dict[int, list[Observation]] = {}
        for o in self.observations:
            out.setdefault(o.frame_id, []).append(o)
        return out


# --------------------------------------------------------------------------
# world generation


def look_at(center, target, down=(0.0, 1.0, 0.0)) -> Pose:
    """Camera-from-world pose at ``center`` with its optical axis on ``target``."""
    center = np.asarray(center, dtype=float)
    z = np.asarray(target, dtype=float) - center
    z /= np.linalg.norm(z)
    x = np.cross(down, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R_wc = np.stack([x, y, z], axis=1)
    R = R_wc.T
    return Pose(Rotation.from_matrix(R), -R @ center)


def camera_centers(config: SceneConfig) -> np.ndarray:
    n, d = config.n_keyframes, config.camera_distance
    k = np.arange(n, dtype=float)
    if config.trajectory_shape == "line":
        x = d * (k / (n - 1) - 0.5)
        return np.stack([x, np.zeros(n), np.full(n, -d)], axis=1)
    if config.trajectory_shape == "arc":
        theta = 0.5 * math.pi * (k / (n - 1) - 0.5)
    else:
        theta = 2.0 * math.pi * k / n
    return np.stack([d * np.sin(theta), np.zeros(n), -d * np.cos(theta)], axis=1)


def _visible(poses_R, poses_t, X, config: SceneConfig) -> np.ndarray:
    """(n_frames,) visibility of one world point, including the right camera."""
    K = config.intrinsics
    w, h = config.image_size
    xc = poses_R @ X + poses_t
    ok = xc[:, 2] > 0.1
    zs = np.where(ok, xc[:, 2], 1.0)
    u = K.fx * xc[:, 0] / zs + K.cx
    v = K.fy * xc[:, 1] / zs + K.cy
    ur = K.fx * (xc[:, 0] - K.baseline) / zs + K.cx
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1) & (ur >= 0) & (ur <= w - 1)
    return ok & inside


def render_saliency(pose: Pose, points: np.ndarray, saliency: np.ndarray, visible: np.ndarray,
                    config: SceneConfig) -> SaliencyMap:
    """Max of Gaussian splats, each centred on the pixel nearest its projection."""
    w, h = config.image_size
    img = np.zeros((h, w))
    idx = np.flatnonzero(visible)
    if idx.size:
        uv = project_batch(pose.apply(points[idx]), config.intrinsics, False)
        r = int(math.ceil(4 * SPLAT_SIGMA_PX))
        for (u, v), s in zip(uv, saliency[idx]):
            cu, cv = int(round(u)), int(round(v))
            u0, u1 = max(cu - r, 0), min(cu + r, w - 1)
            v0, v1 = max(cv - r, 0), min(cv + r, h - 1)
            du = np.arange(u0, u1 + 1) - cu
            dv = np.arange(v0, v1 + 1) - cv
            d2 = dv[:, None] ** 2 + du[None, :] ** 2
            splat = 255.0 * s * np.exp(-d2 / (2 * SPLAT_SIGMA_PX**2))
            np.maximum(img[v0 : v1 + 1, u0 : u1 + 1], splat, out=img[v0 : v1 + 1, u0 : u1 + 1])
    return SaliencyMap(np.clip(np.rint(img), 0, 255))


def generate_world(config: SceneConfig) -> World:
    rng = SplitMix64(config.seed)
    centers = camera_centers(config)
    poses = [look_at(c, (0.0, 0.0, 0.0)) for c in centers]
    Rs = np.array([p.rotation.as_matrix() for p in poses])
    ts = np.array([p.translation for p in poses])
    half = 0.5 * np.asarray(config.point_box, dtype=float)

    positions = np.zeros((config.n_points, 3))
    saliency = np.zeros(config.n_points)
    vis = np.zeros((config.n_keyframes, config.n_points), dtype=bool)
    for j in range(config.n_points):
        for _ in range(MAX_RESAMPLE):
            X = np.array([rng.uniform(-a, a) for a in half])
            seen = _visible(Rs, ts, X, config)
            if np.count_nonzero(seen) >= 2:
                break
        else:
            raise GenerationError(
                f"point {j}: not visible from 2 keyframes after {MAX_RESAMPLE} attempts"
            )
        positions[j] = X
        vis[:, j] = seen
        saliency[j] = rng.uniform()

    stamps = config.frame_dt * np.arange(config.n_keyframes)
    maps = [render_saliency(p, positions, saliency, vis[k], config) for k, p in enumerate(poses)]
    return World(
        config=config,
        trajectory=Trajectory.from_camera_poses(stamps, poses),
        poses=poses,
        points=[MapPoint(j, positions[j]) for j in range(config.n_points)],
        point_saliency=saliency,
        saliency_maps=maps,
        visibility=vis,
    )


# --------------------------------------------------------------------------
# observations


def simulate_observations(world: World, noise: NoiseProfile, seed: int, mode: str = "mono") -> SimulatedObservations:
    """Noisy keypoint measurements of every visible landmark in every keyframe.

    Draw order per run: dynamic-point selection (landmark order), then for
    each keyframe and visible landmark the Gaussian noise components and, for
    low-saliency landmarks, the outlier draw(s).
    """
    if mode not in ("mono", "stereo"):
        raise ValueError(f"mode must be mono or stereo, got {mode!r}")
    stereo = mode == "stereo"
    rng = SplitMix64(seed)
    K = world.config.intrinsics
    sal = world.point_saliency

    drift_dir = {}
    for j in range(len(world.points)):
        if sal[j] < LOW_SALIENCY and rng.uniform() < noise.dynamic_point_fraction:
            d = np.array([rng.normal(), rng.normal(), rng.normal()])
            drift_dir[j] = d / np.linalg.norm(d)

    observations, obs_sal, outlier = [], [], []
    for k, pose in enumerate(world.poses):
        for j in np.flatnonzero(world.visibility[k]):
            X = world.points[j].position
            if j in drift_dir:
                X = X + k * noise.dynamic_drift * drift_dir[j]
            xc = pose.apply(X)
            if not xc[2] > 0.1:
                continue
            m = project_batch(xc[None, :], K, stereo)[0]
            sigma = noise.sigma(sal[j])
            m = m + sigma * np.array([rng.normal() for _ in range(m.size)])
            is_out = False
            if sal[j] < LOW_SALIENCY and rng.uniform() < noise.outlier_rate_low_saliency:
                ang = 2.0 * math.pi * rng.uniform()
                off = noise.outlier_magnitude * np.array([math.cos(ang), math.sin(ang)])
                m[0] += off[0]
                m[1] += off[1]
                if stereo:
                    m[2] += off[0]
                is_out = True
            observations.append(Observation(k, int(j), m, 0, 1.0))
            obs_sal.append(sal[j])
            outlier.append(is_out)
    return SimulatedObservations(
        observations, np.array(obs_sal), np.array(outlier, dtype=bool), frozenset(drift_dir), seed
    )


# --------------------------------------------------------------------------
# dataset export / import


def world_problem(world: World, sim: SimulatedObservations, mode: str) -> Problem:
    cfg = world.config
    return Problem(
        mode=mode,
        intrinsics=cfg.intrinsics,
        noise=NoiseModel(),
        image_size=tuple(cfg.image_size),
        poses={k: p for k, p in enumerate(world.poses)},
        timestamps={k: float(t) for k, t in enumerate(world.trajectory.timestamps)},
        points={p.id: p for p in world.points},
        observations=list(sim.observations),
        saliency=[float(s) for s in sim.saliency],
    )


def saliency_path(root, frame_id: int) -> str:
    return os.path.join(root, "saliency", f"kf_{frame_id:06d}.pgm")


def run_dir(root, run: int) -> str:
    return os.path.join(root, "runs", f"run_{run:03d}")


def export_dataset(world: World, runs: list[SimulatedObservations], out_dir, mode: str = "mono") -> list[str]:
    """Write ground truth, saliency rasters and one problem snapshot per run.

    Layout::

        groundtruth.txt                 TUM, one line per keyframe
        saliency/kf_<frame>.pgm         8-bit P5 saliency rasters
        runs/run_<k>/problem.txt        problem snapshot of run k
    """
    written = []
    gt_path = os.path.join(out_dir, "groundtruth.txt")
    write_tum(world.trajectory, gt_path)
    written.append(gt_path)
    for k, smap in enumerate(world.saliency_maps):
        path = saliency_path(out_dir, k)
        save_raster(smap, path)
        written.append(path)
    for r, sim in enumerate(runs):
        path = os.path.join(run_dir(out_dir, r), "problem.txt")
        save_problem(world_problem(world, sim, mode), path)
        written.append(path)
    return written


@dataclass
class Dataset:
    root: str
    groundtruth: Trajectory
    saliency_maps: dict[int, SaliencyMap]
    problems: list[Problem]
    run_names: list[str]


def import_dataset(root) -> Dataset:
    gt_path = os.path.join(root, "groundtruth.txt")
    if not os.path.isfile(gt_path):
        raise DatasetFormatError(f"{gt_path}: missing ground-truth trajectory")
    gt = read_tum(gt_path)
    maps = {}
    sdir = os.path.join(root, "saliency")
    if os.path.isdir(sdir):
        for name in sorted(os.listdir(sdir)):
            if name.startswith("kf_") and name.endswith(".pgm"):
                raster = load_raster(os.path.join(sdir, name))
                if not isinstance(raster, SaliencyMap):
                    raise DatasetFormatError(f"{name}: expected an 8-bit saliency raster")
                maps[int(name[3:-4])] = raster
    rdir = os.path.join(root, "runs")
    if not os.path.isdir(rdir):
        raise DatasetFormatError(f"{rdir}: no runs directory")
    names = sorted(n for n in os.listdir(rdir) if os.path.isfile(os.path.join(rdir, n, "problem.txt")))
    if not names:
        raise DatasetFormatError(f"{rdir}: no run contains problem.txt")
    problems = [load_problem(os.path.join(rdir, n, "problem.txt")) for n in names]
    return Dataset(str(root), gt, maps, problems, names)
