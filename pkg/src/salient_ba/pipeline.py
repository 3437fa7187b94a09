"""Keyframe-by-keyframe back-end: motion-only BA, triangulation, sliding local BA.

The estimator only reads a problem's observations, intrinsics, timestamps
and the poses of the first two keyframes, which stand in for the map
initialization (they also fix the world frame and, for monocular input,
the scale). Every other pose and every landmark is estimated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientObservationsError
from .geometry import CameraIntrinsics, MapPoint, Pose
from .metrics import Trajectory
from .saliency import SaliencyMap, WeightParams, sample_saliency, salient_weight
from .snapshot import Problem
from .solver import (
    LocalWindow,
    NoiseModel,
    Observation,
    RobustKernel,
    SolverConfig,
    solve_local_ba,
    solve_motion_only,
)

VARIANTS = ("uniform", "salient-oracle", "salient-raster")
N_ACTIVE = 5
N_FIXED = 2
N_BOOTSTRAP = 2


@dataclass
class BackendResult:
    trajectory: Trajectory
    poses: dict[int, Pose]
    points: dict[int, MapPoint]
    reports: list[dict] = field(default_factory=list)


def observation_weights(
    problem: Problem,
    variant: str,
    weight: WeightParams = WeightParams(),
    saliency_maps: dict[int, SaliencyMap] | None = None,
) -> np.ndarray:
    """Per-observation weights for one experiment variant."""
    n = len(problem.observations)
    if variant == "uniform":
        return np.ones(n)
    if variant == "salient-oracle":
        s = np.asarray(problem.saliency, dtype=float)
        if s.size != n or np.any(s < 0):
            raise ValueError("salient-oracle needs ground-truth saliency on every observation")
        return salient_weight(255.0 * s, weight)
    if variant == "salient-raster":
        if not saliency_maps:
            raise ValueError("salient-raster needs saliency rasters")
        out = np.empty(n)
        for i, o in enumerate(problem.observations):
            smap = saliency_maps[o.frame_id]
            u = min(max(o.measurement[0], 0.0), smap.width - 1)
            v = min(max(o.measurement[1], 0.0), smap.height - 1)
            out[i] = salient_weight(sample_saliency(smap, u, v), weight)
        return out
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def triangulate(obs: list[Observation], poses: dict[int, Pose], K: CameraIntrinsics):
    """Linear (DLT) triangulation; returns ``None`` if a view sees it behind."""
    rows = []
    for o in obs:
        P = np.hstack([poses[o.frame_id].rotation.as_matrix(), poses[o.frame_id].translation[:, None]])
        fx, fy, cx, cy = K.fx, K.fy, K.cx, K.cy
        u, v = o.measurement[0], o.measurement[1]
        rows.append((u - cx) * P[2] - fx * P[0])
        rows.append((v - cy) * P[2] - fy * P[1])
        if o.is_stereo:
            Pr0 = P[0] - np.array([0.0, 0.0, 0.0, K.baseline])
            rows.append((o.measurement[2] - cx) * P[2] - fx * Pr0)
    A = np.array(rows)
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    _, _, Vt = np.linalg.svd(A)
    h = Vt[-1]
    if abs(h[3]) < 1e-12:
        return None
    X = h[:3] / h[3]
    for o in obs:
        if poses[o.frame_id].apply(X)[2] <= 0.1:
            return None
    return X


def run_backend(
    problem: Problem,
    weights: np.ndarray,
    noise: NoiseModel = NoiseModel(),
    kernel: RobustKernel = RobustKernel(),
    config: SolverConfig = SolverConfig(),
) -> BackendResult:
    K = problem.intrinsics
    obs_all = [o.with_weight(float(w)) for o, w in zip(problem.observations, weights)]
    frames = sorted({o.frame_id for o in obs_all} | set(problem.timestamps))
    by_frame: dict[int, list[Observation]] = {f: [] for f in frames}
    by_point: dict[int, list[Observation]] = {}
    for o in obs_all:
        by_frame[o.frame_id].append(o)
        by_point.setdefault(o.point_id, []).append(o)

    boot = frames[:N_BOOTSTRAP]
    missing = [f for f in boot if f not in problem.poses]
    if missing:
        raise InsufficientObservationsError(f"bootstrap keyframes {missing} have no pose")
    poses = {f: problem.poses[f] for f in boot}
    points: dict[int, np.ndarray] = {}
    reports: list[dict] = []

    def map_new_points(candidates):
        for pid in sorted(candidates):
            if pid in points:
                continue
            seen = [o for o in by_point.get(pid, []) if o.frame_id in poses]
            if len({o.frame_id for o in seen}) < 2:
                continue
            X = triangulate(seen, poses, K)
            if X is not None:
                points[pid] = X

    map_new_points({o.point_id for f in boot for o in by_frame[f]})

    for idx in range(N_BOOTSTRAP, len(frames)):
        f = frames[idx]
        prev, prev2 = poses[frames[idx - 1]], poses[frames[idx - 2]]
        guess = (prev @ prev2.inverse()) @ prev
        tracked = [o for o in by_frame[f] if o.point_id in points]
        try:
            pose, rep = solve_motion_only(tracked, points, guess, K, noise, kernel, config)
            reports.append(_report_row(f, "motion", rep))
        except InsufficientObservationsError:
            pose = guess
            reports.append({"frame": f, "stage": "motion", "reason": "insufficient_observations",
                            "iterations": 0, "initial_cost": 0.0, "final_cost": 0.0,
                            "n_observations": len(tracked), "rank_deficient": False})
        poses[f] = pose
        map_new_points({o.point_id for o in by_frame[f]})

        lo = max(N_BOOTSTRAP, idx - N_ACTIVE + 1)
        active = set(frames[lo : idx + 1])
        fixed = set(frames[max(0, lo - N_FIXED) : lo])
        window_frames = active | fixed
        counts: dict[int, int] = {}
        in_active: set[int] = set()
        for wf in window_frames:
            for o in by_frame[wf]:
                if o.point_id in points:
                    counts[o.point_id] = counts.get(o.point_id, 0) + 1
                    if wf in active:
                        in_active.add(o.point_id)
        act_pts = {p for p in in_active if counts[p] >= 2}
        if not act_pts:
            continue
        win_obs = [o for wf in sorted(window_frames) for o in by_frame[wf] if o.point_id in act_pts]
        new_poses, new_points, rep = solve_local_ba(
            LocalWindow(active, fixed, act_pts), win_obs, poses, points, K, noise, kernel, config
        )
        reports.append(_report_row(f, "local", rep))
        poses.update(new_poses)
        for p in act_pts:
            points[p] = new_points[p].position

    stamps = [problem.timestamps.get(f, float(f)) for f in frames]
    traj = Trajectory.from_camera_poses(stamps, [poses[f] for f in frames])
    return BackendResult(traj, poses, {p: MapPoint(p, x) for p, x in points.items()}, reports)


def _report_row(frame, stage, rep) -> dict:
    return {
        "frame": frame,
        "stage": stage,
        "reason": rep.reason,
        "iterations": rep.iterations,
        "initial_cost": rep.initial_cost,
        "final_cost": rep.final_cost,
        "n_observations": rep.n_observations,
        "rank_deficient": rep.rank_deficient,
    }
