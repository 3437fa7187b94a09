"""Shared builders for tests."""

import json
import math
import os

import numpy as np

from salient_ba.geometry import CameraIntrinsics, Pose, Rotation, se3_exp, umeyama_align
from salient_ba.solver import BAProblem, NoiseModel, Observation, RobustKernel

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
K_TEST = CameraIntrinsics(450.0, 440.0, 320.0, 240.0, 0.5)


def load_json(name):
    with open(os.path.join(DATA_DIR, name)) as fh:
        return json.load(fh)


def random_rotation(rng, max_angle=math.pi * 0.95) -> Rotation:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * rng.uniform(0.0, max_angle))


def random_pose(rng, max_angle=math.pi * 0.95, max_t=2.0) -> Pose:
    return Pose(random_rotation(rng, max_angle), rng.uniform(-max_t, max_t, 3))


def perturb(pose: Pose, rng, max_angle: float, max_t: float) -> Pose:
    """Left-perturb by a rotation of angle <= max_angle and a shift of norm <= max_t."""
    w = rng.normal(size=3)
    w *= rng.uniform(0, max_angle) / np.linalg.norm(w)
    v = rng.normal(size=3)
    v *= rng.uniform(0, max_t) / np.linalg.norm(v)
    return Pose(Rotation.from_rotvec(w), v) @ pose


def point_in_front(rng, pose: Pose, zmin=2.0, zmax=10.0, half_fov=0.5) -> np.ndarray:
    """World point that lands at depth in [zmin, zmax] and inside a cone of the camera."""
    z = rng.uniform(zmin, zmax)
    xc = np.array([rng.uniform(-half_fov, half_fov) * z, rng.uniform(-half_fov, half_fov) * z, z])
    return pose.inverse().apply(xc)


def observe(pose: Pose, X, K, stereo: bool, frame_id=0, point_id=0, weight=1.0) -> Observation:
    xc = pose.apply(X)
    m = [K.fx * xc[0] / xc[2] + K.cx, K.fy * xc[1] / xc[2] + K.cy]
    if stereo:
        m.append(K.fx * (xc[0] - K.baseline) / xc[2] + K.cx)
    return Observation(frame_id, point_id, np.array(m), weight=weight)


def rotation_error(a: Pose, b: Pose) -> float:
    return (a.rotation.inverse() @ b.rotation).angle()


def center_error(a: Pose, b: Pose) -> float:
    return float(np.linalg.norm(a.center() - b.center()))


def twist_perturb(pose, rng, scale_w, scale_v):
    return se3_exp(np.concatenate([rng.normal(0, scale_w, 3), rng.normal(0, scale_v, 3)])) @ pose


def jacobian_relative_errors(n: int, seed: int, stereo: bool) -> np.ndarray:
    """Max relative error of analytic vs central-difference Jacobians per instance."""
    from oracles.finite_diff import jacobians as fd_jacobians
    from salient_ba.geometry import MapPoint, reprojection_jacobians

    rng = np.random.default_rng(seed)
    out = np.empty(n)
    for k in range(n):
        pose = random_pose(rng)
        X = point_in_front(rng, pose)
        Ja, Jx = reprojection_jacobians(pose, MapPoint(0, X), K_TEST, "stereo" if stereo else "mono")
        Fa, Fx = fd_jacobians(pose.as_matrix(), X, K_TEST, stereo)
        out[k] = max(
            np.linalg.norm(Ja - Fa) / np.linalg.norm(Fa),
            np.linalg.norm(Jx - Fx) / np.linalg.norm(Fx),
        )
    return out


def make_scene(rng, n_frames: int, n_points: int, stereo: bool, K=K_TEST):
    """Cameras on a gentle arc looking at a point cloud; noise-free observations.

    Returns ``(poses, points, observations)`` with every point seen by every frame.
    """
    poses = {}
    for f in range(n_frames):
        ang = 0.08 * (f - (n_frames - 1) / 2)
        c = np.array([6.0 * math.sin(ang), 0.2 * math.sin(3 * f), -6.0 * math.cos(ang) + 6.0])
        R = Rotation.from_rotvec([0.0, -ang, 0.0])
        poses[f] = Pose(R, -R.apply(c))
    points = {}
    while len(points) < n_points:
        X = np.array([rng.uniform(-2.5, 2.5), rng.uniform(-1.5, 1.5), rng.uniform(4.0, 9.0)])
        ok = True
        for p in poses.values():
            xc = p.apply(X)
            u, v = K.fx * xc[0] / xc[2] + K.cx, K.fy * xc[1] / xc[2] + K.cy
            ok &= xc[2] > 1.0 and 0 <= u < 640 and 0 <= v < 480
        if ok:
            points[100 + len(points)] = X
    obs = [observe(poses[f], X, K, stereo, f, pid) for f in poses for pid, X in points.items()]
    return poses, points, obs


def motion_problem(rng, n=40, stereo=False):
    pose = random_pose(rng, max_angle=1.0)
    pts = {j: point_in_front(rng, pose) for j in range(n)}
    obs = [observe(pose, X, K_TEST, stereo, 0, j) for j, X in pts.items()]
    return pose, pts, obs


def with_noise(obs, rng, sigma):
    return [Observation(o.frame_id, o.point_id, o.measurement + rng.normal(0, sigma, o.measurement.size),
                        o.octave, o.weight) for o in obs]


def fixture_problem(fixture, stereo):
    K = CameraIntrinsics(**fixture["K"])
    poses = {i: Pose(Rotation(c["q"]), c["t"]) for i, c in enumerate(fixture["cameras"])}
    pts = {j: np.array(X) for j, X in enumerate(fixture["points"])}
    key = "stereo" if stereo else "mono"
    obs = [Observation(o["cam"], o["point"], np.array(o[key])) for o in fixture["observations"]]
    free = [i for i, c in enumerate(fixture["cameras"]) if not c["fixed"]]
    return BAProblem(obs, poses, pts, K, NoiseModel(), RobustKernel.disabled(), variable_frames=free, variable_points=pts)


def aligned_error(est_poses, gt_poses, frames, with_scale):
    src = np.array([est_poses[f].center() for f in frames])
    dst = np.array([gt_poses[f].center() for f in frames])
    S = umeyama_align(src, dst, with_scale=with_scale)
    return float(np.max(np.linalg.norm(S.apply(src) - dst, axis=1)))
