"""Saliency-weighted, Huber-robustified bundle adjustment.

Every observation contributes ``rho(w * e^T Sigma^-1 e)`` with
``e = x - pi(R X + t)``, ``Sigma = (sigma_px * octave_scale**octave)^2 I`` and
``rho`` the Huber cost on the squared norm. The weight sits *inside* the
kernel, so a heavier observation reaches the linear (outlier) branch sooner.

The problem is solved by Levenberg-Marquardt with IRLS re-linearization of
the kernel and Marquardt (multiplicative diagonal) damping. Landmarks are
eliminated by a Schur complement each iteration; the reduced camera system
is Cholesky-factorized.

By default weights are divided by their mean over the problem before use
(``SolverConfig.normalize_weights``). This keeps the Huber thresholds on the
same footing for any choice of weight gain/offset and makes the argmin
exactly invariant to a uniform rescaling of all weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

import numpy as np
import scipy.linalg

from .errors import (
    BehindCameraError,
    InsufficientObservationsError,
    RankDeficiencyError,
)
from .geometry import (
    Z_MIN,
    CameraIntrinsics,
    MapPoint,
    Pose,
    _hat_batch,
    project_batch,
    projection_derivative_batch,
    se3_exp,
)


@dataclass(frozen=True)
class Observation:
    frame_id: int
    point_id: int
    measurement: np.ndarray
    octave: int = 0
    weight: float = 1.0

    def __post_init__(self):
        m = np.array(self.measurement, dtype=float).reshape(-1)
        if m.size not in (2, 3):
            raise ValueError(f"measurement must have 2 (mono) or 3 (stereo) entries, got {m.size}")
        m.setflags(write=False)
        object.__setattr__(self, "measurement", m)
        if not self.weight > 0:
            raise ValueError(f"observation weight must be positive, got {self.weight}")
        if self.octave < 0:
            raise ValueError("octave must be non-negative")

    @property
    def is_stereo(self) -> bool:
        return self.measurement.size == 3

    def with_weight(self, weight: float) -> Observation:
        return Observation(self.frame_id, self.point_id, self.measurement, self.octave, weight)


@dataclass(frozen=True)
class NoiseModel:
    sigma_px: float = 1.0
    octave_scale: float = 1.2

    def __post_init__(self):
        if not self.sigma_px > 0:
            raise ValueError("sigma_px must be positive")
        if not self.octave_scale >= 1:
            raise ValueError("octave_scale must be >= 1")

    def sigma(self, octave):
        return self.sigma_px * self.octave_scale ** np.asarray(octave, dtype=float)


@dataclass(frozen=True)
class RobustKernel:
    """Huber thresholds on the weighted squared norm (i.e. delta squared)."""

    delta_mono: float = 5.991
    delta_stereo: float = 7.815

    def __post_init__(self):
        if not (self.delta_mono > 0 and self.delta_stereo > 0):
            raise ValueError("kernel thresholds must be positive")

    @classmethod
    def disabled(cls) -> RobustKernel:
        return cls(math.inf, math.inf)

    def threshold(self, stereo: bool) -> float:
        return self.delta_stereo if stereo else self.delta_mono


def huber(s, delta2: float):
    """Huber cost on a squared norm ``s`` and its derivative ``d rho / d s``."""
    s = np.asarray(s, dtype=float)
    if math.isinf(delta2):
        return s.copy(), np.ones_like(s)
    delta = math.sqrt(delta2)
    inlier = s <= delta2
    root = np.sqrt(np.where(inlier, 1.0, s))
    rho = np.where(inlier, s, 2.0 * delta * root - delta2)
    drho = np.where(inlier, 1.0, delta / root)
    return rho, drho


@dataclass(frozen=True)
class LocalWindow:
    active_keyframes: frozenset
    fixed_keyframes: frozenset
    active_points: frozenset

    def __post_init__(self):
        for name in ("active_keyframes", "fixed_keyframes", "active_points"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        if self.active_keyframes & self.fixed_keyframes:
            raise ValueError("active and fixed keyframe sets must be disjoint")


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 20
    initial_lambda: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    step_tolerance: float = 1e-10
    cost_tolerance: float = 1e-8
    max_lambda: float = 1e10
    normalize_weights: bool = True
    z_min: float = Z_MIN

    def __post_init__(self):
        for name in ("max_iterations", "initial_lambda", "lambda_up", "lambda_down",
                     "step_tolerance", "cost_tolerance", "max_lambda", "z_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SolverConfig.{name} must be positive")


@dataclass
class SolveReport:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    reason: str = ""
    cost_trace: list = field(default_factory=list)
    gauge_fixed_frame: int | None = None
    rank_deficient: bool = False
    skipped_observations: int = 0
    n_observations: int = 0


def residual_and_cost(
    obs: Observation,
    pose: Pose,
    point: MapPoint | np.ndarray,
    K: CameraIntrinsics,
    noise: NoiseModel = NoiseModel(),
    kernel: RobustKernel = RobustKernel(),
    z_min: float = Z_MIN,
):
    """Residual, robust cost and IRLS scale of one observation (raw weight)."""
    X = point.position if isinstance(point, MapPoint) else np.asarray(point, dtype=float)
    xc = pose.apply(X)
    if not xc[2] > z_min:
        raise BehindCameraError(f"point {obs.point_id} behind camera {obs.frame_id}")
    e = obs.measurement - project_batch(xc[None, :], K, obs.is_stereo)[0]
    sigma = float(noise.sigma(obs.octave))
    r2 = obs.weight * float(e @ e) / (sigma * sigma)
    rho, drho = huber(r2, kernel.threshold(obs.is_stereo))
    return e, float(rho), float(drho)


class Linearization(NamedTuple):
    residuals: np.ndarray  # (n, r); zero on skipped observations
    J_pose: np.ndarray  # (n, r, 6)
    J_point: np.ndarray  # (n, r, 3)
    info: np.ndarray  # (n,) IRLS-scaled information rho'(s) * w / sigma^2
    valid: np.ndarray  # (n,) bool
    cost: float


class BAProblem:
    """A bundle-adjustment instance with explicit variable/fixed partitions.

    ``poses`` and ``points`` hold every frame and landmark referenced by the
    observations. Frames in ``variable_frames`` and points in
    ``variable_points`` are optimized; the rest are held constant.
    """

    def __init__(
        self,
        observations: Iterable[Observation],
        poses: Mapping[int, Pose],
        points: Mapping[int, np.ndarray],
        K: CameraIntrinsics,
        noise: NoiseModel = NoiseModel(),
        kernel: RobustKernel = RobustKernel(),
        *,
        variable_frames: Iterable[int] = (),
        variable_points: Iterable[int] = (),
        normalize_weights: bool = True,
        z_min: float = Z_MIN,
    ):
        obs = list(observations)
        if not obs:
            raise InsufficientObservationsError("no observations")
        arity = {o.measurement.size for o in obs}
        if len(arity) != 1:
            raise ValueError("mixed mono and stereo observations in one problem")
        self.stereo = arity.pop() == 3
        self.K = K
        self.z_min = z_min
        self.delta2 = kernel.threshold(self.stereo)

        self.frame_ids = sorted({o.frame_id for o in obs})
        self.point_ids = sorted({o.point_id for o in obs})
        missing = [f for f in self.frame_ids if f not in poses]
        if missing:
            raise ValueError(f"observations reference unknown frames {missing[:5]}")
        missing = [p for p in self.point_ids if p not in points]
        if missing:
            raise ValueError(f"observations reference unknown points {missing[:5]}")

        var_f = sorted(set(variable_frames) & set(self.frame_ids))
        var_p = sorted(set(variable_points) & set(self.point_ids))
        self.var_frame_ids = var_f
        self.var_point_ids = var_p
        fslot = {f: i for i, f in enumerate(self.frame_ids)}
        pslot = {p: i for i, p in enumerate(self.point_ids)}
        fvar = {f: i for i, f in enumerate(var_f)}
        pvar = {p: i for i, p in enumerate(var_p)}

        self._var_frame_slot = np.array([fslot[f] for f in var_f], dtype=int)
        self._var_point_slot = np.array([pslot[p] for p in var_p], dtype=int)
        self.obs_frame = np.array([fslot[o.frame_id] for o in obs])
        self.obs_point = np.array([pslot[o.point_id] for o in obs])
        self.obs_cam_var = np.array([fvar.get(o.frame_id, -1) for o in obs])
        self.obs_pt_var = np.array([pvar.get(o.point_id, -1) for o in obs])
        self.meas = np.array([o.measurement for o in obs])
        w = np.array([o.weight for o in obs], dtype=float)
        if normalize_weights:
            w = w / np.mean(w)
        sigma = noise.sigma([o.octave for o in obs])
        self.base_info = w / (sigma * sigma)

        self.poses = [poses[f] for f in self.frame_ids]
        self.X = np.array(
            [
                points[p].position if isinstance(points[p], MapPoint) else np.asarray(points[p], dtype=float)
                for p in self.point_ids
            ]
        ).reshape(-1, 3)
        self._build_pairs()

    @property
    def n_observations(self) -> int:
        return self.meas.shape[0]

    def _build_pairs(self):
        both = np.flatnonzero((self.obs_cam_var >= 0) & (self.obs_pt_var >= 0))
        self.both = both
        by_point: dict[int, list[int]] = {}
        for k, o in enumerate(both):
            by_point.setdefault(int(self.obs_pt_var[o]), []).append(k)
        a, b = [], []
        for ks in by_point.values():
            for i in ks:
                for j in ks:
                    a.append(i)
                    b.append(j)
        self.pair_a = np.array(a, dtype=int)
        self.pair_b = np.array(b, dtype=int)

    # ------------------------------------------------------------------
    # state handling

    def state(self):
        return list(self.poses), self.X.copy()

    def _camera_points(self, poses, X):
        R = np.array([p.rotation.as_matrix() for p in poses])
        t = np.array([p.translation for p in poses])
        Ro = R[self.obs_frame]
        xc = np.einsum("nij,nj->ni", Ro, X[self.obs_point]) + t[self.obs_frame]
        return Ro, xc

    def evaluate(self, poses=None, X=None):
        """Robust cost and validity mask at a state (defaults to current)."""
        poses = self.poses if poses is None else poses
        X = self.X if X is None else X
        _, xc = self._camera_points(poses, X)
        valid = xc[:, 2] > self.z_min
        xc_safe = np.where(valid[:, None], xc, np.array([0.0, 0.0, 1.0]))
        e = self.meas - project_batch(xc_safe, self.K, self.stereo)
        e[~valid] = 0.0
        s = self.base_info * np.einsum("ni,ni->n", e, e)
        rho, _ = huber(s, self.delta2)
        return float(np.sum(rho[valid])), valid

    def linearize(self, poses=None, X=None) -> Linearization:
        poses = self.poses if poses is None else poses
        X = self.X if X is None else X
        Ro, xc = self._camera_points(poses, X)
        valid = xc[:, 2] > self.z_min
        xc = np.where(valid[:, None], xc, np.array([0.0, 0.0, 1.0]))
        e = self.meas - project_batch(xc, self.K, self.stereo)
        D = projection_derivative_batch(xc, self.K, self.stereo)
        J_pose = np.concatenate([D @ _hat_batch(xc), -D], axis=2)
        J_point = -(D @ Ro)
        e[~valid] = 0.0
        J_pose[~valid] = 0.0
        J_point[~valid] = 0.0
        s = self.base_info * np.einsum("ni,ni->n", e, e)
        rho, drho = huber(s, self.delta2)
        info = np.where(valid, drho * self.base_info, 0.0)
        return Linearization(e, J_pose, J_point, info, valid, float(np.sum(rho[valid])))

    # ------------------------------------------------------------------
    # normal equations

    def blocks(self, lin: Linearization):
        """Accumulate ``U, V, W, g_c, g_p`` of the (undamped) normal equations.

        ``W`` is returned per observation in ``self.both`` order.
        """
        C, P = len(self.var_frame_ids), len(self.var_point_ids)
        Jc, Jp, e, lam = lin.J_pose, lin.J_point, lin.residuals, lin.info
        U = np.zeros((C, 6, 6))
        V = np.zeros((P, 3, 3))
        gc = np.zeros((C, 6))
        gp = np.zeros((P, 3))
        mc = self.obs_cam_var >= 0
        mp = self.obs_pt_var >= 0
        if C:
            Jc_w = Jc[mc] * lam[mc, None, None]
            np.add.at(U, self.obs_cam_var[mc], np.einsum("nri,nrj->nij", Jc_w, Jc[mc]))
            np.add.at(gc, self.obs_cam_var[mc], np.einsum("nri,nr->ni", Jc_w, e[mc]))
        if P:
            Jp_w = Jp[mp] * lam[mp, None, None]
            np.add.at(V, self.obs_pt_var[mp], np.einsum("nri,nrj->nij", Jp_w, Jp[mp]))
            np.add.at(gp, self.obs_pt_var[mp], np.einsum("nri,nr->ni", Jp_w, e[mp]))
        b = self.both
        W = np.einsum("nri,nrj->nij", Jc[b] * lam[b, None, None], Jp[b])
        return U, V, W, gc, gp

    def dense_system(self, lin: Linearization, lam: float = 0.0):
        """Full ``(H, g)`` over ``[cameras..., points...]`` (for testing/small problems)."""
        U, V, W, gc, gp = self.blocks(lin)
        C, P = U.shape[0], V.shape[0]
        n = 6 * C + 3 * P
        H = np.zeros((n, n))
        for i in range(C):
            H[6 * i : 6 * i + 6, 6 * i : 6 * i + 6] = U[i]
        for j in range(P):
            k = 6 * C + 3 * j
            H[k : k + 3, k : k + 3] = V[j]
        for k, o in enumerate(self.both):
            i, j = self.obs_cam_var[o], self.obs_pt_var[o]
            r, c = 6 * i, 6 * C + 3 * j
            H[r : r + 6, c : c + 3] += W[k]
            H[c : c + 3, r : r + 6] += W[k].T
        H[np.diag_indices(n)] *= 1.0 + lam
        return H, np.concatenate([gc.ravel(), gp.ravel()])

    def solve_step(self, lin: Linearization, lam: float):
        """Damped step via Schur complement; returns ``(d_cams (C,6), d_points (P,3))``."""
        U, V, W, gc, gp = self.blocks(lin)
        C, P = U.shape[0], V.shape[0]
        idx3 = np.arange(3)
        idx6 = np.arange(6)
        V = V.copy()
        V[:, idx3, idx3] *= 1.0 + lam
        # points with no valid observation this iteration stay put
        dead = np.trace(V, axis1=1, axis2=2) == 0.0
        V[dead] = np.eye(3)
        gp = gp.copy()
        gp[dead] = 0.0
        try:
            Vinv = np.linalg.inv(V) if P else V
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("singular landmark block") from exc

        dc = np.zeros((C, 6))
        if C:
            U = U.copy()
            U[:, idx6, idx6] *= 1.0 + lam
            b = self.both
            pv = self.obs_pt_var[b]
            cv = self.obs_cam_var[b]
            Y = W @ Vinv[pv]
            S = np.zeros((C, C, 6, 6))
            S[np.arange(C), np.arange(C)] = U
            if len(self.pair_a):
                np.subtract.at(
                    S,
                    (cv[self.pair_a], cv[self.pair_b]),
                    Y[self.pair_a] @ np.transpose(W[self.pair_b], (0, 2, 1)),
                )
            rhs = -gc
            if len(b):
                np.add.at(rhs, cv, np.einsum("nij,nj->ni", Y, gp[pv]))
            S = S.transpose(0, 2, 1, 3).reshape(6 * C, 6 * C)
            S = 0.5 * (S + S.T)
            if not np.all(np.isfinite(S)):
                raise RankDeficiencyError("non-finite reduced camera system")
            try:
                factor = scipy.linalg.cho_factor(S, lower=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise RankDeficiencyError("reduced camera system not positive definite") from exc
            dc = scipy.linalg.cho_solve(factor, rhs.ravel(), check_finite=False).reshape(C, 6)
            if not np.all(np.isfinite(dc)):
                raise RankDeficiencyError("non-finite camera step")

        dp = np.zeros((P, 3))
        if P:
            back = -gp
            b = self.both
            if len(b) and C:
                np.subtract.at(
                    back,
                    self.obs_pt_var[b],
                    np.einsum("nji,nj->ni", W, dc[self.obs_cam_var[b]]),
                )
            dp = np.einsum("nij,nj->ni", Vinv, back)
            dp[dead] = 0.0
        return dc, dp

    def gauss_newton_step(self):
        """Undamped step at the current state."""
        return self.solve_step(self.linearize(), 0.0)

    def apply_step(self, dc, dp):
        poses = list(self.poses)
        for i, k in enumerate(self._var_frame_slot):
            poses[k] = se3_exp(dc[i]) @ poses[k]
        X = self.X.copy()
        if len(self._var_point_slot):
            X[self._var_point_slot] += dp
        return poses, X

    # ------------------------------------------------------------------

    def optimize(self, config: SolverConfig = SolverConfig()) -> SolveReport:
        """Levenberg-Marquardt; updates the problem state in place."""
        report = SolveReport(n_observations=self.n_observations)
        lam = config.initial_lambda
        lin = self.linearize()
        cost = lin.cost
        report.initial_cost = cost
        report.cost_trace.append(cost)
        report.skipped_observations = int(np.count_nonzero(~lin.valid))
        reason = "max_iterations"
        iteration = 0
        while iteration < config.max_iterations:
            iteration += 1
            if iteration > 1:
                lin = self.linearize()
                report.skipped_observations = int(np.count_nonzero(~lin.valid))
            if cost == 0.0:
                reason = "zero_cost"
                break
            accepted = False
            stop = None
            while True:
                try:
                    dc, dp = self.solve_step(lin, lam)
                except RankDeficiencyError:
                    lam *= config.lambda_up
                    if lam > config.max_lambda:
                        report.rank_deficient = True
                        stop = "rank_deficient"
                        break
                    continue
                step_norm = math.sqrt(float(np.sum(dc * dc) + np.sum(dp * dp)))
                if step_norm < config.step_tolerance:
                    stop = "small_step"
                    break
                poses, X = self.apply_step(dc, dp)
                new_cost, new_valid = self.evaluate(poses, X)
                newly_invalid = bool(np.any(lin.valid & ~new_valid))
                if math.isfinite(new_cost) and new_cost < cost and not newly_invalid:
                    self.poses, self.X = poses, X
                    rel = (cost - new_cost) / cost
                    cost = new_cost
                    report.cost_trace.append(cost)
                    lam = max(lam / config.lambda_down, 1e-15)
                    accepted = True
                    if rel < config.cost_tolerance:
                        stop = "cost_tolerance"
                    break
                if not newly_invalid and abs(new_cost - cost) <= config.cost_tolerance * cost:
                    stop = "cost_tolerance"
                    break
                lam *= config.lambda_up
                if lam > config.max_lambda:
                    stop = "no_accepted_step"
                    break
            if stop is not None:
                reason = stop
                break
            if not accepted:
                break
        report.iterations = iteration
        report.final_cost = cost
        report.reason = reason
        return report

    def result(self):
        poses = {f: p for f, p in zip(self.frame_ids, self.poses)}
        points = {p: MapPoint(p, x) for p, x in zip(self.point_ids, self.X)}
        return poses, points


# --------------------------------------------------------------------------
# public solvers


def _as_points(points) -> dict[int, np.ndarray]:
    if isinstance(points, Mapping):
        return {
            int(k): (v.position if isinstance(v, MapPoint) else np.asarray(v, dtype=float))
            for k, v in points.items()
        }
    return {p.id: p.position for p in points}


def solve_motion_only(
    observations: Iterable[Observation],
    map_points,
    initial_pose: Pose,
    K: CameraIntrinsics,
    noise: NoiseModel = NoiseModel(),
    kernel: RobustKernel = RobustKernel(),
    config: SolverConfig = SolverConfig(),
):
    """Refine one camera pose against fixed landmarks.

    ``observations`` must all belong to the same frame. Returns ``(pose, report)``.
    """
    obs = list(observations)
    frames = {o.frame_id for o in obs}
    if len(frames) > 1:
        raise ValueError(f"motion-only BA expects one frame, got {sorted(frames)}")
    stereo = bool(obs) and obs[0].is_stereo
    need = 3 if stereo else 6
    if len(obs) < need:
        raise InsufficientObservationsError(
            f"motion-only BA needs >= {need} {'stereo' if stereo else 'mono'} observations, got {len(obs)}"
        )
    frame = frames.pop()
    problem = BAProblem(
        obs,
        {frame: initial_pose},
        _as_points(map_points),
        K,
        noise,
        kernel,
        variable_frames=[frame],
        normalize_weights=config.normalize_weights,
        z_min=config.z_min,
    )
    report = problem.optimize(config)
    return problem.poses[0], report


def solve_local_ba(
    window: LocalWindow,
    observations: Iterable[Observation],
    poses: Mapping[int, Pose],
    points,
    K: CameraIntrinsics,
    noise: NoiseModel = NoiseModel(),
    kernel: RobustKernel = RobustKernel(),
    config: SolverConfig = SolverConfig(),
):
    """Jointly refine the window's active keyframes and points.

    Only observations linking a window keyframe (active or fixed) to an
    active point take part. Fixed keyframes contribute residuals but are
    not updated. With no fixed keyframe, the lowest-id active keyframe is
    held fixed and recorded in the report.

    Returns ``(poses, points, report)``: full copies of the inputs with the
    optimized entries replaced.
    """
    pts = _as_points(points)
    active = set(window.active_keyframes)
    fixed = set(window.fixed_keyframes)
    gauge = None
    if not fixed:
        if not active:
            raise ValueError("local window has no keyframes")
        gauge = min(active)
        active.discard(gauge)
        fixed.add(gauge)
    frames = active | fixed
    obs = [
        o for o in observations
        if o.frame_id in frames and o.point_id in window.active_points
    ]
    problem = BAProblem(
        obs,
        poses,
        pts,
        K,
        noise,
        kernel,
        variable_frames=active,
        variable_points=window.active_points,
        normalize_weights=config.normalize_weights,
        z_min=config.z_min,
    )
    report = problem.optimize(config)
    report.gauge_fixed_frame = gauge
    new_poses, new_points = problem.result()
    out_poses = dict(poses)
    out_poses.update({f: new_poses[f] for f in problem.var_frame_ids})
    out_points = {k: MapPoint(k, v) for k, v in pts.items()}
    out_points.update({p: new_points[p] for p in problem.var_point_ids})
    return out_poses, out_points, report


def full_ba_window(observations: Iterable[Observation], poses: Mapping[int, Pose], anchor: int | None = None) -> LocalWindow:
    """Window covering every keyframe except ``anchor`` (default: lowest id)."""
    obs = list(observations)
    frames = sorted(set(poses) & {o.frame_id for o in obs})
    if anchor is None:
        anchor = frames[0]
    seen: dict[int, set] = {}
    for o in obs:
        seen.setdefault(o.point_id, set()).add(o.frame_id)
    active_points = {p for p, fs in seen.items() if len(fs & set(frames)) >= 2}
    return LocalWindow(set(frames) - {anchor}, {anchor}, active_points)


def solve_full_ba(
    observations: Iterable[Observation],
    poses: Mapping[int, Pose],
    points,
    K: CameraIntrinsics,
    anchor: int | None = None,
    noise: NoiseModel = NoiseModel(),
    kernel: RobustKernel = RobustKernel(),
    config: SolverConfig = SolverConfig(),
):
    """Local BA over all keyframes with ``anchor`` as the only fixed frame."""
    obs = list(observations)
    window = full_ba_window(obs, poses, anchor)
    return solve_local_ba(window, obs, poses, points, K, noise, kernel, config)
