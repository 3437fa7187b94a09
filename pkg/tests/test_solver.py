import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import (
    K_TEST,
    aligned_error,
    center_error,
    fixture_problem,
    motion_problem,
    with_noise,
    load_json,
    make_scene,
    perturb,
    rotation_error,
)
from oracles import dense_gn
from salient_ba.errors import BehindCameraError, InsufficientObservationsError
from salient_ba.geometry import Pose, Rotation
from salient_ba.solver import (
    BAProblem,
    LocalWindow,
    NoiseModel,
    Observation,
    RobustKernel,
    SolverConfig,
    full_ba_window,
    huber,
    residual_and_cost,
    solve_full_ba,
    solve_local_ba,
    solve_motion_only,
)

OFF = RobustKernel.disabled()




# --------------------------------------------------------------------------
# residual, kernel, types


class TestResidual:
    pose = Pose.identity()
    X = np.array([0.0, 0.0, 2.0])

    def obs(self, du):
        return Observation(0, 0, np.array([K_TEST.cx + du, K_TEST.cy]))

    def test_zero_residual(self):
        e, cost, irls = residual_and_cost(self.obs(0.0), self.pose, self.X, K_TEST)
        assert np.allclose(e, 0) and cost == 0.0 and irls == 1.0

    def test_inlier_branch(self):
        _, cost, irls = residual_and_cost(self.obs(2.0), self.pose, self.X, K_TEST)
        assert cost == pytest.approx(4.0) and irls == 1.0

    def test_outlier_branch(self):
        _, cost, irls = residual_and_cost(self.obs(10.0), self.pose, self.X, K_TEST)
        assert cost == pytest.approx(2 * math.sqrt(5.991) * 10 - 5.991)
        assert cost == pytest.approx(42.96, abs=5e-3)
        assert irls == pytest.approx(math.sqrt(5.991) / 10)

    def test_octave_and_weight_scale_information(self):
        o = Observation(0, 0, np.array([K_TEST.cx + 2.0, K_TEST.cy]), octave=2, weight=3.0)
        _, cost, _ = residual_and_cost(o, self.pose, self.X, K_TEST, NoiseModel(1.0, 1.2), OFF)
        assert cost == pytest.approx(3.0 * 4.0 / 1.2**4)

    def test_behind_camera(self):
        with pytest.raises(BehindCameraError):
            residual_and_cost(self.obs(0.0), self.pose, -self.X, K_TEST)

    @given(st.floats(0, 1e4), st.floats(0.1, 50))
    def test_huber_continuous_and_below_quadratic(self, s, d2):
        rho, drho = huber(s, d2)
        assert rho <= s + 1e-9 and 0 < drho <= 1
        lo, _ = huber(d2 * (1 - 1e-12), d2)
        hi, _ = huber(d2 * (1 + 1e-12), d2)
        assert abs(lo - hi) < 1e-9 * max(1.0, d2)

    def test_observation_validation(self):
        with pytest.raises(ValueError):
            Observation(0, 0, np.zeros(2), weight=0.0)
        with pytest.raises(ValueError):
            Observation(0, 0, np.zeros(4))
        with pytest.raises(ValueError):
            Observation(0, 0, np.zeros(2), octave=-1)
        with pytest.raises(ValueError):
            NoiseModel(sigma_px=0)
        with pytest.raises(ValueError):
            RobustKernel(delta_mono=0)
        with pytest.raises(ValueError):
            LocalWindow({1}, {1}, {2})


# --------------------------------------------------------------------------
# motion-only


class TestMotionOnly:
    @pytest.mark.parametrize("stereo", [False, True], ids=["mono", "stereo"])
    def test_noise_free_recovery(self, stereo):
        rng = np.random.default_rng(21 + stereo)
        for _ in range(10):
            gt, pts, obs = motion_problem(rng, stereo=stereo)
            est, rep = solve_motion_only(obs, pts, perturb(gt, rng, 0.1, 0.5), K_TEST)
            assert rotation_error(est, gt) < 1e-6 and center_error(est, gt) < 1e-6
            assert rep.final_cost <= rep.initial_cost

    def test_optimal_start_is_fixed_point(self):
        gt, pts, obs = motion_problem(np.random.default_rng(23))
        est, rep = solve_motion_only(obs, pts, gt, K_TEST)
        assert rep.iterations <= 2 and rep.reason in ("zero_cost", "small_step")
        assert np.allclose(est.as_matrix(), gt.as_matrix(), atol=1e-12)

    def test_accepted_costs_non_increasing(self):
        rng = np.random.default_rng(24)
        gt, pts, obs = motion_problem(rng)
        _, rep = solve_motion_only(with_noise(obs, rng, 1.0), pts, perturb(gt, rng, 0.1, 0.5), K_TEST)
        assert np.all(np.diff(rep.cost_trace) <= 0)
        assert rep.final_cost == rep.cost_trace[-1] <= rep.initial_cost

    def test_insufficient_observations(self):
        gt, pts, obs = motion_problem(np.random.default_rng(25), n=5)
        with pytest.raises(InsufficientObservationsError):
            solve_motion_only(obs, pts, gt, K_TEST)
        gt, pts, obs = motion_problem(np.random.default_rng(25), n=3, stereo=True)
        solve_motion_only(obs, pts, gt, K_TEST)
        with pytest.raises(InsufficientObservationsError):
            solve_motion_only(obs[:2], pts, gt, K_TEST)

    def test_rejects_multiple_frames(self):
        gt, pts, obs = motion_problem(np.random.default_rng(26))
        obs[0] = Observation(1, obs[0].point_id, obs[0].measurement)
        with pytest.raises(ValueError):
            solve_motion_only(obs, pts, gt, K_TEST)

    def test_huber_limits_single_outlier(self):
        rng = np.random.default_rng(27)
        gt, pts, obs = motion_problem(rng, n=100)
        o = obs[0]
        obs[0] = Observation(0, o.point_id, o.measurement + [50.0, 0.0])
        robust, _ = solve_motion_only(obs, pts, gt, K_TEST)
        plain, _ = solve_motion_only(obs, pts, gt, K_TEST, kernel=OFF)
        assert center_error(robust, gt) < 1e-3
        assert center_error(plain, gt) > 1e-2

    def test_weight_scale_invariance_without_normalization(self):
        rng = np.random.default_rng(28)
        gt, pts, obs = motion_problem(rng)
        noisy = with_noise(obs, rng, 1.0)
        start = perturb(gt, rng, 0.1, 0.5)
        cfg = SolverConfig(normalize_weights=False)
        w = rng.uniform(0.2, 1.5, len(noisy))
        a, _ = solve_motion_only([o.with_weight(x) for o, x in zip(noisy, w)], pts, start, K_TEST, kernel=OFF, config=cfg)
        b, _ = solve_motion_only([o.with_weight(7 * x) for o, x in zip(noisy, w)], pts, start, K_TEST, kernel=OFF, config=cfg)
        assert np.max(np.abs(a.as_matrix() - b.as_matrix())) < 1e-9

    def test_behind_camera_observations_are_skipped(self):
        rng = np.random.default_rng(29)
        gt, pts, obs = motion_problem(rng, n=30)
        pts = dict(pts)
        pts[999] = gt.inverse().apply([0.0, 0.0, -3.0])
        obs.append(Observation(0, 999, np.array([320.0, 240.0])))
        est, rep = solve_motion_only(obs, pts, perturb(gt, rng, 0.05, 0.1), K_TEST)
        assert rep.skipped_observations == 1
        assert center_error(est, gt) < 1e-6


# --------------------------------------------------------------------------
# normal equations against the brute-force oracle


class TestOracle:
    fixture = load_json("gn_fixture.json")

    @pytest.mark.parametrize("stereo", [False, True], ids=["mono", "stereo"])
    def test_normal_equations_match_oracle(self, stereo):
        prob = fixture_problem(self.fixture, stereo)
        H, g = prob.dense_system(prob.linearize())
        Ho, go, _ = dense_gn.normal_equations(self.fixture, stereo)
        scale = np.abs(Ho).max()
        assert np.max(np.abs(H - Ho)) <= 1e-10 * scale
        assert np.max(np.abs(g - go)) <= 1e-10 * np.abs(go).max()

    @pytest.mark.parametrize("stereo", [False, True], ids=["mono", "stereo"])
    def test_oracle_matches_committed_values(self, stereo):
        exp = self.fixture["expected"]["stereo" if stereo else "mono"]
        Ho, go, e = dense_gn.normal_equations(self.fixture, stereo)
        assert np.allclose(Ho, exp["H"], rtol=1e-12, atol=1e-9)
        assert np.allclose(go, exp["g"], rtol=1e-12, atol=1e-9)
        assert float(e @ e) == pytest.approx(exp["cost"], rel=1e-12)

    def test_gauss_newton_step_matches_oracle(self):
        prob = fixture_problem(self.fixture, True)
        dc, dp = prob.gauss_newton_step()
        step = np.concatenate([dc.ravel(), dp.ravel()])
        assert np.max(np.abs(step - np.array(self.fixture["expected"]["stereo"]["step"]))) < 1e-10
        cams, pts = dense_gn.apply_step(self.fixture, step)
        poses, X = prob.apply_step(dc, dp)
        assert np.max(np.abs(poses[1].as_matrix() - cams[1])) < 1e-10
        assert np.max(np.abs(X - pts)) < 1e-10

    @pytest.mark.parametrize("n_frames,n_points,n_fixed", [(3, 10, 1), (4, 30, 1), (6, 50, 2), (10, 100, 1)])
    @pytest.mark.parametrize("stereo", [False, True], ids=["mono", "stereo"])
    def test_schur_matches_dense_solve(self, n_frames, n_points, n_fixed, stereo):
        rng = np.random.default_rng(n_frames * 100 + n_points)
        if not stereo:
            # one fixed monocular frame leaves scale free and H singular
            n_fixed = max(n_fixed, 2)
        poses, pts, obs = make_scene(rng, n_frames, n_points, stereo)
        # drop some observations so the structure is not fully dense
        keep = [o for o in obs if rng.uniform() > 0.25 or o.frame_id < 2]
        obs = with_noise(keep, rng, 1.0)
        poses = {f: perturb(p, rng, 0.01, 0.05) if f >= n_fixed else p for f, p in poses.items()}
        prob = BAProblem(obs, poses, pts, K_TEST, variable_frames=range(n_fixed, n_frames), variable_points=pts)
        lin = prob.linearize()
        for lam in (0.0, 1e-3):
            dc, dp = prob.solve_step(lin, lam)
            H, g = prob.dense_system(lin, lam)
            ref = np.linalg.solve(H, -g)
            got = np.concatenate([dc.ravel(), dp.ravel()])
            assert np.max(np.abs(got - ref)) < 1e-8


# --------------------------------------------------------------------------
# local and full BA


class TestLocalBA:
    def setup_scene(self, stereo, seed=31):
        rng = np.random.default_rng(seed)
        gt, pts, obs = make_scene(rng, 4, 50, stereo)
        start = {f: (p if f == 0 else perturb(p, rng, 0.02, 0.1)) for f, p in gt.items()}
        noisy_pts = {j: X + rng.normal(0, 0.05, 3) for j, X in pts.items()}
        window = LocalWindow({1, 2, 3}, {0}, set(pts))
        return gt, pts, obs, start, noisy_pts, window

    def test_stereo_window_recovers_ground_truth(self):
        gt, pts, obs, start, noisy, window = self.setup_scene(True)
        poses, points, rep = solve_local_ba(window, obs, start, noisy, K_TEST)
        for f in (1, 2, 3):
            assert center_error(poses[f], gt[f]) < 1e-6 and rotation_error(poses[f], gt[f]) < 1e-6
        assert max(np.linalg.norm(points[j].position - X) for j, X in pts.items()) < 1e-6
        assert poses[0] is start[0]
        assert rep.gauge_fixed_frame is None

    def test_mono_window_recovers_up_to_scale(self):
        gt, pts, obs, start, noisy, window = self.setup_scene(False)
        poses, _, _ = solve_local_ba(window, obs, start, noisy, K_TEST, config=SolverConfig(max_iterations=50))
        assert aligned_error(poses, gt, range(4), with_scale=True) < 1e-6

    def test_ground_truth_is_fixed_point(self):
        gt, pts, obs, _, _, window = self.setup_scene(True)
        poses, points, rep = solve_local_ba(window, obs, gt, pts, K_TEST)
        assert rep.reason in ("zero_cost", "small_step") and rep.iterations <= 2
        for f in gt:
            assert np.allclose(poses[f].as_matrix(), gt[f].as_matrix(), atol=1e-12)

    def test_point_relabeling_invariance(self):
        gt, pts, obs, start, noisy, window = self.setup_scene(True)
        rng = np.random.default_rng(32)
        obs = with_noise(obs, rng, 0.5)
        a, pa, _ = solve_local_ba(window, obs, start, noisy, K_TEST)
        perm = {j: 1000 - j for j in pts}
        obs2 = [Observation(o.frame_id, perm[o.point_id], o.measurement) for o in obs]
        noisy2 = {perm[j]: X for j, X in noisy.items()}
        w2 = LocalWindow({1, 2, 3}, {0}, set(noisy2))
        b, pb, _ = solve_local_ba(w2, obs2, start, noisy2, K_TEST)
        for f in gt:
            assert np.max(np.abs(a[f].as_matrix() - b[f].as_matrix())) < 1e-8
        assert max(np.linalg.norm(pa[j].position - pb[perm[j]].position) for j in pts) < 1e-8

    def test_gauge_fallback_fixes_lowest_keyframe(self):
        gt, pts, obs, start, noisy, _ = self.setup_scene(True)
        window = LocalWindow({0, 1, 2, 3}, set(), set(pts))
        poses, _, rep = solve_local_ba(window, obs, start, noisy, K_TEST)
        assert rep.gauge_fixed_frame == 0
        assert poses[0] is start[0]
        assert center_error(poses[3], gt[3]) < 1e-6

    def test_observations_outside_window_ignored(self):
        gt, pts, obs, start, noisy, _ = self.setup_scene(True)
        window = LocalWindow({2, 3}, {1}, set(pts))
        poses, _, rep = solve_local_ba(window, obs, start, noisy, K_TEST)
        assert rep.n_observations == 3 * len(pts)
        assert poses[0] is start[0]

    def test_unobserved_variable_frame_reports_rank_deficiency(self):
        gt, pts, obs, start, noisy, _ = self.setup_scene(True)
        # every observation from frame 3 lands behind a flipped camera
        flipped = Pose(Rotation.from_rotvec([0, math.pi, 0]), [0, 0, 0]) @ gt[3]
        start = dict(start)
        start[3] = flipped
        poses, _, rep = solve_local_ba(LocalWindow({1, 2, 3}, {0}, set(pts)), obs, start, noisy, K_TEST)
        assert rep.rank_deficient and rep.reason == "rank_deficient"
        assert rep.final_cost <= rep.initial_cost
        assert all(np.all(np.isfinite(p.as_matrix())) for p in poses.values())


class TestFullBA:
    def test_ten_keyframe_loop_recovered(self):
        rng = np.random.default_rng(41)
        gt, pts, obs = make_scene(rng, 10, 60, True)
        start = {f: (p if f == 0 else perturb(p, rng, 0.02, 0.1)) for f, p in gt.items()}
        noisy = {j: X + rng.normal(0, 0.05, 3) for j, X in pts.items()}
        poses, points, rep = solve_full_ba(obs, start, noisy, K_TEST, anchor=0)
        assert max(center_error(poses[f], gt[f]) for f in gt) < 1e-6
        assert max(rotation_error(poses[f], gt[f]) for f in gt) < 1e-6
        assert np.array_equal(poses[0].as_matrix(), start[0].as_matrix())

    def test_reduces_to_local_ba(self):
        rng = np.random.default_rng(42)
        gt, pts, obs = make_scene(rng, 5, 30, True)
        obs = with_noise(obs, rng, 1.0)
        start = {f: (p if f == 2 else perturb(p, rng, 0.02, 0.1)) for f, p in gt.items()}
        a, pa, _ = solve_full_ba(obs, start, pts, K_TEST, anchor=2)
        window = full_ba_window(obs, start, anchor=2)
        assert window.fixed_keyframes == {2} and window.active_keyframes == {0, 1, 3, 4}
        b, pb, _ = solve_local_ba(window, obs, start, pts, K_TEST)
        for f in gt:
            assert np.array_equal(a[f].as_matrix(), b[f].as_matrix())


class TestWeights:
    def noisy_window(self, seed=51):
        rng = np.random.default_rng(seed)
        gt, pts, obs = make_scene(rng, 5, 40, False)
        obs = with_noise(obs, rng, 1.5)
        start = {f: (p if f < 2 else perturb(p, rng, 0.02, 0.1)) for f, p in gt.items()}
        return rng, obs, start, pts, LocalWindow({2, 3, 4}, {0, 1}, set(pts))

    def test_uniform_scaling_leaves_argmin_unchanged(self):
        rng, obs, start, pts, window = self.noisy_window()
        w = rng.uniform(0.1, 1.1, len(obs))
        a, _, ra = solve_local_ba(window, [o.with_weight(x) for o, x in zip(obs, w)], start, pts, K_TEST)
        b, _, rb = solve_local_ba(window, [o.with_weight(7 * x) for o, x in zip(obs, w)], start, pts, K_TEST)
        for f in start:
            assert np.max(np.abs(a[f].as_matrix() - b[f].as_matrix())) < 1e-9

    def test_constant_weight_equals_unit_weight(self):
        _, obs, start, pts, window = self.noisy_window()
        a, _, _ = solve_local_ba(window, obs, start, pts, K_TEST)
        b, _, _ = solve_local_ba(window, [o.with_weight(0.1) for o in obs], start, pts, K_TEST)
        for f in start:
            assert np.max(np.abs(a[f].as_matrix() - b[f].as_matrix())) < 1e-10

    def test_unnormalized_weights_change_robust_cost(self):
        _, obs, start, pts, window = self.noisy_window()
        cfg = SolverConfig(normalize_weights=False)
        _, _, ra = solve_local_ba(window, obs, start, pts, K_TEST, config=cfg)
        _, _, rb = solve_local_ba(window, [o.with_weight(7.0) for o in obs], start, pts, K_TEST, config=cfg)
        assert rb.initial_cost > ra.initial_cost

    def test_cost_scales_with_weight_without_kernel(self):
        _, obs, start, pts, window = self.noisy_window()
        cfg = SolverConfig(normalize_weights=False)
        p1 = BAProblem(obs, start, pts, K_TEST, kernel=OFF, variable_frames={2, 3, 4}, variable_points=pts,
                       normalize_weights=False)
        p7 = BAProblem([o.with_weight(7.0) for o in obs], start, pts, K_TEST, kernel=OFF,
                       variable_frames={2, 3, 4}, variable_points=pts, normalize_weights=False)
        assert p7.evaluate()[0] == pytest.approx(7 * p1.evaluate()[0], rel=1e-12)
        r1, r7 = p1.optimize(cfg), p7.optimize(cfg)
        assert r7.final_cost == pytest.approx(7 * r1.final_cost, rel=1e-9)
        for x, y in zip(p1.poses, p7.poses):
            assert np.max(np.abs(x.as_matrix() - y.as_matrix())) < 1e-9
