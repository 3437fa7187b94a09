import dataclasses
import os

import numpy as np
import pytest

from salient_ba.errors import GenerationError
from salient_ba.geometry import project_batch
from salient_ba.metrics import read_tum
from salient_ba.pgm import load_raster
from salient_ba.rng import SplitMix64
from salient_ba.saliency import SaliencyMap
from salient_ba.snapshot import dumps
from salient_ba.solver import residual_and_cost
from salient_ba.synthetic import (
    SHAPES,
    NoiseProfile,
    SceneConfig,
    export_dataset,
    generate_world,
    import_dataset,
    simulate_observations,
    world_problem,
)


@pytest.fixture(scope="module")
def world():
    return generate_world(SceneConfig())


class TestSplitMix64:
    def test_reference_outputs(self):
        r = SplitMix64(0)
        assert [r.next_u64() for _ in range(3)] == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]
        r = SplitMix64(1234567)
        assert [r.next_u64() for _ in range(3)] == [6457827717110365317, 3203168211198807973, 9817491932198370423]

    def test_uniform_range_and_moments(self):
        r = SplitMix64(3)
        u = np.array([r.uniform() for _ in range(20000)])
        assert u.min() >= 0 and u.max() < 1
        assert abs(u.mean() - 0.5) < 0.01
        n = np.array([r.normal() for _ in range(20000)])
        assert abs(n.mean()) < 0.03 and abs(n.std() - 1) < 0.03

    def test_integer(self):
        r = SplitMix64(4)
        vals = {r.integer(5) for _ in range(200)}
        assert vals == {0, 1, 2, 3, 4}
        with pytest.raises(ValueError):
            r.integer(0)


class TestWorld:
    def test_deterministic(self, world):
        again = generate_world(SceneConfig())
        assert np.array_equal(again.point_saliency, world.point_saliency)
        assert all(np.array_equal(a.position, b.position) for a, b in zip(again.points, world.points))
        assert all(a == b for a, b in zip(again.saliency_maps, world.saliency_maps))

    def test_seed_sensitivity(self):
        a = generate_world(SceneConfig(seed=1))
        b = generate_world(SceneConfig(seed=2))
        assert not np.array_equal([p.position for p in a.points], [p.position for p in b.points])

    @pytest.mark.parametrize("shape", SHAPES)
    def test_every_point_inside_two_images(self, shape):
        w = generate_world(SceneConfig(trajectory_shape=shape, seed=11))
        cfg = w.config
        W, H = cfg.image_size
        count = np.zeros(len(w.points), dtype=int)
        for pose in w.poses:
            X = np.array([p.position for p in w.points])
            xc = pose.apply(X)
            ok = xc[:, 2] > 0
            uv = project_batch(np.where(ok[:, None], xc, 1.0), cfg.intrinsics, True)
            inside = ok & (uv[:, 0] >= 0) & (uv[:, 0] <= W - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= H - 1)
            count += inside
        assert np.all(count >= 2)
        assert np.all(w.visibility.sum(axis=0) >= 2)

    def test_points_inside_box_and_saliency_in_unit_interval(self, world):
        half = 0.5 * np.array(world.config.point_box)
        X = np.array([p.position for p in world.points])
        assert np.all(np.abs(X) <= half)
        assert np.all((world.point_saliency >= 0) & (world.point_saliency < 1))

    def test_saliency_peaks_at_keypoints(self, world):
        cfg = world.config
        for k, pose in enumerate(world.poses):
            smap = world.saliency_maps[k].values
            assert smap.min() >= 0 and smap.max() <= 255
            for j in np.flatnonzero(world.visibility[k]):
                u, v = project_batch(pose.apply(world.points[j].position)[None], cfg.intrinsics, False)[0]
                assert smap[int(round(v)), int(round(u))] >= 255 * world.point_saliency[j] - 0.5

    def test_unreachable_visibility_raises(self):
        with pytest.raises(GenerationError):
            generate_world(SceneConfig(n_points=8, image_size=(4, 4)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SceneConfig(n_keyframes=1)
        with pytest.raises(ValueError):
            SceneConfig(n_points=7)
        with pytest.raises(ValueError):
            SceneConfig(trajectory_shape="spiral")
        with pytest.raises(ValueError):
            NoiseProfile(sigma_min=3.0, sigma_max=2.0)
        with pytest.raises(ValueError):
            NoiseProfile(outlier_rate_low_saliency=1.5)


class TestObservations:
    def test_noiseless_residuals_exactly_zero(self, world):
        for mode in ("mono", "stereo"):
            sim = simulate_observations(world, NoiseProfile.noiseless(), 5, mode)
            for o in sim.observations:
                e, cost, _ = residual_and_cost(o, world.poses[o.frame_id], world.points[o.point_id], world.config.intrinsics)
                assert np.all(e == 0.0) and cost == 0.0

    def test_sigma_endpoints_and_affine(self):
        p = NoiseProfile()
        assert p.sigma(1.0) == pytest.approx(p.sigma_min)
        assert p.sigma(0.0) == p.sigma_max
        assert p.sigma(0.5) == pytest.approx(0.5 * (p.sigma_min + p.sigma_max))

    @pytest.mark.parametrize("s", [0.0, 0.5, 1.0])
    def test_monte_carlo_std(self, world, s):
        w = dataclasses.replace(world, point_saliency=np.full(len(world.points), s))
        noise = NoiseProfile(outlier_rate_low_saliency=0.0, dynamic_point_fraction=0.0)
        res = []
        for seed in range(12):
            sim = simulate_observations(w, noise, seed)
            for o in sim.observations:
                xc = w.poses[o.frame_id].apply(w.points[o.point_id].position)
                res.append(o.measurement - project_batch(xc[None], w.config.intrinsics, False)[0])
        res = np.concatenate(res)
        assert res.size >= 10_000
        assert abs(res.std() / noise.sigma(s) - 1.0) < 0.05

    def test_outliers_and_dynamics_only_low_saliency(self, world):
        sim = simulate_observations(world, NoiseProfile(outlier_rate_low_saliency=0.5, dynamic_point_fraction=1.0), 3)
        assert sim.outlier.any()
        assert np.all(sim.saliency[sim.outlier] < 0.2)
        assert sim.dynamic_points
        assert all(world.point_saliency[j] < 0.2 for j in sim.dynamic_points)

    def test_outlier_offset_magnitude(self, world):
        noise = NoiseProfile(sigma_min=0.0, sigma_max=0.0, outlier_rate_low_saliency=1.0, dynamic_point_fraction=0.0)
        sim = simulate_observations(world, noise, 9, "stereo")
        for o, out in zip(sim.observations, sim.outlier):
            xc = world.poses[o.frame_id].apply(world.points[o.point_id].position)
            d = o.measurement - project_batch(xc[None], world.config.intrinsics, True)[0]
            if out:
                assert np.hypot(d[0], d[1]) == pytest.approx(20.0)
                assert d[2] == pytest.approx(d[0])
            else:
                assert np.allclose(d, 0)

    def test_seed_determinism(self, world):
        a = simulate_observations(world, NoiseProfile(), 4)
        b = simulate_observations(world, NoiseProfile(), 4)
        c = simulate_observations(world, NoiseProfile(), 5)
        assert all(np.array_equal(x.measurement, y.measurement) for x, y in zip(a.observations, b.observations))
        assert any(not np.array_equal(x.measurement, y.measurement) for x, y in zip(a.observations, c.observations))


class TestExport:
    def test_round_trip(self, world, tmp_path):
        sims = [simulate_observations(world, NoiseProfile(), 7 + k, "stereo") for k in range(2)]
        export_dataset(world, sims, tmp_path, "stereo")
        ds = import_dataset(tmp_path)
        assert len(ds.problems) == 2 and ds.run_names == ["run_000", "run_001"]
        for sim, prob in zip(sims, ds.problems):
            assert dumps(prob) == dumps(world_problem(world, sim, "stereo"))
            assert all(np.array_equal(a.measurement, b.measurement) for a, b in zip(sim.observations, prob.observations))
        for k, m in enumerate(world.saliency_maps):
            assert ds.saliency_maps[k] == m

    def test_layout(self, world, tmp_path):
        export_dataset(world, [simulate_observations(world, NoiseProfile(), 1)], tmp_path)
        with open(tmp_path / "groundtruth.txt") as fh:
            assert len(fh.read().splitlines()) == world.config.n_keyframes
        gt = read_tum(tmp_path / "groundtruth.txt")
        assert np.allclose(gt.positions(), world.trajectory.positions(), atol=1e-8)
        names = sorted(os.listdir(tmp_path / "saliency"))
        assert len(names) == world.config.n_keyframes
        for n in names:
            assert isinstance(load_raster(tmp_path / "saliency" / n), SaliencyMap)
