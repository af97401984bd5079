import math
import statistics

import numpy as np
import pytest

from hrmap.errors import ConfigError
from hrmap.geometry import Pose2, WindowSpec, inverse_transform_points, normalize_angle
from hrmap.mapstore import GlobalMap, save
from hrmap.raster import Category, LocalMask, MapElement, VectorMap, rasterize_local
from hrmap.rng import Xoshiro256
from hrmap.simulate import (
    FusionPolicy,
    NoiseParams,
    ScenarioConfig,
    ScenarioLog,
    Trajectory,
    World,
    WorldParams,
    crop_gt,
    generate_trajectory,
    generate_world,
    perceive,
    perturb_pose,
    run_scenario,
)
from hrmap.simulate.perception import clip_polyline, prior_overlap
from hrmap.simulate.scenario import trajectory_keys


class TestWorld:
    def test_deterministic(self):
        a, b = generate_world(3), generate_world(3)
        assert a.same_as(b)
        assert not a.same_as(generate_world(4))

    def test_zero_blocks_is_empty(self):
        w = generate_world(1, WorldParams(blocks_x=0, blocks_y=0))
        assert len(w.gt_map) == 0

    def test_default_census_and_extent(self, world):
        census = world.census()
        assert all(census[k] > 0 for k in ("div", "ped", "bou"))
        assert world.extent[0] >= 200 and world.extent[1] >= 200
        pts = np.concatenate([e.points for e in world.gt_map])
        assert pts.min() >= 0 and (pts.max(axis=0) <= world.extent).all()

    def test_serialization(self, small_world, tmp_path):
        small_world.save(tmp_path / "w.json")
        assert World.load(tmp_path / "w.json").same_as(small_world)

    def test_params_validation(self):
        with pytest.raises(ConfigError):
            WorldParams(blocks_x=-1)
        with pytest.raises(ConfigError):
            WorldParams.from_dict({"bogus": 1})


def _visited_cells(traj, every=10):
    g = GlobalMap()
    w = WindowSpec()
    out = []
    for pose in traj.poses[::every]:
        gx, gy = g.global_cells_for(pose, w)
        out.append(gx.ravel() * (1 << 32) + gy.ravel())
    return out


class TestTrajectory:
    def test_loop_closes_and_respects_step(self, loop):
        first, last = loop.poses[0], loop.poses[-1]
        assert math.hypot(first.x - last.x, first.y - last.y) <= 1.0
        for a, b in zip(loop.poses[:-1], loop.poses[1:]):
            assert math.hypot(b.x - a.x, b.y - a.y) <= 2.0 + 1e-9
            assert abs(normalize_angle(b.yaw - a.yaw)) <= 0.3 + 1e-9
        assert np.all(np.diff(loop.timestamps) > 0)

    def test_same_seed_same_trajectory(self, world, loop):
        assert generate_trajectory(world, 1, "loop").same_as(loop)

    @pytest.mark.parametrize("kind", ["loop", "outback"])
    def test_revisit_half_of_visited_cells(self, world, kind):
        traj = generate_trajectory(world, 2, kind)
        sets = _visited_cells(traj)
        half = len(sets) // 2
        early = np.unique(np.concatenate(sets[:half]))
        late = np.unique(np.concatenate(sets[half:]))
        both = len(np.intersect1d(early, late))
        assert both / len(np.union1d(early, late)) >= 0.5

    def test_grid_covers_streets(self, small_world):
        traj = generate_trajectory(small_world, 1, "grid")
        assert len(traj) > 100

    def test_invalid_trajectories(self, small_world):
        with pytest.raises(ConfigError):
            Trajectory("x", [0.0, 0.0], [Pose2(), Pose2(0.1, 0, 0)])
        with pytest.raises(ConfigError):
            Trajectory("x", [0.0, 1.0], [Pose2(), Pose2(5, 0, 0)])
        with pytest.raises(ConfigError):
            Trajectory("x", [0.0, 1.0], [Pose2(), Pose2(0, 0, 1.0)])
        with pytest.raises(ConfigError):
            generate_trajectory(generate_world(1, WorldParams(blocks_x=0, blocks_y=0)), 1, "loop")

    def test_serialization(self, loop, tmp_path):
        loop.save(tmp_path / "t.json")
        assert Trajectory.load(tmp_path / "t.json").same_as(loop)


class TestCrop:
    def test_far_pose_is_empty(self, world):
        assert len(crop_gt(world, Pose2(1e5, 1e5, 0))) == 0

    def test_inside_elements_transformed_verbatim(self, world, loop):
        pose = loop.poses[40]
        w = WindowSpec()
        gt = crop_gt(world, pose, w)
        inside = 0
        for el in world.gt_map:
            local = inverse_transform_points(pose, el.points)
            if (local[:, 0] > w.x_min).all() and (local[:, 0] < w.x_max).all() and (local[:, 1] > w.y_min).all() and (local[:, 1] < w.y_max).all():
                inside += 1
                assert any(g.category == el.category and np.array_equal(g.points, local) for g in gt)
        assert inside > 0

    def test_clipped_endpoints_on_boundary(self, world, loop):
        w = WindowSpec()
        for pose in loop.poses[::50]:
            for el in crop_gt(world, pose, w):
                p = el.points
                assert (p[:, 0] >= w.x_min).all() and (p[:, 0] <= w.x_max).all()
                assert (p[:, 1] >= w.y_min).all() and (p[:, 1] <= w.y_max).all()

    def test_clip_straddling_segment(self):
        pieces = clip_polyline(np.array([(-50.0, 1.0), (0.0, 1.0), (50.0, 3.0)]), (-30, -15), (30, 15))
        assert len(pieces) == 1
        p = pieces[0]
        assert abs(p[0, 0] + 30) <= 1e-6 and abs(p[-1, 0] - 30) <= 1e-6
        assert (p[1] == (0.0, 1.0)).all()

    def test_clip_splits_and_keeps_order(self):
        pts = np.array([(0.0, 0.0), (40.0, 0.0), (40.0, 5.0), (0.0, 5.0)])
        pieces = clip_polyline(pts, (-30, -15), (30, 15))
        assert len(pieces) == 2
        assert pieces[0][0, 0] == 0.0 and pieces[0][-1, 0] == 30.0
        assert pieces[1][0, 0] == 30.0 and pieces[1][-1, 0] == 0.0
        assert clip_polyline(np.array([(40.0, 0.0), (50.0, 0.0)]), (-30, -15), (30, 15)) == []


class TestPerceive:
    def test_noiseless_equals_crop(self, world, loop):
        pose = loop.poses[10]
        gt = crop_gt(world, pose)
        out = perceive(world, pose, NoiseParams.noiseless(), None, FusionPolicy(), Xoshiro256(1))
        assert len(out) == len(gt)
        for a, b in zip(out, gt):
            assert a.category == b.category and np.array_equal(a.points, b.points)
            assert 0.6 <= a.confidence <= 0.95

    def test_zero_recall_only_false_positives(self, world, loop):
        noise = NoiseParams(base_recall=0.0, false_positive_rate=2.0)
        total = 0
        for k in range(50):
            out = perceive(world, loop.poses[k], noise, None, FusionPolicy(recall_boost=0.0), Xoshiro256(k))
            total += len(out)
            assert all(0.3 <= e.confidence <= 0.6 for e in out)
        assert total > 0

    def test_boosted_recall_monte_carlo(self, world, loop):
        pose = loop.poses[30]
        w = WindowSpec()
        gt = crop_gt(world, pose, w)
        prior = rasterize_local(gt, w)
        noise = NoiseParams(point_jitter=0.0, base_recall=0.7, occlusion_sectors=0, false_positive_rate=0.0)
        fusion = FusionPolicy(0.3, 0.25)
        assert all(prior_overlap(el, prior) == 1.0 for el in gt)
        kept, with_none = 0, 0
        trials = 10_000
        for t in range(trials):
            kept += len(perceive(world, pose, noise, prior, fusion, Xoshiro256.derive(99, t), w, gt=gt))
        recall = kept / (trials * len(gt))
        assert abs(recall - 0.95) <= 0.01
        for t in range(2000):
            with_none += len(perceive(world, pose, noise, None, fusion, Xoshiro256.derive(98, t), w, gt=gt))
        assert recall >= with_none / (2000 * len(gt)) - 0.01

    def test_occlusion_hides_sector(self):
        el = MapElement(Category.DIVIDER, [(10.0, -1.0), (10.0, 1.0)])
        world = World(VectorMap([el]), (100.0, 100.0), 0)
        noise = NoiseParams(point_jitter=0, base_recall=1.0, occlusion_sectors=1, occlusion_width=2 * math.pi, false_positive_rate=0)
        assert len(perceive(world, Pose2(), noise, None, FusionPolicy(), Xoshiro256(0))) == 0

    def test_params_validation(self):
        with pytest.raises(ConfigError):
            NoiseParams(base_recall=1.5)
        with pytest.raises(ConfigError):
            NoiseParams(sigma_t=-0.1)
        with pytest.raises(ConfigError):
            FusionPolicy(prior_overlap_threshold=2)


class TestPosePerturbation:
    def test_zero_sigma_identity(self):
        p = Pose2(3, 4, 0.5)
        q = perturb_pose(p, 0, 0, Xoshiro256(1))
        assert (q.x, q.y, q.yaw) == (p.x, p.y, p.yaw)

    def test_translation_std(self):
        xs = [perturb_pose(Pose2(), 0.1, 0.0, Xoshiro256.derive(5, k)).x for k in range(10_000)]
        assert abs(statistics.pstdev(xs) - 0.1) <= 0.005

    def test_yaw_renormalized(self):
        for k in range(200):
            q = perturb_pose(Pose2(0, 0, math.pi - 1e-3), 0, 0.5, Xoshiro256(k))
            assert -math.pi < q.yaw <= math.pi

    def test_negative_sigma(self):
        with pytest.raises(ConfigError):
            perturb_pose(Pose2(), -1, 0, Xoshiro256(0))


def _short_config(world, n=60, **kw):
    traj = generate_trajectory(world, 1, "loop")
    short = Trajectory(traj.id, traj.timestamps[:n], traj.poses[:n])
    return ScenarioConfig(world, [short], **kw)


class TestScenario:
    def test_zero_frames(self, small_world):
        cfg = ScenarioConfig(small_world, [Trajectory("empty", [], [])])
        gmap, log = run_scenario(cfg)
        assert len(log) == 0 and gmap.tiles == {}

    def test_single_frame_equals_single_update(self, world):
        cfg = _short_config(world, 1, rng_seed=3)
        gmap, log = run_scenario(cfg)
        rec = log.records[0]
        mask = rasterize_local(rec.prediction, cfg.window)
        ref = GlobalMap()
        ref.update(mask, rec.noisy_pose)
        assert gmap.same_as(ref)
        vals = gmap.dense()[2]
        assert set(np.unique(vals).tolist()) <= {0, 30}
        assert int((vals == 30).sum()) == sum(ref.nonzero_counts())

    def test_deterministic_and_zero_sigma_neutral(self, world):
        cfg = _short_config(world, rng_seed=4)
        m1, l1 = run_scenario(cfg)
        m2, l2 = run_scenario(cfg)
        assert m1.to_bytes() == m2.to_bytes()
        assert list(l1.lines()) == list(l2.lines())
        explicit = cfg.replace(noise=NoiseParams(sigma_t=0.0, sigma_r=0.0))
        assert run_scenario(explicit)[0].to_bytes() == m1.to_bytes()
        other = run_scenario(cfg.replace(rng_seed=5))[0]
        assert other.to_bytes() != m1.to_bytes()

    def test_log_round_trip(self, world, tmp_path):
        _, log = run_scenario(_short_config(world, 10))
        log.write(tmp_path / "log.jsonl")
        back = ScenarioLog.read(tmp_path / "log.jsonl")
        assert list(back.lines()) == list(log.lines())
        assert back.records[3].prior_mask(back.window) == LocalMask.unpack(log.window, log.records[3].prior)

    def test_prior_retrieved_before_update(self, world):
        _, log = run_scenario(_short_config(world, 5))
        assert not log.records[0].prior_mask(log.window).data.any()
        assert log.records[1].prior_mask(log.window).data.any()

    def test_initial_map_loaded(self, world, tmp_path):
        cfg = _short_config(world, 20)
        first, _ = run_scenario(cfg)
        save(first, tmp_path / "init.hrmp")
        seeded, log = run_scenario(cfg.replace(initial_map=str(tmp_path / "init.hrmp")))
        assert log.records[0].prior_mask(log.window).data.any()
        assert not seeded.same_as(first)

    def test_duplicate_trajectory_ids_rejected(self, loop):
        with pytest.raises(ConfigError):
            trajectory_keys([loop, loop])

    def test_config_from_dict_and_schema(self, tmp_path):
        cfg = ScenarioConfig.from_dict({"version": 1, "world": {"seed": 1}, "trajectories": [{"kind": "loop", "seed": 1, "laps": 1}]})
        assert len(cfg.trajectories) == 1
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict({"version": 1, "world": {"seed": 1}, "trajectories": [], "bogus": 1})
        with pytest.raises(FileNotFoundError):
            ScenarioConfig.from_dict(
                {"version": 1, "world": {"seed": 1}, "trajectories": [{"kind": "loop", "seed": 1}], "initial_map": "nope.hrmp"},
                tmp_path,
            )


def test_step_too_coarse_for_turns_rejected(world):
    with pytest.raises(ConfigError, match="rad per frame"):
        generate_trajectory(world, 1, "loop", step=2.0)
    with pytest.raises(ConfigError):
        generate_trajectory(world, 1, "loop", step=0.0)
