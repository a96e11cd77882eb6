import json

import numpy as np
import pytest

from robustpose import Pose
from robustpose import PointCloud
from robustpose import KeypointSet
from robustpose import BinaryMask
from robustpose import SceneConfig
from robustpose import EmptyMask
from robustpose import SceneFormatError
from robustpose import occlude
from robustpose import apply_pose
from robustpose import scene_seed
from robustpose import back_project
from robustpose import corrupt_mask
from robustpose import builtin_model
from robustpose import generate_scene
from robustpose import generate_scenes
from robustpose import inject_outliers
from robustpose import nearest_distances
from robustpose import perturb_keypoints
from robustpose import load_scene_dataset
from robustpose import save_scene_dataset

class TestBuiltinModels:
    def test_box(self, box_model):
        assert box_model.keypoints.N == 8
        assert box_model.m == 2048
        assert box_model.diameter == pytest.approx(np.sqrt(0.14))
        assert box_model.source == {"kind": "box", "size": [0.3, 0.2, 0.1],
                                    "seed": 0, "m": 2048}

    def test_cylinder(self):
        model = builtin_model("cylinder", (0.3, 0.2, 0.1), m=500)
        assert model.keypoints.N == 6
        assert model.diameter == pytest.approx(np.sqrt(0.05))
        radii = np.linalg.norm(model.dense_points[:2], axis=0)
        assert radii.max() <= 0.1 + 1e-12

    def test_lbracket(self):
        size = (0.3, 0.2, 0.1)
        model = builtin_model("lbracket", size, m=500)
        assert model.keypoints.N == 12
        assert model.diameter == pytest.approx(np.linalg.norm(size))

    def test_seeded_sample(self):
        a = builtin_model("box", m=100, seed=3)
        b = builtin_model("box", m=100, seed=3)
        assert np.array_equal(a.dense_points, b.dense_points)

    def test_invalid(self):
        with pytest.raises(ValueError):
            builtin_model("sphere")
        with pytest.raises(ValueError):
            builtin_model("box", (0.3, -0.2, 0.1))
        with pytest.raises(ValueError):
            builtin_model("box", m=8)

class TestScenes:
    def test_deterministic(self, small_box):
        cfg = SceneConfig(gaussian_noise_std=0.001, outlier_rate=0.1)
        a = generate_scene(small_box, cfg, seed=42)
        b = generate_scene(small_box, cfg, seed=42)
        assert np.array_equal(a.X.points, b.X.points)
        assert np.array_equal(a.X.features, b.X.features)
        assert np.array_equal(a.M.grid, b.M.grid)
        assert np.array_equal(a.T_star.asMatrix(), b.T_star.asMatrix())
        assert a.seed == 42

    def test_clean_points_lie_on_the_model(self, box_model, clean_scene, clean_cfg):
        posed = apply_pose(clean_scene.T_star, box_model.dense_points)
        assert np.max(nearest_distances(clean_scene.X.points, posed)) < 1e-12
        assert not np.any(clean_scene.outlier_flags)
        assert np.array_equal(clean_scene.M.grid, clean_scene.M_star.grid)
        assert clean_scene.X.n <= clean_cfg.max_points
        assert clean_scene.X.features.shape == (3, clean_scene.X.n)
        assert np.allclose(clean_scene.y_star.points,
                           apply_pose(clean_scene.T_star, box_model.keypoints.points))

    def test_translation_box(self, small_box):
        cfg = SceneConfig()
        for scene in generate_scenes(small_box, cfg, 5, seed=8):
            t = scene.T_star.translation
            assert np.all(t >= cfg.translation_low) and np.all(t <= cfg.translation_high)

    def test_corrupted_scene_flags(self, corrupted_scene):
        flags = corrupted_scene.outlier_flags
        assert flags.shape == (corrupted_scene.X.n, )
        assert np.sum(flags) >= int(0.1 * corrupted_scene.X.n)

    def test_without_ground_truth(self, clean_scene):
        stripped = clean_scene.withoutGroundTruth()
        assert stripped.T_star is None and stripped.y_star is None
        assert stripped.X is clean_scene.X

    def test_scene_seed(self):
        assert scene_seed(0, 1) == scene_seed(0, 1)
        assert scene_seed(0, 1) != scene_seed(0, 2)
        assert scene_seed(0, 1) != scene_seed(1, 1)

class TestCorruption:
    def test_occlusion_keeps_front_plane(self, camera):
        ticks = np.linspace(-0.1, 0.1, 5)
        xs, ys = np.meshgrid(ticks, ticks)
        front = np.stack([xs.ravel(), ys.ravel(), np.ones(25)])
        cloud = PointCloud(np.column_stack([front, 2 * front]))
        visible, indices = occlude(cloud, camera, depth_band=0.01, return_indices=True)
        assert indices.tolist() == list(range(25))
        assert np.array_equal(visible.points, front)

    def test_inject_outliers(self, rng):
        X = PointCloud(rng.normal(size=(3, 100)), rng.random((3, 100)))
        Y, flags = inject_outliers(X, 0.25, 2.0, seed=1)
        assert np.sum(flags) == 25
        assert np.array_equal(Y.points[:, ~flags], X.points[:, ~flags])
        assert np.array_equal(Y.features[:, ~flags], X.features[:, ~flags])
        same, none = inject_outliers(X, 0.0, 2.0, seed=1)
        assert same is X and not np.any(none)
        with pytest.raises(ValueError):
            inject_outliers(X, 1.0, 2.0, seed=1)

    def test_perturb_keypoints(self, rng):
        y = KeypointSet(rng.normal(size=(3, 8)))
        moved = perturb_keypoints(y, 0.4, 1.0, 2.0, seed=3)
        assert np.all(np.abs(moved.points - y.points) <= 0.4 * 2.0 / 2)
        assert not np.array_equal(moved.points, y.points)
        assert np.array_equal(perturb_keypoints(y, 0.4, 0.0, 2.0, seed=3).points,
                              y.points)
        with pytest.raises(ValueError):
            perturb_keypoints(y, 0.4, 1.5, 2.0, seed=3)

    def test_corrupt_mask(self, camera):
        grid = np.zeros(camera.shape, dtype=bool)
        grid[200:240, 300:340] = True
        M_star = BinaryMask(grid)

        grown = corrupt_mask(M_star, SceneConfig(blob_count=2, erosion_radius=0), seed=0)
        assert np.all(grown.grid[grid])
        assert grown.area > M_star.area

        shrunk = corrupt_mask(M_star, SceneConfig(blob_count=0, erosion_radius=2), seed=0)
        assert not np.any(shrunk.grid & ~grid)
        assert 0 < shrunk.area < M_star.area

        with pytest.raises(ValueError):
            corrupt_mask(BinaryMask.empty(camera), SceneConfig(), seed=0)

class TestBackProjection:
    def test_single_pixel(self, camera):
        depth = np.zeros(camera.shape)
        depth[250, 330] = 2.0
        mask = np.zeros(camera.shape, dtype=bool)
        mask[250, 330] = True
        mask[10, 10] = True
        X = back_project(depth, BinaryMask(mask), camera)
        assert X.n == 1
        assert np.allclose(X.points[:, 0], [0.04, 0.04, 2.0])

    def test_color_features(self, camera):
        depth = np.ones(camera.shape)
        mask = np.zeros(camera.shape, dtype=bool)
        mask[0, :3] = True
        color = np.zeros(camera.shape + (3, ))
        color[0, 1] = [0.1, 0.2, 0.3]
        X = back_project(depth, BinaryMask(mask), camera, color)
        assert X.features.shape == (3, 3)
        assert np.allclose(X.features[:, 1], [0.1, 0.2, 0.3])

    def test_empty_mask(self, camera):
        mask = np.zeros(camera.shape, dtype=bool)
        mask[5, 5] = True
        with pytest.raises(EmptyMask):
            back_project(np.zeros(camera.shape), BinaryMask(mask), camera)

class TestSceneConfig:
    def test_dict_round_trip(self):
        cfg = SceneConfig(outlier_rate=0.2, camera={"fx": 600.0})
        assert cfg.camera.fx == 600.0
        assert SceneConfig.fromDict(json.loads(json.dumps(cfg.toDict()))) == cfg

    @pytest.mark.parametrize("values", [{"outlier_rate": 1.0}, {"max_points": 0},
                                        {"translation_low": (0, 0, -1)},
                                        {"keypoint_noise_prob": 2.0},
                                        {"blob_radius": -1}])
    def test_invalid(self, values):
        with pytest.raises(ValueError):
            SceneConfig(**values)

    def test_clean(self):
        cfg = SceneConfig(gaussian_noise_std=0.01, outlier_rate=0.3).clean()
        assert (cfg.gaussian_noise_std, cfg.outlier_rate, cfg.blob_count,
                cfg.erosion_radius) == (0.0, 0.0, 0, 0)

class TestDataset:
    def test_round_trip(self, tmp_path, box_model, clean_scene, corrupted_scene):
        cfg = SceneConfig()
        scenes = [clean_scene, corrupted_scene]
        path = save_scene_dataset(tmp_path, scenes, box_model, cfg)
        assert path == tmp_path / "manifest.json"

        loaded, manifest = load_scene_dataset(tmp_path)
        assert manifest["model"]["source"] == box_model.source
        assert SceneConfig.fromDict(manifest["config"]) == cfg
        for original, back in zip(scenes, loaded):
            assert np.allclose(back.X.points, original.X.points, atol=1e-6)
            assert np.allclose(back.X.features, original.X.features, atol=1e-6)
            assert np.array_equal(back.M.grid, original.M.grid)
            assert np.array_equal(back.M_star.grid, original.M_star.grid)
            assert np.array_equal(back.T_star.asMatrix(), original.T_star.asMatrix())
            assert np.array_equal(back.outlier_flags, original.outlier_flags)
            assert back.seed == original.seed

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(SceneFormatError):
            load_scene_dataset(tmp_path)

    def test_missing_points_file(self, tmp_path, box_model, clean_scene):
        save_scene_dataset(tmp_path, [clean_scene], box_model, SceneConfig())
        (tmp_path / "scene_00000_points.f32").unlink()
        with pytest.raises(SceneFormatError):
            load_scene_dataset(tmp_path)
