import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from robustpose import Pose
from robustpose import PointCloud
from robustpose import KeypointSet
from robustpose import InvalidPose
from robustpose import DimensionMismatch
from robustpose import DegenerateConfiguration
from robustpose import tls
from robustpose import register
from robustpose import apply_pose
from robustpose import percentile
from robustpose import add_metric
from robustpose import adds_metric
from robustpose import adds_auc
from robustpose import compute_diameter
from robustpose import nearest_distances
from robustpose import rotation_error_deg
from robustpose import translation_error
from robustpose import aligned_residual_loss
from robustpose import adds_threshold_accuracy

from conftest import random_pose
from conftest import small_model

class TestPose:
    def test_rejects_reflection(self):
        with pytest.raises(InvalidPose):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_rejects_scaled_rotation(self):
        with pytest.raises(InvalidPose):
            Pose(1.001 * np.eye(3), np.zeros(3))

    def test_rejects_bad_shape(self):
        with pytest.raises(InvalidPose):
            Pose(np.eye(3), np.zeros(4))

    def test_inverse_composes_to_identity(self, rng):
        T = random_pose(rng)
        I = T.inverse() @ T
        assert np.allclose(I.rotation, np.eye(3), atol=1e-12)
        assert np.allclose(I.translation, 0, atol=1e-12)

    def test_composition_order(self, rng):
        A = random_pose(rng)
        B = random_pose(rng)
        x = rng.normal(size=(3, 5))
        assert np.allclose(apply_pose(A @ B, x), apply_pose(A, apply_pose(B, x)))

    def test_matrix_round_trip(self, rng):
        T = random_pose(rng)
        back = Pose.fromMatrix(T.asMatrix())
        assert np.array_equal(back.rotation, T.rotation)
        assert np.array_equal(back.translation, T.translation)

    def test_rounded_matrix_needs_projection(self, rng):
        rounded = np.round(random_pose(rng).asMatrix(), 4)
        with pytest.raises(InvalidPose):
            Pose.fromMatrix(rounded)
        T = Pose.fromMatrix(rounded, project=True)
        assert np.allclose(T.rotation, rounded[:3, :3], atol=1e-3)

    def test_arrays_are_read_only(self):
        T = Pose.identity()
        with pytest.raises(ValueError):
            T.translation[0] = 1

class TestContainers:
    def test_point_cloud_rejects_nan(self):
        with pytest.raises(ValueError):
            PointCloud(np.array([[0.0], [np.nan], [1.0]]))

    def test_point_cloud_feature_count(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((3, 4)), np.zeros((3, 5)))

    def test_keypoints_need_three(self):
        with pytest.raises(ValueError):
            KeypointSet(np.zeros((3, 2)))

    def test_select_keeps_features(self, rng):
        X = PointCloud(rng.normal(size=(3, 6)), rng.random((3, 6)))
        sub = X.select([4, 1])
        assert np.array_equal(sub.points, X.points[:, [4, 1]])
        assert np.array_equal(sub.features, X.features[:, [4, 1]])

class TestRegistration:
    def test_noise_free_round_trips(self, rng):
        for _ in range(200):
            N = int(rng.integers(3, 12))
            b = rng.normal(size=(3, N))
            T = random_pose(rng)
            estimate = register(apply_pose(T, b), b)
            assert np.linalg.norm(estimate.rotation - T.rotation) < 1e-9
            assert np.linalg.norm(estimate.translation - T.translation) < 1e-9

    def test_planar_keypoints(self, rng):
        b = np.vstack([rng.normal(size=(2, 5)), np.zeros((1, 5))])
        T = random_pose(rng)
        estimate = register(apply_pose(T, b), b)
        assert np.allclose(estimate.rotation, T.rotation, atol=1e-9)

    def test_collinear_keypoints(self):
        b = np.outer([1.0, 2.0, 3.0], [0.0, 1.0, 2.0, 3.0])
        with pytest.raises(DegenerateConfiguration) as info:
            register(b, b)
        assert info.value.rank == 1

    def test_size_mismatch(self, rng):
        with pytest.raises(DimensionMismatch):
            register(rng.normal(size=(3, 4)), rng.normal(size=(3, 5)))

    def test_least_squares_optimality(self, rng):
        b = rng.normal(size=(3, 8))
        y = apply_pose(random_pose(rng), b) + rng.normal(0, 0.05, size=(3, 8))
        best = np.sum((y - apply_pose(register(y, b), b)) ** 2)
        for _ in range(20):
            delta = Pose(Rotation.from_rotvec(rng.normal(0, 0.01, 3)).as_matrix(),
                         rng.normal(0, 0.01, 3))
            other = delta @ register(y, b)
            assert np.sum((y - apply_pose(other, b)) ** 2) >= best - 1e-12

class TestAlignedResidualLoss:
    def _value(self, y, b, sources, targets, weights):
        T = register(y, b)
        return np.sum(weights * np.sum((targets - apply_pose(T, sources)) ** 2, axis=0))

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(20):
            N = 6
            b = rng.normal(size=(3, N))
            y = apply_pose(random_pose(rng), b) + rng.normal(0, 0.1, size=(3, N))
            sources = rng.normal(size=(3, 15))
            targets = rng.normal(size=(3, 15))
            weights = rng.random(15)

            value, gradient = aligned_residual_loss(y, b, sources, targets, weights)
            assert value == pytest.approx(self._value(y, b, sources, targets, weights),
                                          rel=1e-12)

            h = 1e-6
            numeric = np.zeros_like(y)
            for i in range(3):
                for j in range(N):
                    step = np.zeros_like(y)
                    step[i, j] = h
                    numeric[i, j] = (self._value(y + step, b, sources, targets, weights) -
                                     self._value(y - step, b, sources, targets, weights)) / (2 * h)
            scale = np.abs(numeric).max()
            assert np.allclose(gradient, numeric, rtol=1e-4, atol=1e-6 * scale)

class TestScores:
    def test_tls(self):
        assert tls(0.05, 0.1) == pytest.approx(0.0025)
        assert tls(0.5, 0.1) == pytest.approx(0.01)
        assert np.allclose(tls(np.array([0.0, 0.1, 1.0]), 0.1), [0.0, 0.01, 0.01])
        with pytest.raises(ValueError):
            tls(1.0, 0.0)

    @pytest.mark.parametrize("n,m", [(1, 1), (40, 70), (300, 500)])
    def test_nearest_distances_oracle(self, rng, n, m):
        X = rng.normal(size=(3, n))
        Y = rng.normal(size=(3, m))
        expected = np.array([min(np.linalg.norm(X[:, i] - Y[:, j]) for j in range(m))
                             for i in range(n)])
        assert np.allclose(nearest_distances(X, Y), expected, atol=1e-9)

    def test_kd_tree_backend_agrees(self, rng):
        X = rng.normal(size=(3, 1500))
        Y = rng.normal(size=(3, 1000))
        distances, indices = nearest_distances(X, Y, return_indices=True)
        assert X.shape[1] * Y.shape[1] > 10 ** 6
        squared = np.sum((X.T[:, None, :] - Y.T[None, :, :]) ** 2, axis=2)
        assert np.allclose(distances, np.sqrt(squared.min(axis=1)), atol=1e-12)
        assert np.array_equal(indices, np.argmin(squared, axis=1))

    def test_percentile_nearest_rank(self):
        s = np.arange(10, 0, -1, dtype=float)
        assert percentile(s, 0.9) == 9
        assert percentile(s, 1.0) == 10
        assert percentile(s, 0.05) == 1
        assert percentile([3.0], 0.5) == 3

    def test_percentile_errors(self):
        with pytest.raises(ValueError):
            percentile([], 0.9)
        with pytest.raises(ValueError):
            percentile([1.0], 0.0)

class TestMetrics:
    def test_diameter_of_cube(self, rng):
        corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)],
                           dtype=float).T
        inside = rng.random((3, 200))
        assert compute_diameter(np.column_stack([corners, inside])) == pytest.approx(
            math.sqrt(3), abs=1e-12)

    def test_adds_oracle(self, rng):
        for _ in range(10):
            model = small_model(rng)
            A = random_pose(rng, 0.05)
            B = random_pose(rng, 0.05)
            PA = apply_pose(A, model.dense_points)
            PB = apply_pose(B, model.dense_points)
            expected = np.mean([min(np.linalg.norm(PA[:, i] - PB[:, j])
                                    for j in range(model.m)) for i in range(model.m)])
            assert adds_metric(A, B, model) == pytest.approx(expected, abs=1e-9)

    def test_adds_bounded_by_add(self, rng):
        model = small_model(rng)
        for _ in range(10):
            A = random_pose(rng, 0.05)
            B = random_pose(rng, 0.05)
            assert adds_metric(A, B, model) <= add_metric(A, B, model) + 1e-12

    def test_identical_poses(self, rng, box_model):
        T = random_pose(rng)
        assert adds_metric(T, T, box_model) == 0
        assert add_metric(T, T, box_model) == 0

    def test_auc(self):
        assert adds_auc([0.0, 0.0], 0.1) == pytest.approx(1.0)
        assert adds_auc([0.2, 0.3], 0.1) == pytest.approx(0.0)
        assert adds_auc([0.05], 0.1) == pytest.approx(0.5, abs=2e-3)
        with pytest.raises(ValueError):
            adds_auc([], 0.1)

    def test_threshold_accuracy_is_strict(self):
        assert adds_threshold_accuracy([0.1, 0.2, 0.3], 0.2) == pytest.approx(1 / 3)

    def test_pose_errors(self):
        T = Pose(Rotation.from_euler("z", 90, degrees=True).as_matrix(), [1.0, 2.0, 2.0])
        assert rotation_error_deg(T, Pose.identity()) == pytest.approx(90)
        assert translation_error(T, Pose.identity()) == pytest.approx(3)
