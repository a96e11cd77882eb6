import math

import numpy as np
import pytest
import torch

from robustpose import Pose
from robustpose import PointCloud
from robustpose import KeypointSet
from robustpose import SceneConfig
from robustpose import TrainLog
from robustpose import TrainConfig
from robustpose import DetectorConfig
from robustpose import CorrectorConfig
from robustpose import CorrectionResult
from robustpose import CertificateConfig
from robustpose import CertificateResult
from robustpose import KeypointDetector
from robustpose import DimensionMismatch
from robustpose import SceneFormatError
from robustpose import detect
from robustpose import register
from robustpose import loss_sup
from robustpose import loss_self
from robustpose import grad_step
from robustpose import apply_pose
from robustpose import self_train
from robustpose import builtin_model
from robustpose import ensemble_loss
from robustpose import save_detector
from robustpose import load_detector
from robustpose import generate_scenes
from robustpose import ensemble_output
from robustpose import loss_sup_gradient
from robustpose import loss_self_gradient
from robustpose import evaluate_detectors
from robustpose import pretrain_supervised

from conftest import random_pose
from conftest import small_model

def pairwise(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((A.T[:, None, :] - B.T[None, :, :]) ** 2, axis=2))

def correction_for(pose: Pose, model) -> CorrectionResult:
    y = apply_pose(pose, model.keypoints.points)
    return CorrectionResult(np.zeros_like(y), KeypointSet(y), register(y, model.keypoints),
                            0.0, 0.0, 0, True)

def certificate(oc: bool) -> CertificateResult:
    return CertificateResult(oc, oc, 0.0, 1.0)

def finite_difference(f, y: np.ndarray, h: float=1e-6) -> np.ndarray:
    numeric = np.zeros_like(y)
    for i in range(y.shape[0]):
        for j in range(y.shape[1]):
            step = np.zeros_like(y)
            step[i, j] = h
            numeric[i, j] = (f(y + step) - f(y - step)) / (2 * h)
    return numeric

@pytest.fixture
def detector(box_model):
    return KeypointDetector(box_model, DetectorConfig(hidden=16, k=16), seed=1)

class TestDetector:
    def test_detection_shape(self, detector, clean_scene):
        y = detect(detector, clean_scene.X)
        assert y.points.shape == (3, 8)

    def test_translation_equivariance(self, detector, clean_scene):
        shift = np.array([0.5, -0.2, 1.0])
        moved = clean_scene.X.withPoints(clean_scene.X.points + shift[:, None])
        assert np.allclose(detect(detector, moved).points,
                           detect(detector, clean_scene.X).points + shift[:, None],
                           atol=1e-9)

    def test_descriptor_skips_rejected_points(self, detector, clean_scene, box_model, rng):
        clean = clean_scene.X.points
        far = clean.mean(axis=1)[:, None] + rng.uniform(2, 3, size=(3, 40))
        descriptor = detector.describe(PointCloud(np.column_stack([clean, far])))

        local = descriptor.vector.reshape(-1, 3).T
        sampled = (descriptor.frame @ local * box_model.diameter +
                   descriptor.centroid[:, None])
        assert pairwise(sampled, clean).min(axis=1).max() < 1e-9

    def test_principal_frame(self, box_model, clean_scene):
        detector = KeypointDetector(box_model, DetectorConfig(hidden=8, k=8,
                                                              frame="principal"))
        descriptor = detector.describe(clean_scene.X)
        assert np.allclose(descriptor.frame.T @ descriptor.frame, np.eye(3), atol=1e-12)
        assert np.linalg.det(descriptor.frame) == pytest.approx(1)
        assert detect(detector, clean_scene.X).points.shape == (3, 8)

    def test_small_cloud_is_tiled(self, detector, rng):
        descriptor = detector.describe(PointCloud(rng.normal(0, 0.05, size=(3, 5))))
        assert descriptor.vector.shape == (3 * 16, )

    def test_seeded_initialization(self, box_model):
        a = KeypointDetector(box_model, DetectorConfig(hidden=8, k=8), seed=3)
        b = KeypointDetector(box_model, DetectorConfig(hidden=8, k=8), seed=3)
        c = KeypointDetector(box_model, DetectorConfig(hidden=8, k=8), seed=4)
        assert np.array_equal(a.flatParameters(), b.flatParameters())
        assert not np.array_equal(a.flatParameters(), c.flatParameters())

    def test_copy_is_independent(self, detector):
        before = detector.flatParameters()
        twin = detector.copy()
        twin.setFlatParameters(np.zeros_like(before))
        assert np.array_equal(detector.flatParameters(), before)
        assert twin.model is detector.model

    def test_flat_parameter_size(self, detector):
        with pytest.raises(DimensionMismatch):
            detector.setFlatParameters(np.zeros(3))

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            DetectorConfig(frame="world")
        with pytest.raises(ValueError):
            DetectorConfig(k=0)

    def test_save_and_load(self, tmp_path, detector, box_model):
        save_detector(detector, tmp_path / "detector_1")
        assert (tmp_path / "detector_1.json").is_file()
        assert (tmp_path / "detector_1.f32").is_file()

        loaded = load_detector(tmp_path / "detector_1", box_model)
        expected = detector.flatParameters().astype(np.float32).astype(float)
        assert np.array_equal(loaded.flatParameters(), expected)
        assert loaded.cfg == detector.cfg

        with pytest.raises(SceneFormatError):
            load_detector(tmp_path / "detector_1", builtin_model("cylinder", m=100))

class TestGradStep:
    def test_momentum_and_weight_decay(self):
        p = torch.tensor([1.0], dtype=torch.float64)
        v = torch.zeros(1, dtype=torch.float64)
        g = torch.tensor([0.5], dtype=torch.float64)
        cfg = TrainConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.1)

        grad_step([p], [g], cfg, [v])
        assert float(p) == pytest.approx(0.94)
        assert float(v) == pytest.approx(0.6)
        grad_step([p], [g], cfg, [v])
        assert float(p) == pytest.approx(0.8266)

    def test_mismatch(self):
        p = torch.zeros(2, dtype=torch.float64)
        with pytest.raises(DimensionMismatch):
            grad_step([p], [torch.zeros(3, dtype=torch.float64)], TrainConfig(),
                      [torch.zeros(2, dtype=torch.float64)])
        with pytest.raises(DimensionMismatch):
            grad_step([p], [], TrainConfig(), [torch.zeros(2, dtype=torch.float64)])

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(momentum=1.0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)
        with pytest.raises(ValueError):
            TrainConfig(workers=0)

class TestLosses:
    def test_self_loss_oracle(self, rng):
        model = small_model(rng)
        T = random_pose(rng, 0.1)
        X = apply_pose(T, model.dense_points[:, :30]) + rng.normal(0, 0.02, size=(3, 30))
        c_bar = 0.03
        distances = pairwise(X, apply_pose(T, model.dense_points)).min(axis=1)
        expected = np.mean(np.minimum(distances, c_bar) ** 2)
        assert loss_self(PointCloud(X), T, model, c_bar) == pytest.approx(expected)

    def test_sup_loss_oracle(self, rng):
        model = small_model(rng)
        A = random_pose(rng, 0.1)
        B = random_pose(rng, 0.1)
        d = pairwise(apply_pose(A, model.dense_points), apply_pose(B, model.dense_points))
        expected = np.mean(d.min(axis=1) ** 2) + np.mean(d.min(axis=0) ** 2)
        assert loss_sup(A, B, model) == pytest.approx(expected)
        assert loss_sup(A, A, model) == 0

    @pytest.mark.parametrize("seed", range(50))
    def test_self_loss_gradient(self, seed):
        rng = np.random.default_rng(seed)
        model = small_model(rng)
        b = model.keypoints.points
        T = random_pose(rng, 0.1)
        X = np.column_stack([apply_pose(T, model.dense_points[:, :40]) +
                             rng.normal(0, 0.005, size=(3, 40)),
                             rng.uniform(-1, 1, size=(3, 5))])
        y = apply_pose(T, b) + rng.normal(0, 0.01, size=b.shape)
        c_bar = 0.05

        value, gradient = loss_self_gradient(PointCloud(X), y, model, c_bar)
        assert value == pytest.approx(loss_self(PointCloud(X), register(y, b), model, c_bar))

        posed = apply_pose(register(y, b), model.dense_points)
        distances = pairwise(X, posed)
        indices = distances.argmin(axis=1)
        inliers = distances.min(axis=1) < c_bar

        def frozen(y_prime):
            moved = apply_pose(register(y_prime, b), model.dense_points[:, indices])
            residuals = np.sum((X - moved) ** 2, axis=0)
            return np.sum(residuals[inliers]) / X.shape[1]

        numeric = finite_difference(frozen, y)
        assert np.allclose(gradient, numeric, rtol=1e-4,
                           atol=1e-6 * np.abs(numeric).max())

    @pytest.mark.parametrize("seed", range(50))
    def test_sup_loss_gradient(self, seed):
        rng = np.random.default_rng(seed)
        model = small_model(rng)
        b = model.keypoints.points
        T_prime = random_pose(rng, 0.1)
        y = apply_pose(T_prime, b) + rng.normal(0, 0.01, size=b.shape)
        target = apply_pose(T_prime, model.dense_points)

        value, gradient = loss_sup_gradient(y, T_prime, model)
        assert value == pytest.approx(loss_sup(register(y, b), T_prime, model))

        d = pairwise(apply_pose(register(y, b), model.dense_points), target)
        forward = d.argmin(axis=1)
        backward = d.argmin(axis=0)

        def frozen(y_prime):
            pose = register(y_prime, b)
            first = np.sum((target[:, forward] - apply_pose(pose, model.dense_points)) ** 2)
            second = np.sum((target - apply_pose(pose, model.dense_points[:, backward])) ** 2)
            return (first + second) / model.m

        numeric = finite_difference(frozen, y)
        assert np.allclose(gradient, numeric, rtol=1e-4,
                           atol=1e-6 * np.abs(numeric).max())

class TestEnsembleLoss:
    def _setup(self, rng):
        model = small_model(rng)
        T0 = random_pose(rng, 0.1)
        T1 = Pose(T0.rotation, T0.translation + [0.01, 0.0, 0.0])
        X = PointCloud(apply_pose(T0, model.dense_points) +
                       rng.normal(0, 0.002, size=(3, model.m)))
        return model, X, [correction_for(T0, model), correction_for(T1, model)]

    def test_nothing_certified(self, rng):
        model, X, corrections = self._setup(rng)
        loss = ensemble_loss([(certificate(False), c) for c in corrections], X, model, 0.05)
        assert loss.value == 0
        assert loss.contributed == [False, False]
        assert all(not np.any(g) for g in loss.gradients)

    def test_routing(self, rng):
        model, X, corrections = self._setup(rng)
        loss = ensemble_loss([(certificate(True), corrections[0]),
                              (certificate(False), corrections[1])], X, model, 0.05)
        y0 = corrections[0].corrected_keypoints.points
        y1 = corrections[1].corrected_keypoints.points
        self_value, self_gradient = loss_self_gradient(X, y0, model, 0.05)
        sup_value, sup_gradient = loss_sup_gradient(y1, corrections[0].corrected_pose,
                                                    model)

        assert loss.contributed == [True, True]
        assert loss.self_loss == pytest.approx(self_value)
        assert loss.sup_loss == pytest.approx(sup_value)
        assert loss.value == pytest.approx(self_value + sup_value)
        assert np.allclose(loss.gradients[0], self_gradient)
        assert np.allclose(loss.gradients[1], sup_gradient)

    def test_both_certified(self, rng):
        model, X, corrections = self._setup(rng)
        loss = ensemble_loss([(certificate(True), c) for c in corrections], X, model, 0.05)
        T0 = corrections[0].corrected_pose
        T1 = corrections[1].corrected_pose
        assert loss.sup_loss == pytest.approx(loss_sup(T1, T0, model) +
                                              loss_sup(T0, T1, model))
        assert loss.self_loss == pytest.approx(loss_self(X, T0, model, 0.05) +
                                               loss_self(X, T1, model, 0.05))

    def test_ensemble_output(self, rng):
        model, _, corrections = self._setup(rng)
        corrections = corrections + [corrections[0]]
        index, pose = ensemble_output(corrections, [certificate(False), certificate(True),
                                                    certificate(True)])
        assert index == 1 and pose is corrections[1].corrected_pose
        index, pose = ensemble_output(corrections, [certificate(False)] * 3)
        assert index == 0 and pose is corrections[0].corrected_pose

class TestTrainLog:
    def test_rows(self, tmp_path):
        log = TrainLog(2)
        log.append(0, [0.5, 1.0], 0.1, 0.2, 0.3)
        assert log.header() == ["iteration", "oc_frac_model_1", "oc_frac_model_2",
                                "self_loss", "sup_loss", "eval_adds"]
        assert list(log.rows()) == [[0, 0.5, 1.0, 0.1, 0.2, 0.3]]
        assert log.meanOc(0) == 0.75
        log.save(tmp_path / "log.csv")
        assert (tmp_path / "log.csv").read_text().startswith("iteration,")

    def test_invalid_records(self):
        log = TrainLog(2)
        with pytest.raises(DimensionMismatch):
            log.append(0, [0.5], 0, 0, 0)
        with pytest.raises(ValueError):
            log.append(0, [0.5, 1.5], 0, 0, 0)

class TestTraining:
    @pytest.fixture(scope="class")
    def scenes(self, box_model):
        return generate_scenes(box_model, SceneConfig(gaussian_noise_std=0.002), 4, seed=1)

    def test_impossible_certificates_freeze_training(self, box_model, detector, scenes):
        corrector_cfg = CorrectorConfig.forModel(box_model, max_iters=5)
        cert_cfg = CertificateConfig(eps_3d=1e-12)
        before = detector.flatParameters()
        trained, log = self_train([detector, detector.copy()], scenes, box_model,
                                  corrector_cfg, cert_cfg,
                                  TrainConfig(iterations=2, batch_size=2),
                                  SceneConfig().camera)
        assert len(log) == 3
        assert all(log.meanOc(i) == 0 for i in range(3))
        for trained_copy in trained:
            assert np.array_equal(trained_copy.flatParameters(), before)
            assert all(not torch.any(v) for v in trained_copy.velocity)

    def test_zero_iterations(self, box_model, detector, scenes):
        trained, log = self_train([detector], scenes, box_model,
                                  CorrectorConfig.forModel(box_model, max_iters=5),
                                  CertificateConfig.forModel(box_model),
                                  TrainConfig(iterations=0, batch_size=2),
                                  SceneConfig().camera)
        assert len(log) == 1
        assert log.records[0]["iteration"] == 0
        assert np.array_equal(trained[0].flatParameters(), detector.flatParameters())
        assert trained[0] is not detector

    def test_certified_outputs_update_every_model(self, box_model, detector, scenes,
                                                  monkeypatch):
        monkeypatch.setattr("robustpose.ensemble.observable_correctness",
                            lambda *args: certificate(True))
        other = KeypointDetector(box_model, detector.cfg, seed=2)
        trained, log = self_train([detector, other], scenes, box_model,
                                  CorrectorConfig.forModel(box_model, max_iters=5),
                                  CertificateConfig.forModel(box_model),
                                  TrainConfig(iterations=1, batch_size=4),
                                  SceneConfig().camera)
        assert log.records[1]["oc_fractions"] == [1.0, 1.0]
        for before, after in zip((detector, other), trained):
            assert not np.array_equal(after.flatParameters(), before.flatParameters())
            assert any(torch.any(v) for v in after.velocity)

    def test_fixed_seeds_are_reproducible(self, box_model, detector, scenes, monkeypatch):
        monkeypatch.setattr("robustpose.ensemble.observable_correctness",
                            lambda *args: certificate(True))
        runs = []
        for workers in (1, 1, 3):
            runs.append(self_train([detector, KeypointDetector(box_model, detector.cfg, 2)],
                                   scenes, box_model,
                                   CorrectorConfig.forModel(box_model, max_iters=5),
                                   CertificateConfig.forModel(box_model),
                                   TrainConfig(iterations=3, batch_size=2, seed=8,
                                               workers=workers),
                                   SceneConfig().camera))
        (first, first_log), *others = runs
        for trained, log in others:
            assert log.records == first_log.records
            for a, b in zip(first, trained):
                assert np.array_equal(a.flatParameters(), b.flatParameters())

    def test_empty_inputs(self, box_model, detector, scenes):
        args = (box_model, CorrectorConfig.forModel(box_model), CertificateConfig(),
                TrainConfig(), SceneConfig().camera)
        with pytest.raises(ValueError):
            self_train([], scenes, *args)
        with pytest.raises(ValueError):
            self_train([detector], [], *args)
        with pytest.raises(ValueError):
            pretrain_supervised(detector, [], TrainConfig())
        with pytest.raises(ValueError):
            pretrain_supervised(detector, [scenes[0].withoutGroundTruth()], TrainConfig())

    def test_pretraining_reduces_keypoint_error(self, box_model, detector):
        scenes = generate_scenes(box_model, SceneConfig().clean(), 20, seed=2)

        def error(d):
            return np.mean([np.sum((detect(d, s.X).points - s.y_star.points) ** 2)
                            for s in scenes])

        trained = pretrain_supervised(detector, scenes,
                                      TrainConfig(learning_rate=0.01, epochs=30,
                                                  batch_size=5))
        assert error(trained) < error(detector)
        assert trained is not detector

    def test_evaluate_detectors(self, box_model, detector, scenes):
        rows = evaluate_detectors([detector, detector.copy()], scenes[:2], box_model,
                                  CorrectorConfig.forModel(box_model, max_iters=5),
                                  CertificateConfig.forModel(box_model),
                                  SceneConfig().camera)
        assert [r["name"] for r in rows] == ["model_1", "model_2", "ensemble"]
        assert math.isnan(rows[-1]["detector"])
        for row in rows:
            assert 0 <= row["corrected"] <= 1
            assert 0 <= row["oc_fraction"] <= 1
            assert row["mean_adds"] >= 0
