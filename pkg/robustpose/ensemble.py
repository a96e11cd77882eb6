"""Keypoint detectors and their certificate-gated ensemble self-training.

The detectors are small regressors from a translation invariant descriptor
of the point cloud to keypoint offsets around its robust centroid. They are
pre-trained with ground-truth keypoints on simulated scenes and then
trained on unlabeled scenes of a shifted domain, where only observably
correct corrected outputs produce a loss:

```
L = sum_k oc_k [loss_self(X, T_k) + sum_{l != k} loss_sup(T_l, T_k)]
```

`loss_self` trains model k, each `loss_sup` term trains model l. The
correction is treated as a constant while back-propagating, so the gradient
with respect to a detection is the gradient with respect to the corrected
keypoints.

Examples
--------
>>> detectors = [KeypointDetector(model, DetectorConfig(), seed=s) for s in (1, 2)]
>>> detectors = [pretrain_supervised(d, sim_scenes, train_cfg) for d in detectors]
>>> detectors, log = self_train(detectors, real_scenes, model, corrector_cfg,
...                             cert_cfg, train_cfg, camera)
"""

import os
import copy
import typing
import logging
import pathlib
import functools
import dataclasses
import concurrent.futures

import numpy as np
import torch

from .errors import DimensionMismatch
from .errors import SceneFormatError
from .formats import read_f32
from .formats import write_f32
from .formats import read_json
from .formats import write_json
from .formats import write_csv
from .geometry import Pose
from .geometry import CadModel
from .geometry import PointCloud
from .geometry import KeypointSet
from .geometry import tls
from .geometry import register
from .geometry import as_points
from .geometry import adds_metric
from .geometry import apply_pose
from .geometry import nearest_distances
from .geometry import aligned_residual_loss
from .geometry import adds_threshold_accuracy
from .corrector import CorrectorConfig
from .corrector import CorrectionResult
from .corrector import no_correction
from .corrector import solve_correction
from .certificates import CameraIntrinsics
from .certificates import CertificateConfig
from .certificates import CertificateResult
from .certificates import observable_correctness
from .robust_points import GncConfig
from .robust_points import fps
from .robust_points import robust_centroid
from .synth import SceneSample

__all__ = [
    "DetectorConfig",
    "TrainConfig",
    "TrainLog",
    "Descriptor",
    "KeypointDetector",
    "EnsembleLoss",
    "detect",
    "loss_self",
    "loss_self_gradient",
    "loss_sup",
    "loss_sup_gradient",
    "ensemble_loss",
    "grad_step",
    "pretrain_supervised",
    "self_train",
    "ensemble_output",
    "evaluate_detectors",
    "save_detector",
    "load_detector",
]

logger = logging.getLogger(__name__)

@dataclasses.dataclass
class DetectorConfig:
    """The detector architecture.

    `centroid_clamp` is the TLS clamp of the descriptor centroid as a
    fraction of the object diameter. With `frame = "principal"` the
    descriptor is expressed in the robust principal axes of the cloud.
    """

    hidden: int = 64
    k: int = 64
    centroid_clamp: float = 0.5
    frame: str = "camera"

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.hidden < 1 or self.k < 1:
            raise ValueError("hidden and k must be positive, got {} and {}.".format(
                self.hidden, self.k))
        if not self.centroid_clamp > 0:
            raise ValueError("The centroid clamp must be positive.")
        if self.frame not in ("camera", "principal"):
            raise ValueError("The frame must be 'camera' or 'principal', got " +
                             "'{}'.".format(self.frame))

    def toDict(self) -> dict:
        return dataclasses.asdict(self)

@dataclasses.dataclass
class TrainConfig:
    """The SGD settings.

    `epochs` counts passes over the training scenes in pre-training,
    `iterations` counts batches in self-training. `workers` threads run the
    correction and certificates of a batch in self-training.
    """

    learning_rate: float = 2e-2
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 20
    epochs: int = 20
    iterations: int = 300
    seed: int = 0
    log_every: int = 10
    workers: int = 1

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Check the values.

        Raises
        ------
        ValueError
            When a value is out of its range
        """
        if not self.learning_rate > 0:
            raise ValueError("The learning rate must be positive, got {}.".format(
                self.learning_rate))
        if not 0 <= self.momentum < 1:
            raise ValueError("The momentum must be in [0, 1), got {}.".format(
                self.momentum))
        if self.weight_decay < 0:
            raise ValueError("The weight decay must not be negative.")
        if self.batch_size < 1:
            raise ValueError("The batch size must be positive.")
        if self.epochs < 0 or self.iterations < 0:
            raise ValueError("epochs and iterations must not be negative.")
        if self.log_every < 1:
            raise ValueError("log_every must be positive.")
        if self.workers < 1:
            raise ValueError("workers must be positive, got {}.".format(self.workers))

    def toDict(self) -> dict:
        return dataclasses.asdict(self)

class TrainLog:
    """The per-iteration record of a self-training run.

    Iteration 0 is the evaluation before the first update.
    """

    def __init__(self, model_count: int) -> None:
        self.model_count = model_count
        self.records = []

    def append(self, iteration: int, oc_fractions: typing.Sequence[float],
               self_loss: float, sup_loss: float, eval_adds: float) -> None:
        oc_fractions = [float(v) for v in oc_fractions]
        if len(oc_fractions) != self.model_count:
            raise DimensionMismatch("One oc fraction per model is needed",
                                    self.model_count, len(oc_fractions))
        if any(not 0 <= v <= 1 for v in oc_fractions):
            raise ValueError("oc fractions must be in [0, 1], got {}.".format(
                oc_fractions))
        self.records.append({"iteration": int(iteration),
                             "oc_fractions": oc_fractions,
                             "self_loss": float(self_loss),
                             "sup_loss": float(sup_loss),
                             "eval_adds": float(eval_adds)})

    def __len__(self) -> int:
        return len(self.records)

    def header(self) -> typing.List[str]:
        return (["iteration"] +
                ["oc_frac_model_{}".format(k + 1) for k in range(self.model_count)] +
                ["self_loss", "sup_loss", "eval_adds"])

    def rows(self) -> typing.Iterator[list]:
        for record in self.records:
            yield ([record["iteration"]] + record["oc_fractions"] +
                   [record["self_loss"], record["sup_loss"], record["eval_adds"]])

    def meanOc(self, index: int) -> float:
        """The oc fraction of record `index` averaged over the models."""
        return float(np.mean(self.records[index]["oc_fractions"]))

    def save(self, path: typing.Union[str, os.PathLike]) -> None:
        write_csv(path, self.header(), self.rows())

@dataclasses.dataclass(frozen=True, eq=False)
class Descriptor:
    centroid: np.ndarray
    frame: np.ndarray
    vector: np.ndarray

def _principal_frame(centered: np.ndarray, weights: np.ndarray) -> np.ndarray:
    if np.sum(weights) <= 0:
        weights = np.ones_like(weights)
    covariance = (centered * weights) @ centered.T
    _, vectors = np.linalg.eigh(covariance)
    axes = vectors[:, ::-1].copy()

    # eigenvector signs are arbitrary, fix them by the skew of the cloud
    for i in range(2):
        if np.sum(weights * (axes[:, i] @ centered) ** 3) < 0:
            axes[:, i] = -axes[:, i]
    axes[:, 2] = np.cross(axes[:, 0], axes[:, 1])
    return axes

class KeypointDetector:
    """A keypoint regressor for one object model.

    The descriptor of a cloud is the k points of a farthest point sample
    over the points the robust centroid keeps (GNC weight above 0.5),
    started at the kept point farthest from the centroid and tiled when
    fewer than k points are kept. The points are taken relative to the
    robust centroid, in units of the model diameter. The network maps it
    to 3N offsets which are added to the centroid, so detections move with
    the cloud.

    Parameters
    ----------
    model : CadModel
        The object whose keypoints are detected
    cfg : DetectorConfig
        The architecture
    seed : int, optional
        The initialization seed, default: 0
    """

    def __init__(self, model: CadModel, cfg: typing.Optional[DetectorConfig]=None,
                 seed: typing.Optional[int]=0) -> None:
        if cfg is None:
            cfg = DetectorConfig()
        self.model = model
        self.cfg = cfg
        self.seed = seed
        self.gnc = GncConfig(c_bar_centroid=cfg.centroid_clamp * model.diameter)

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.network = torch.nn.Sequential(
                torch.nn.Linear(self.descriptor_size, cfg.hidden),
                torch.nn.ReLU(),
                torch.nn.Linear(cfg.hidden, self.output_size)).double()
        self.velocity = [torch.zeros_like(p) for p in self.network.parameters()]

    @property
    def model_id(self) -> str:
        return self.model.model_id

    @property
    def descriptor_size(self) -> int:
        return 3 * self.cfg.k

    @property
    def output_size(self) -> int:
        return 3 * self.model.keypoints.N

    def parameters(self) -> typing.List[torch.Tensor]:
        return list(self.network.parameters())

    def copy(self) -> "KeypointDetector":
        """Get an independent copy, the momentum buffer included."""
        return copy.deepcopy(self, {id(self.model): self.model})

    def flatParameters(self) -> np.ndarray:
        return np.concatenate([p.detach().numpy().reshape(-1)
                               for p in self.parameters()])

    def setFlatParameters(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float).reshape(-1)
        expected = sum(p.numel() for p in self.parameters())
        if values.size != expected:
            raise DimensionMismatch("The parameter vector does not fit the " +
                                    "detector", expected, values.size)
        offset = 0
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.from_numpy(values[offset:offset + p.numel()]).view_as(p))
                offset += p.numel()

    def describe(self, X: PointCloud) -> Descriptor:
        points = as_points(X)
        centroid, weights = robust_centroid(points, self.gnc)
        centered = points - centroid[:, None]

        if self.cfg.frame == "principal":
            frame = _principal_frame(centered, weights)
        else:
            frame = np.eye(3)

        # sample the points the centroid kept, all of them if it kept none
        kept = np.flatnonzero(weights > 0.5)
        if kept.size == 0:
            kept = np.arange(points.shape[1])
        candidates = centered[:, kept]

        start = int(np.argmax(np.sum(candidates ** 2, axis=0)))
        count = min(self.cfg.k, kept.size)
        _, order = fps(PointCloud(candidates), count, seed=0, start_index=start,
                       return_indices=True)
        order = np.resize(kept[order], self.cfg.k)

        local = frame.T @ centered[:, order] / self.model.diameter
        return Descriptor(centroid, frame, local.T.reshape(-1))

    def forward(self, descriptors: typing.Sequence[Descriptor]) -> torch.Tensor:
        """Get the B x 3 x N detections of a batch as a differentiable tensor."""
        inputs = torch.from_numpy(np.stack([d.vector for d in descriptors]))
        offsets = self.network(inputs).view(len(descriptors), 3, -1)
        frames = torch.from_numpy(np.stack([d.frame for d in descriptors]))
        centroids = torch.from_numpy(np.stack([d.centroid for d in descriptors]))
        return centroids[:, :, None] + self.model.diameter * (frames @ offsets)

    def step(self, cfg: TrainConfig) -> None:
        """Apply one SGD step with the accumulated gradients, then clear them."""
        gradients = [p.grad if p.grad is not None else torch.zeros_like(p)
                     for p in self.parameters()]
        grad_step(self.parameters(), gradients, cfg, self.velocity)
        self.network.zero_grad(set_to_none=True)

def detect(detector: KeypointDetector, X: PointCloud) -> KeypointSet:
    """Detect the keypoints in the cloud `X`."""
    with torch.no_grad():
        detections = detector.forward([detector.describe(X)])
    return KeypointSet(detections[0].numpy())

def loss_self(X: PointCloud, T_hat: Pose, model: CadModel, c_bar: float) -> float:
    """The mean truncated squared distance of `X` to the model posed at `T_hat`."""
    distances = nearest_distances(X, apply_pose(T_hat, model.dense_points))
    return float(np.mean(tls(distances, c_bar)))

def loss_self_gradient(X: PointCloud, y_hat: np.ndarray, model: CadModel,
                       c_bar: float) -> typing.Tuple[float, np.ndarray]:
    """Evaluate `loss_self` at `register(y_hat, b)` and its gradient with
    respect to `y_hat`, with frozen closest points.

    Clamped points (distance `>= c_bar`) do not contribute to the gradient.

    Returns
    -------
    float, numpy.ndarray
        The loss and the 3xN gradient
    """
    y_hat = as_points(y_hat)
    b = model.keypoints.points
    pose = register(y_hat, b)
    points = as_points(X)
    distances, indices = nearest_distances(points, apply_pose(pose, model.dense_points),
                                           return_indices=True)
    value = float(np.mean(tls(distances, c_bar)))

    inliers = distances < c_bar
    _, gradient = aligned_residual_loss(
        y_hat, b, model.dense_points[:, indices[inliers]], points[:, inliers],
        np.full(int(np.sum(inliers)), 1.0 / points.shape[1]), pose=pose)
    return value, gradient

def _sup_terms(A: np.ndarray, B: np.ndarray) -> typing.Tuple[float, np.ndarray, np.ndarray]:
    forward, forward_indices = nearest_distances(A, B, return_indices=True)
    backward, backward_indices = nearest_distances(B, A, return_indices=True)
    m = A.shape[1]
    value = float(np.sum(forward ** 2) / m + np.sum(backward ** 2) / m)
    return value, forward_indices, backward_indices

def loss_sup(T_hat: Pose, T_prime: Pose, model: CadModel) -> float:
    """The bidirectional mean squared closest-point distance between the model
    posed at `T_hat` and at `T_prime`."""
    value, _, _ = _sup_terms(apply_pose(T_hat, model.dense_points),
                             apply_pose(T_prime, model.dense_points))
    return value

def loss_sup_gradient(y_hat: np.ndarray, T_prime: Pose,
                      model: CadModel) -> typing.Tuple[float, np.ndarray]:
    """Evaluate `loss_sup(register(y_hat, b), T_prime)` and its gradient with
    respect to `y_hat`. `T_prime` is a fixed target.

    Returns
    -------
    float, numpy.ndarray
        The loss and the 3xN gradient
    """
    y_hat = as_points(y_hat)
    b = model.keypoints.points
    dense = model.dense_points
    pose = register(y_hat, b)
    target = apply_pose(T_prime, dense)
    value, forward, backward = _sup_terms(apply_pose(pose, dense), target)

    m = dense.shape[1]
    weights = np.full(m, 1.0 / m)
    _, forward_gradient = aligned_residual_loss(y_hat, b, dense, target[:, forward],
                                                weights, pose=pose)
    _, backward_gradient = aligned_residual_loss(y_hat, b, dense[:, backward],
                                                 target, weights, pose=pose)
    return value, forward_gradient + backward_gradient

@dataclasses.dataclass
class EnsembleLoss:
    """The gated loss of one scene with the gradient routed to each model."""

    value: float
    self_loss: float
    sup_loss: float
    gradients: typing.List[np.ndarray]
    contributed: typing.List[bool]

def ensemble_loss(instances: typing.Sequence[typing.Tuple[CertificateResult, CorrectionResult]],
                  X: PointCloud, model: CadModel, c_bar: float) -> EnsembleLoss:
    """The certificate-gated ensemble loss of one scene.

    Every observably correct model k adds its self-supervised loss, which is
    routed to model k, and for every other model l the supervised loss of
    `T_l` against `T_k`, which is routed to model l only.

    Parameters
    ----------
    instances : sequence of (CertificateResult, CorrectionResult)
        The certificate and corrected output of each model, in model order
    X : PointCloud
        The observed points
    model : CadModel
        The object model
    c_bar : float
        The TLS clamp of the self-supervised loss

    Returns
    -------
    EnsembleLoss
        The loss value, its parts and the 3xN gradient per model
    """
    count = len(instances)
    N = model.keypoints.N
    gradients = [np.zeros((3, N)) for _ in range(count)]
    contributed = [False] * count
    self_total = 0.0
    sup_total = 0.0

    for k, (certificate, correction) in enumerate(instances):
        if not certificate.oc:
            continue
        value, gradient = loss_self_gradient(X, correction.corrected_keypoints.points,
                                             model, c_bar)
        self_total += value
        gradients[k] += gradient
        contributed[k] = True

        for l, (_, other) in enumerate(instances):
            if l == k:
                continue
            value, gradient = loss_sup_gradient(other.corrected_keypoints.points,
                                                correction.corrected_pose, model)
            sup_total += value
            gradients[l] += gradient
            contributed[l] = True

    return EnsembleLoss(self_total + sup_total, self_total, sup_total, gradients,
                        contributed)

def grad_step(params: typing.Sequence[torch.Tensor],
              gradients: typing.Sequence[torch.Tensor], cfg: TrainConfig,
              velocity: typing.Sequence[torch.Tensor]) -> typing.Sequence[torch.Tensor]:
    """Apply one SGD step with momentum and weight decay in place.

    `v <- momentum v + gradient + weight_decay p`, `p <- p - learning_rate v`

    Raises
    ------
    DimensionMismatch
        When the lists or tensor shapes do not match
    """
    if not len(params) == len(gradients) == len(velocity):
        raise DimensionMismatch("One gradient and velocity per parameter is " +
                                "needed", len(params), (len(gradients), len(velocity)))
    with torch.no_grad():
        for p, g, v in zip(params, gradients, velocity):
            if p.shape != g.shape or p.shape != v.shape:
                raise DimensionMismatch("The gradient does not fit the parameter",
                                        tuple(p.shape), (tuple(g.shape), tuple(v.shape)))
            v.mul_(cfg.momentum).add_(g).add_(p, alpha=cfg.weight_decay)
            p.sub_(v, alpha=cfg.learning_rate)
    return params

def _batches(count: int, batch_size: int, rng: np.random.Generator
             ) -> typing.Iterator[np.ndarray]:
    while True:
        order = rng.permutation(count)
        for start in range(0, count, batch_size):
            yield order[start:start + batch_size]

def pretrain_supervised(detector: KeypointDetector,
                        sim_scenes: typing.Sequence[SceneSample],
                        cfg: TrainConfig) -> KeypointDetector:
    """Train a copy of the detector on ground-truth keypoints.

    The loss is the mean squared keypoint error per keypoint in units of
    the squared diameter, minimized by SGD for `cfg.epochs` passes.

    Raises
    ------
    ValueError
        When there are no scenes or a scene has no ground-truth keypoints

    Returns
    -------
    KeypointDetector
        The trained copy
    """
    if len(sim_scenes) == 0:
        raise ValueError("Pre-training needs at least one scene.")
    if any(scene.y_star is None for scene in sim_scenes):
        raise ValueError("Pre-training needs the ground-truth keypoints.")

    detector = detector.copy()
    descriptors = [detector.describe(scene.X) for scene in sim_scenes]
    targets = torch.from_numpy(np.stack([scene.y_star.points for scene in sim_scenes]))
    scale = 1.0 / (detector.model.keypoints.N * detector.model.diameter ** 2)

    rng = np.random.default_rng(cfg.seed)
    batches_per_epoch = int(np.ceil(len(sim_scenes) / cfg.batch_size))
    batches = _batches(len(sim_scenes), cfg.batch_size, rng)
    for epoch in range(cfg.epochs):
        total = 0.0
        for _ in range(batches_per_epoch):
            batch = next(batches)
            detections = detector.forward([descriptors[i] for i in batch])
            errors = torch.sum((detections - targets[torch.from_numpy(batch)]) ** 2,
                               dim=(1, 2))
            loss = scale * errors.mean()
            loss.backward()
            detector.step(cfg)
            total += float(loss) * len(batch)
        logger.debug("Pre-training epoch {} of {}: keypoint loss {:.6g}".format(
            epoch + 1, cfg.epochs, total / len(sim_scenes)))

    return detector

def ensemble_output(corrections: typing.Sequence[CorrectionResult],
                    certificates: typing.Sequence[CertificateResult]
                    ) -> typing.Tuple[int, Pose]:
    """The first observably correct corrected pose in model order, or the
    corrected pose of the first model if none is certified.

    Returns
    -------
    int, Pose
        The index of the chosen model and its pose
    """
    for index, certificate in enumerate(certificates):
        if certificate.oc:
            return index, corrections[index].corrected_pose
    return 0, corrections[0].corrected_pose

@dataclasses.dataclass
class _BatchOutputs:
    detections: typing.List[torch.Tensor]
    corrections: typing.List[typing.List[CorrectionResult]]
    certificates: typing.List[typing.List[CertificateResult]]

def _correct_and_certify(model: CadModel, corrector_cfg: CorrectorConfig,
                         cert_cfg: CertificateConfig, camera: CameraIntrinsics,
                         instance: typing.Tuple[SceneSample, np.ndarray]
                         ) -> typing.Tuple[CorrectionResult, CertificateResult]:
    scene, y_tilde = instance
    correction = solve_correction(y_tilde, model, scene.X, corrector_cfg)
    certificate = observable_correctness(scene.X, scene.M, correction.corrected_pose,
                                         model, camera, cert_cfg)
    return correction, certificate

def _forward_batch(detectors: typing.Sequence[KeypointDetector],
                   scenes: typing.Sequence[SceneSample], model: CadModel,
                   corrector_cfg: CorrectorConfig, cert_cfg: CertificateConfig,
                   camera: CameraIntrinsics,
                   pool: typing.Optional[concurrent.futures.Executor]=None
                   ) -> _BatchOutputs:
    # the network runs on this thread, the numpy work of the batch on the pool
    work = functools.partial(_correct_and_certify, model, corrector_cfg,
                             cert_cfg, camera)
    apply = map if pool is None else pool.map

    outputs = _BatchOutputs([], [], [])
    for detector in detectors:
        descriptors = list(apply(detector.describe, [scene.X for scene in scenes]))
        detections = detector.forward(descriptors)
        results = list(apply(work, zip(scenes, detections.detach().numpy())))
        outputs.detections.append(detections)
        outputs.corrections.append([correction for correction, _ in results])
        outputs.certificates.append([certificate for _, certificate in results])
    return outputs

def _eval_adds(outputs: _BatchOutputs, scenes: typing.Sequence[SceneSample],
               model: CadModel) -> float:
    distances = []
    for b, scene in enumerate(scenes):
        if scene.T_star is None:
            continue
        _, pose = ensemble_output([c[b] for c in outputs.corrections],
                                  [c[b] for c in outputs.certificates])
        distances.append(adds_metric(pose, scene.T_star, model) / model.diameter)
    return float(np.mean(distances)) if distances else float("nan")

def _batch_losses(outputs: _BatchOutputs, scenes: typing.Sequence[SceneSample],
                  model: CadModel, c_bar: float
                  ) -> typing.Tuple[typing.List[EnsembleLoss], np.ndarray]:
    losses = []
    for b, scene in enumerate(scenes):
        losses.append(ensemble_loss([(certificates[b], corrections[b])
                                     for certificates, corrections
                                     in zip(outputs.certificates, outputs.corrections)],
                                    scene.X, model, c_bar))
    oc = np.array([[c.oc for c in certificates] for certificates in outputs.certificates],
                  dtype=float)
    return losses, oc.mean(axis=1)

def self_train(detectors: typing.Sequence[KeypointDetector],
               scenes: typing.Sequence[SceneSample], model: CadModel,
               corrector_cfg: CorrectorConfig, cert_cfg: CertificateConfig,
               train_cfg: TrainConfig, camera: CameraIntrinsics,
               eval_scenes: typing.Optional[typing.Sequence[SceneSample]]=None
               ) -> typing.Tuple[typing.List[KeypointDetector], TrainLog]:
    """Self-train copies of the detectors on unlabeled scenes.

    Every iteration draws a batch, runs detection, correction and both
    certificates for each detector and back-propagates the gated ensemble
    loss (scaled by the inverse squared diameter). A detector that receives
    no loss term in a batch is not stepped, so its parameters and momentum
    stay unchanged. Ground truth is only read for the logged ADD-S.

    With `train_cfg.workers > 1` the descriptors, corrections and
    certificates of a batch are computed on a thread pool. The network
    passes and the SGD steps stay on the calling thread.

    Parameters
    ----------
    detectors : sequence of KeypointDetector
        The pre-trained detectors, in preference order
    scenes : sequence of SceneSample
        The training scenes
    model : CadModel
        The object model
    corrector_cfg : CorrectorConfig
        The corrector settings, its `c_bar` also clamps the self loss
    cert_cfg : CertificateConfig
        The certificate thresholds
    train_cfg : TrainConfig
        The SGD settings, `iterations` batches are used
    camera : CameraIntrinsics
        The camera of the scenes
    eval_scenes : sequence of SceneSample, optional
        The scenes of the iteration 0 record, the first batch of `scenes`
        if not given, default: None

    Returns
    -------
    list of KeypointDetector, TrainLog
        The trained copies and the log
    """
    if len(detectors) == 0:
        raise ValueError("Self-training needs at least one detector.")
    if len(scenes) == 0:
        raise ValueError("Self-training needs at least one scene.")

    detectors = [detector.copy() for detector in detectors]
    if eval_scenes is None:
        eval_scenes = scenes[:train_cfg.batch_size]
    pool = None
    if train_cfg.workers > 1:
        pool = concurrent.futures.ThreadPoolExecutor(max_workers=train_cfg.workers)
    try:
        return _self_train(detectors, scenes, model, corrector_cfg, cert_cfg,
                           train_cfg, camera, eval_scenes, pool)
    finally:
        if pool is not None:
            pool.shutdown()

def _self_train(detectors: typing.List[KeypointDetector],
                scenes: typing.Sequence[SceneSample], model: CadModel,
                corrector_cfg: CorrectorConfig, cert_cfg: CertificateConfig,
                train_cfg: TrainConfig, camera: CameraIntrinsics,
                eval_scenes: typing.Sequence[SceneSample],
                pool: typing.Optional[concurrent.futures.Executor]
                ) -> typing.Tuple[typing.List[KeypointDetector], TrainLog]:
    log = TrainLog(len(detectors))
    c_bar = corrector_cfg.c_bar
    scale = 1.0 / model.diameter ** 2

    with torch.no_grad():
        outputs = _forward_batch(detectors, eval_scenes, model, corrector_cfg,
                                 cert_cfg, camera, pool)
    losses, oc = _batch_losses(outputs, eval_scenes, model, c_bar)
    log.append(0, oc, np.mean([l.self_loss for l in losses]),
               np.mean([l.sup_loss for l in losses]),
               _eval_adds(outputs, eval_scenes, model))
    logger.info("Self-training start: oc fractions {}".format(
        ", ".join("{:.3f}".format(v) for v in oc)))

    rng = np.random.default_rng(train_cfg.seed)
    batches = _batches(len(scenes), train_cfg.batch_size, rng)
    for iteration in range(1, train_cfg.iterations + 1):
        batch = [scenes[i] for i in next(batches)]
        outputs = _forward_batch(detectors, batch, model, corrector_cfg,
                                 cert_cfg, camera, pool)
        losses, oc = _batch_losses(outputs, batch, model, c_bar)

        for k, detector in enumerate(detectors):
            if not any(l.contributed[k] for l in losses):
                detector.network.zero_grad(set_to_none=True)
                continue
            gradient = np.stack([l.gradients[k] for l in losses]) * scale / len(batch)
            outputs.detections[k].backward(torch.from_numpy(gradient))
            detector.step(train_cfg)

        log.append(iteration, oc, np.mean([l.self_loss for l in losses]),
                   np.mean([l.sup_loss for l in losses]),
                   _eval_adds(outputs, batch, model))
        if iteration % train_cfg.log_every == 0:
            logger.info("Self-training iteration {} of {}: oc fractions {}".format(
                iteration, train_cfg.iterations,
                ", ".join("{:.3f}".format(v) for v in oc)))

    return detectors, log

def evaluate_detectors(detectors: typing.Sequence[KeypointDetector],
                       scenes: typing.Sequence[SceneSample], model: CadModel,
                       corrector_cfg: CorrectorConfig, cert_cfg: CertificateConfig,
                       camera: CameraIntrinsics,
                       threshold: typing.Optional[float]=None
                       ) -> typing.List[dict]:
    """Compare the detectors with and without the corrector on labeled scenes.

    Parameters
    ----------
    detectors : sequence of KeypointDetector
        The detectors
    scenes : sequence of SceneSample
        Scenes with ground-truth poses
    model : CadModel
        The object model
    corrector_cfg : CorrectorConfig
        The corrector settings
    cert_cfg : CertificateConfig
        The certificate thresholds
    camera : CameraIntrinsics
        The camera
    threshold : float, optional
        The ADD-S accuracy threshold, 5% of the diameter if not given,
        default: None

    Returns
    -------
    list of dict
        One row per detector and one for the ensemble output, with the
        threshold accuracy without (`detector`) and with (`corrected`)
        correction, the oc fraction and the mean normalized ADD-S
    """
    if threshold is None:
        threshold = 0.05 * model.diameter

    raw = [[] for _ in detectors]
    corrected = [[] for _ in detectors]
    certified = [[] for _ in detectors]
    ensemble = []
    for scene in scenes:
        corrections = []
        certificates = []
        for k, detector in enumerate(detectors):
            y_tilde = detect(detector, scene.X)
            baseline = no_correction(y_tilde, model, scene.X, corrector_cfg)
            correction = solve_correction(y_tilde, model, scene.X, corrector_cfg)
            certificate = observable_correctness(scene.X, scene.M,
                                                 correction.corrected_pose,
                                                 model, camera, cert_cfg)
            raw[k].append(adds_metric(baseline.corrected_pose, scene.T_star, model))
            corrected[k].append(adds_metric(correction.corrected_pose,
                                            scene.T_star, model))
            certified[k].append(certificate.oc)
            corrections.append(correction)
            certificates.append(certificate)
        _, pose = ensemble_output(corrections, certificates)
        ensemble.append(adds_metric(pose, scene.T_star, model))

    rows = []
    for k in range(len(detectors)):
        rows.append({"name": "model_{}".format(k + 1),
                     "detector": adds_threshold_accuracy(raw[k], threshold),
                     "corrected": adds_threshold_accuracy(corrected[k], threshold),
                     "oc_fraction": float(np.mean(certified[k])),
                     "mean_adds": float(np.mean(corrected[k]) / model.diameter)})
    rows.append({"name": "ensemble",
                 "detector": float("nan"),
                 "corrected": adds_threshold_accuracy(ensemble, threshold),
                 "oc_fraction": float(np.mean(np.any(certified, axis=0))),
                 "mean_adds": float(np.mean(ensemble) / model.diameter)})
    return rows

def save_detector(detector: KeypointDetector,
                  stem: typing.Union[str, os.PathLike]) -> None:
    """Write `<stem>.json` (header) and `<stem>.f32` (little-endian float32
    parameters)."""
    stem = pathlib.Path(stem)
    header = {
        "model_id": detector.model_id,
        "seed": detector.seed,
        "config": detector.cfg.toDict(),
        "shapes": [list(p.shape) for p in detector.parameters()],
        "dtype": "<f4",
    }
    write_json(stem.with_suffix(".json"), header)
    write_f32(stem.with_suffix(".f32"), detector.flatParameters())

def load_detector(stem: typing.Union[str, os.PathLike],
                  model: CadModel) -> KeypointDetector:
    """Read a detector written by `save_detector()`.

    Raises
    ------
    SceneFormatError
        When the header does not match the model or the parameter file
    """
    stem = pathlib.Path(stem)
    header = read_json(stem.with_suffix(".json"))
    try:
        if header["model_id"] != model.model_id:
            raise SceneFormatError(stem, ("the detector was trained for the " +
                                          "model '{}', not '{}'").format(
                                              header["model_id"], model.model_id))
        detector = KeypointDetector(model, DetectorConfig(**header["config"]),
                                    seed=header["seed"])
        shapes = [list(p.shape) for p in detector.parameters()]
        if header["shapes"] != shapes:
            raise SceneFormatError(stem, ("the parameter shapes {} do not fit " +
                                          "the model").format(header["shapes"]))
    except (KeyError, TypeError) as e:
        raise SceneFormatError(stem, "invalid detector header ({})".format(e)) from e

    detector.setFlatParameters(read_f32(stem.with_suffix(".f32")))
    return detector
