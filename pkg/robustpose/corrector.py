"""The robust keypoint corrector.

Given detected keypoints `y_tilde`, the corrector looks for a correction
`delta_y` such that the model registered onto `y_tilde + delta_y` fits the
observed point cloud under a truncated least squares loss:

```
min_{delta_y}  1/n sum_i rho(min_j |X[i] - (T(y_tilde + delta_y) B)[j]|)
T(y) = register(y, b)
```

The problem is solved with gradient descent on `delta_y`. Closest points are
re-associated at every iteration and kept fixed while the gradient is taken,
the gradient flows through the closed-form registration.

Examples
--------
>>> model = builtin_model("box", (0.3, 0.2, 0.1))
>>> cfg = CorrectorConfig.forModel(model)
>>> result = solve_correction(y_tilde, model, X, cfg)
>>> result.corrected_pose
"""

import enum
import typing
import logging
import warnings
import dataclasses

import numpy as np

from .errors import DimensionMismatch
from .errors import NonFiniteObjective
from .geometry import Pose
from .geometry import CadModel
from .geometry import PointCloud
from .geometry import KeypointSet
from .geometry import tls
from .geometry import register
from .geometry import as_points
from .geometry import apply_pose
from .geometry import aligned_residual_loss

__all__ = [
    "LossVariant",
    "CorrectorConfig",
    "CorrectionResult",
    "corrector_objective",
    "solve_correction",
    "solve_corrections",
    "no_correction",
    "correction_jacobian",
    "hallucinate_keypoints",
]

logger = logging.getLogger(__name__)

class LossVariant(enum.Enum):
    ROBUST = "robust"
    NON_ROBUST = "non_robust"

@dataclasses.dataclass
class CorrectorConfig:
    """The corrector settings.

    `c_bar` and `grad_tol` are lengths, use `CorrectorConfig.forModel()` to
    get them relative to the object diameter.
    """

    c_bar: float
    step_size: float = 1.0
    max_iters: int = 100
    grad_tol: float = 1e-5
    loss_variant: LossVariant = LossVariant.ROBUST
    max_halvings: int = 10

    def __post_init__(self) -> None:
        if isinstance(self.loss_variant, str):
            self.loss_variant = LossVariant(self.loss_variant)
        self.validate()

    def validate(self) -> None:
        """Check the values.

        Raises
        ------
        ValueError
            When a value is out of its range
        """
        if not self.c_bar > 0:
            raise ValueError("c_bar must be positive, got {}.".format(self.c_bar))
        if not self.step_size > 0:
            raise ValueError("step_size must be positive, got {}.".format(self.step_size))
        if not (isinstance(self.max_iters, (int, np.integer)) and self.max_iters >= 1):
            raise ValueError("max_iters must be an integer >= 1, got {}.".format(self.max_iters))
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive, got {}.".format(self.grad_tol))
        if self.max_halvings < 0:
            raise ValueError("max_halvings must not be negative, got {}.".format(self.max_halvings))

    @classmethod
    def forModel(cls, model: CadModel, **overrides) -> "CorrectorConfig":
        """Get the default configuration for the given model.

        Parameters
        ----------
        model : CadModel
            The model, `c_bar` defaults to 10% and `grad_tol` to 1e-4 of
            its diameter
        overrides
            Values to use instead of the defaults

        Returns
        -------
        CorrectorConfig
            The configuration
        """
        values = {"c_bar": 0.1 * model.diameter,
                  "grad_tol": 1e-4 * model.diameter}
        values.update(overrides)
        return cls(**values)

    def toDict(self) -> dict:
        values = dataclasses.asdict(self)
        values["loss_variant"] = self.loss_variant.value
        return values

    def rho(self, z: np.ndarray) -> np.ndarray:
        """The per-point loss of the configured variant."""
        if self.loss_variant == LossVariant.ROBUST:
            return tls(z, self.c_bar)
        return np.square(z)

    def inliers(self, z: np.ndarray) -> np.ndarray:
        """The points that are not clamped, exactly `c_bar` counts as clamped."""
        if self.loss_variant == LossVariant.ROBUST:
            return z < self.c_bar
        return np.ones(z.shape, dtype=bool)

@dataclasses.dataclass(frozen=True, eq=False)
class CorrectionResult:
    delta_y: np.ndarray
    corrected_keypoints: KeypointSet
    corrected_pose: Pose
    final_objective: float
    initial_objective: float
    iterations: int
    converged: bool

@dataclasses.dataclass(frozen=True)
class _Association:
    pose: Pose
    value: float
    distances: np.ndarray
    indices: np.ndarray

def _associate(pose: Pose, model: CadModel, X: np.ndarray,
               cfg: CorrectorConfig) -> _Association:
    # searching in the model frame reuses the model kd-tree for every pose
    local = pose.rotation.T @ (X - pose.translation[:, None])
    _, indices = model.tree.query(local.T)
    matched = apply_pose(pose, model.dense_points[:, indices])
    distances = np.sqrt(np.sum((X - matched) ** 2, axis=0))
    value = float(np.mean(cfg.rho(distances)))
    return _Association(pose, value, distances, indices)

def _check_shapes(y_tilde: np.ndarray, model: CadModel) -> None:
    if y_tilde.shape != model.keypoints.points.shape:
        raise DimensionMismatch("The detections do not match the model " +
                                "keypoints", model.keypoints.points.shape,
                                y_tilde.shape)

def corrector_objective(delta_y: np.ndarray,
                        y_tilde: typing.Union[KeypointSet, np.ndarray],
                        model: CadModel, X: PointCloud,
                        cfg: CorrectorConfig) -> float:
    """Evaluate the corrector objective at the correction `delta_y`.

    Raises
    ------
    DegenerateConfiguration
        When the model keypoints do not define a rotation

    Parameters
    ----------
    delta_y : numpy.ndarray
        The 3xN correction
    y_tilde : KeypointSet or numpy.ndarray
        The 3xN detected keypoints
    model : CadModel
        The object model
    X : PointCloud
        The observed points
    cfg : CorrectorConfig
        The loss settings

    Returns
    -------
    float
        The mean (truncated) squared closest-point distance
    """
    y_tilde = as_points(y_tilde)
    _check_shapes(y_tilde, model)
    pose = register(y_tilde + np.asarray(delta_y, dtype=float),
                    model.keypoints.points)
    return _associate(pose, model, as_points(X), cfg).value

def _gradient(y: np.ndarray, association: _Association, model: CadModel,
              X: np.ndarray, cfg: CorrectorConfig) -> np.ndarray:
    inliers = cfg.inliers(association.distances)
    n = X.shape[1]
    _, gradient = aligned_residual_loss(
        y, model.keypoints.points,
        model.dense_points[:, association.indices[inliers]], X[:, inliers],
        np.full(int(np.sum(inliers)), 1.0 / n), pose=association.pose)
    return gradient

def solve_correction(y_tilde: typing.Union[KeypointSet, np.ndarray],
                     model: CadModel, X: PointCloud,
                     cfg: CorrectorConfig) -> CorrectionResult:
    """Solve the corrector problem by safeguarded gradient descent.

    Descent starts at `delta_y = 0` and uses the step
    `step_size * N / 2 * gradient`. A step that increases the objective is
    halved up to `cfg.max_halvings` times, if none of them decreases the
    objective the descent stops. It also stops when the largest gradient
    entry is below `cfg.grad_tol` or after `cfg.max_iters` iterations.

    The corrected keypoints are the model keypoints at the final pose, so
    `corrected_pose` is the registration of `corrected_keypoints` and the
    correction only depends on the detections through the found pose.

    Raises
    ------
    DimensionMismatch
        When the detections and model keypoints differ in shape
    DegenerateConfiguration
        When the model keypoints do not define a rotation
    NonFiniteObjective
        When the detections or an objective value are not finite

    Parameters
    ----------
    y_tilde : KeypointSet or numpy.ndarray
        The 3xN detected keypoints
    model : CadModel
        The object model
    X : PointCloud
        The observed points
    cfg : CorrectorConfig
        The solver settings

    Returns
    -------
    CorrectionResult
        The correction, corrected keypoints and pose
    """
    y_tilde = np.array(as_points(y_tilde), dtype=float)
    _check_shapes(y_tilde, model)
    if not np.all(np.isfinite(y_tilde)):
        raise NonFiniteObjective("The detected keypoints are not finite", 0)

    b = model.keypoints.points
    points = as_points(X)
    step = cfg.step_size * y_tilde.shape[1] / 2

    delta_y = np.zeros_like(y_tilde)
    current = _associate(register(y_tilde, b), model, points, cfg)
    if not np.isfinite(current.value):
        raise NonFiniteObjective("The initial objective is not finite", 0)
    initial_objective = current.value

    converged = False
    iterations = 0
    for iteration in range(1, cfg.max_iters + 1):
        gradient = _gradient(y_tilde + delta_y, current, model, points, cfg)
        if np.max(np.abs(gradient)) < cfg.grad_tol:
            converged = True
            break

        scale = step
        candidate = None
        for _ in range(cfg.max_halvings + 1):
            trial = delta_y - scale * gradient
            association = _associate(register(y_tilde + trial, b), model,
                                     points, cfg)
            if not np.isfinite(association.value):
                raise NonFiniteObjective("The objective is not finite", iteration)
            if association.value <= current.value:
                candidate = (trial, association)
                break
            scale /= 2

        if candidate is None:
            logger.debug("No decreasing step found in iteration {}, "
                         "stopping".format(iteration))
            warnings.warn(("The corrector found no decreasing step after {} " +
                           "halvings and stopped early.").format(cfg.max_halvings),
                          RuntimeWarning)
            break

        delta_y, current = candidate
        iterations = iteration

    corrected_points = apply_pose(current.pose, b)
    delta_y = corrected_points - y_tilde
    corrected = KeypointSet(y_tilde + delta_y)
    pose = register(corrected, b)
    final_objective = _associate(pose, model, points, cfg).value

    logger.debug("Corrector finished after {} iterations (converged: {}), "
                 "objective {:.6g} -> {:.6g}".format(
                     iterations, converged, initial_objective, final_objective))

    return CorrectionResult(delta_y, corrected, pose, final_objective,
                            initial_objective, iterations, converged)

def solve_corrections(instances: typing.Iterable[typing.Tuple[typing.Union[KeypointSet, np.ndarray], PointCloud]],
                      model: CadModel, cfg: CorrectorConfig
                      ) -> typing.List[CorrectionResult]:
    """Solve independent corrector problems, one per `(y_tilde, X)` pair."""
    return [solve_correction(y_tilde, model, X, cfg) for y_tilde, X in instances]

def no_correction(y_tilde: typing.Union[KeypointSet, np.ndarray],
                  model: CadModel, X: PointCloud,
                  cfg: CorrectorConfig) -> CorrectionResult:
    """The baseline that keeps the detections, `y_hat = y_tilde`."""
    y_tilde = as_points(y_tilde)
    _check_shapes(y_tilde, model)
    pose = register(y_tilde, model.keypoints.points)
    value = _associate(pose, model, as_points(X), cfg).value
    return CorrectionResult(np.zeros_like(y_tilde), KeypointSet(y_tilde), pose,
                            value, value, 0, True)

def correction_jacobian(result: CorrectionResult) -> np.ndarray:
    """The derivative of the correction with respect to the detections.

    At a converged solution the corrected keypoints do not depend on the
    detections, so `d delta_y / d y_tilde = -I` of size 3N x 3N.
    """
    if not result.converged:
        warnings.warn("The Jacobian of the correction is only defined for a " +
                      "converged solution.", RuntimeWarning)
    return -np.eye(result.delta_y.size)

def hallucinate_keypoints(T_tilde: Pose, model: CadModel) -> KeypointSet:
    """Get keypoint detections from a pose estimate, `y_tilde = T_tilde b`."""
    return apply_pose(T_tilde, model.keypoints)
