"""Rigid transforms, closed-form keypoint registration, closest-point score
sets and pose-accuracy metrics.

All point arrays use the column layout of the problem statement: a cloud of
`n` points is a `3 x n` matrix, `X[:, i]` is the `i`-th point.
"""

import math
import typing
import logging
import functools
import dataclasses

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial import ConvexHull
from scipy.integrate import trapezoid
from scipy.spatial.distance import pdist

try:
    from scipy.spatial import QhullError
except ImportError:
    # scipy < 1.8 only exposes the error in the private module
    from scipy.spatial.qhull import QhullError

from .errors import DegenerateConfiguration
from .errors import DimensionMismatch
from .errors import InvalidPose

__all__ = [
    "Pose",
    "PointCloud",
    "KeypointSet",
    "CadModel",
    "ScoreSet",
    "as_points",
    "project_to_so3",
    "apply_pose",
    "register",
    "registration_differential",
    "aligned_residual_loss",
    "tls",
    "nearest_distances",
    "percentile",
    "compute_diameter",
    "adds_metric",
    "add_metric",
    "adds_auc",
    "adds_threshold_accuracy",
    "rotation_error_deg",
    "translation_error",
]

logger = logging.getLogger(__name__)

# tolerance of the pose invariants RᵀR = I and det(R) = +1
POSE_TOLERANCE = 1e-9

# above this number of point pairs the closest-point search uses a kd-tree
BRUTE_FORCE_PAIRS = 10 ** 6

ScoreSet = np.ndarray

def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array

def project_to_so3(matrix: np.ndarray) -> np.ndarray:
    """Get the rotation closest to `matrix` in the Frobenius norm.

    Parameters
    ----------
    matrix : numpy.ndarray
        A 3x3 matrix, usually a rotation that was rounded

    Returns
    -------
    numpy.ndarray
        The projected 3x3 rotation matrix
    """
    U, _, Vt = np.linalg.svd(np.asarray(matrix, dtype=float))
    d = 1.0 if np.linalg.det(U @ Vt) >= 0 else -1.0
    return U @ np.diag([1.0, 1.0, d]) @ Vt

@dataclasses.dataclass(frozen=True, eq=False)
class Pose:
    """A rigid transform (R, t) acting as `x -> R x + t`.

    Raises
    ------
    InvalidPose
        When the rotation is not orthonormal with determinant +1 (to 1e-9)
        or the arrays have the wrong shape
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rotation = np.array(self.rotation, dtype=float)
        translation = np.array(self.translation, dtype=float).reshape(-1)

        if rotation.shape != (3, 3) or translation.shape != (3, ):
            raise InvalidPose(("A pose needs a 3x3 rotation and a 3-vector " +
                               "translation, got shapes {} and {}.").format(
                                   rotation.shape, translation.shape))
        if not (np.all(np.isfinite(rotation)) and
                np.all(np.isfinite(translation))):
            raise InvalidPose("The pose contains non-finite values.")

        orthogonality = np.abs(rotation.T @ rotation - np.eye(3)).max()
        determinant = np.linalg.det(rotation)
        if (orthogonality > POSE_TOLERANCE or
            abs(determinant - 1) > POSE_TOLERANCE):
            raise InvalidPose(("The rotation is not a proper rotation " +
                               "(|RᵀR - I| = {:.3g}, det = {:.12g}).").format(
                                   orthogonality, determinant))

        object.__setattr__(self, "rotation", _readonly(rotation))
        object.__setattr__(self, "translation", _readonly(translation))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def fromMatrix(cls, matrix: typing.Union[np.ndarray, typing.Sequence],
                   project: typing.Optional[bool]=False) -> "Pose":
        """Create a pose from a 4x4 homogeneous matrix.

        Parameters
        ----------
        matrix : array-like
            The 4x4 (or 3x4) matrix
        project : bool, optional
            Whether to project the rotation block onto SO(3) first, use
            this for matrices read from text files, default: False

        Returns
        -------
        Pose
            The pose
        """
        matrix = np.asarray(matrix, dtype=float)
        rotation = matrix[:3, :3]
        if project:
            rotation = project_to_so3(rotation)
        return cls(rotation, matrix[:3, 3])

    def asMatrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        """Compose, `(self @ other)(x) = self(other(x))`."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def __repr__(self) -> str:
        return "Pose(rotation={}, translation={})".format(
            self.rotation.tolist(), self.translation.tolist())

@dataclasses.dataclass(frozen=True, eq=False)
class PointCloud:
    """A 3xn point matrix with optional dxn per-point features.

    Raises
    ------
    ValueError
        When the cloud is empty, contains non-finite values or the feature
        column count differs from the point count
    """

    points: np.ndarray
    features: typing.Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        points = np.array(self.points, dtype=float)
        if points.ndim != 2 or points.shape[0] != 3 or points.shape[1] < 1:
            raise ValueError(("A point cloud needs a 3xn matrix with n >= 1, " +
                              "got shape {}.").format(points.shape))
        if not np.all(np.isfinite(points)):
            raise ValueError("The point cloud contains non-finite coordinates.")
        object.__setattr__(self, "points", _readonly(points))

        if self.features is not None:
            features = np.array(self.features, dtype=float)
            if features.ndim == 1:
                features = features[None, :]
            if features.shape[1] != points.shape[1]:
                raise ValueError(("The features have {} columns but the " +
                                  "cloud has {} points.").format(
                                      features.shape[1], points.shape[1]))
            if not np.all(np.isfinite(features)):
                raise ValueError("The point features contain non-finite values.")
            object.__setattr__(self, "features", _readonly(features))

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def select(self, indices: typing.Union[np.ndarray, typing.Sequence[int]]) -> "PointCloud":
        """Get the sub-cloud of the given column `indices`, features included."""
        indices = np.asarray(indices, dtype=int)
        features = None if self.features is None else self.features[:, indices]
        return PointCloud(self.points[:, indices], features)

    def withPoints(self, points: np.ndarray) -> "PointCloud":
        """Get a cloud with the same features but different coordinates."""
        return PointCloud(points, self.features)

@dataclasses.dataclass(frozen=True, eq=False)
class KeypointSet:
    """N >= 3 keypoints as a 3xN matrix."""

    points: np.ndarray

    def __post_init__(self) -> None:
        points = np.array(self.points, dtype=float)
        if points.ndim != 2 or points.shape[0] != 3 or points.shape[1] < 3:
            raise ValueError(("A keypoint set needs a 3xN matrix with N >= 3, " +
                              "got shape {}.").format(points.shape))
        if not np.all(np.isfinite(points)):
            raise ValueError("The keypoints contain non-finite coordinates.")
        object.__setattr__(self, "points", _readonly(points))

    @property
    def N(self) -> int:
        return self.points.shape[1]

    def __add__(self, delta: np.ndarray) -> "KeypointSet":
        return KeypointSet(self.points + np.asarray(delta, dtype=float))

@dataclasses.dataclass(frozen=True, eq=False)
class CadModel:
    """The known-object prior: dense surface sample, keypoints and diameter.

    Use `CadModel.fromPoints()` to compute the diameter from the sample.
    """

    dense_points: np.ndarray
    keypoints: KeypointSet
    diameter: float
    model_id: str = "model"
    color: typing.Tuple[float, float, float] = (0.8, 0.3, 0.2)
    source: typing.Optional[dict] = None

    def __post_init__(self) -> None:
        dense = np.array(self.dense_points, dtype=float)
        if dense.ndim != 2 or dense.shape[0] != 3 or dense.shape[1] < 1:
            raise ValueError(("The dense sample needs a 3xm matrix, got " +
                              "shape {}.").format(dense.shape))
        if not np.all(np.isfinite(dense)):
            raise ValueError("The dense sample contains non-finite coordinates.")
        if not self.diameter > 0:
            raise ValueError("The diameter must be positive, got {}.".format(
                self.diameter))
        object.__setattr__(self, "dense_points", _readonly(dense))
        object.__setattr__(self, "diameter", float(self.diameter))
        object.__setattr__(self, "color", tuple(float(c) for c in self.color))

    @classmethod
    def fromPoints(cls, dense_points: np.ndarray,
                   keypoints: typing.Union[KeypointSet, np.ndarray],
                   diameter: typing.Optional[float]=None,
                   **kwargs) -> "CadModel":
        """Create a model, computing the diameter if it is not given.

        Parameters
        ----------
        dense_points : numpy.ndarray
            The 3xm surface sample
        keypoints : KeypointSet or numpy.ndarray
            The 3xN annotated keypoints
        diameter : float, optional
            The diameter, the maximum pairwise distance of the dense sample
            is used if not given, default: None
        kwargs
            Passed on to the constructor (`model_id`, `color`, `source`)

        Returns
        -------
        CadModel
            The model
        """
        if not isinstance(keypoints, KeypointSet):
            keypoints = KeypointSet(keypoints)
        if diameter is None:
            diameter = compute_diameter(dense_points)
        return cls(dense_points, keypoints, diameter, **kwargs)

    @property
    def m(self) -> int:
        return self.dense_points.shape[1]

    @functools.cached_property
    def tree(self) -> cKDTree:
        """A kd-tree over the dense sample in the model frame."""
        return cKDTree(self.dense_points.T)

PointsLike = typing.Union[PointCloud, KeypointSet, np.ndarray]

def as_points(P: PointsLike) -> np.ndarray:
    """Get the 3xn coordinate matrix of a cloud, keypoint set or array."""
    if isinstance(P, (PointCloud, KeypointSet)):
        return P.points
    points = np.asarray(P, dtype=float)
    if points.ndim == 1:
        points = points.reshape(3, -1)
    return points

def apply_pose(T: Pose, P: PointsLike) -> PointsLike:
    """Apply the rigid transform `T` to every column of `P`.

    Parameters
    ----------
    T : Pose
        The transform
    P : PointCloud, KeypointSet or numpy.ndarray
        The points, features of a `PointCloud` are carried through

    Returns
    -------
    PointCloud, KeypointSet or numpy.ndarray
        The transformed points, same type as `P`
    """
    moved = T.rotation @ as_points(P) + T.translation[:, None]

    if isinstance(P, PointCloud):
        return P.withPoints(moved)
    elif isinstance(P, KeypointSet):
        return KeypointSet(moved)
    return moved

def _rank(centered: np.ndarray) -> int:
    singular = np.linalg.svd(centered, compute_uv=False)
    if singular.size == 0 or singular[0] <= 0:
        return 0
    return int(np.sum(singular > singular[0] * 1e-10))

def register(y: PointsLike, b: PointsLike) -> Pose:
    """Solve the outlier-free registration `min_T sum_i |y[i] - T b[i]|^2`.

    The closed form subtracts the centroids, decomposes the cross-covariance
    with an SVD and flips the last singular vector when the determinant is
    negative.

    Raises
    ------
    DimensionMismatch
        When `y` and `b` have a different number of points
    DegenerateConfiguration
        When the centered `b` has rank < 2 so the rotation is not unique

    Parameters
    ----------
    y : KeypointSet or numpy.ndarray
        The 3xN target keypoints (detections)
    b : KeypointSet or numpy.ndarray
        The 3xN model keypoints

    Returns
    -------
    Pose
        The transform moving `b` onto `y`
    """
    y = as_points(y)
    b = as_points(b)
    if y.shape != b.shape:
        raise DimensionMismatch("Registration needs one target per model " +
                                "keypoint", b.shape, y.shape)

    y_mean = y.mean(axis=1)
    b_mean = b.mean(axis=1)
    b_centered = b - b_mean[:, None]

    rank = _rank(b_centered)
    if rank < 2:
        raise DegenerateConfiguration("The model keypoints are collinear or " +
                                      "coincident", rank)

    M = (y - y_mean[:, None]) @ b_centered.T
    U, _, Vt = np.linalg.svd(M)
    d = 1.0 if np.linalg.det(U @ Vt) >= 0 else -1.0
    rotation = U @ np.diag([1.0, 1.0, d]) @ Vt

    return Pose(rotation, y_mean - rotation @ b_mean)

def registration_differential(y: np.ndarray, b: np.ndarray, pose: Pose,
                 grad_mean: np.ndarray, grad_omega: np.ndarray) -> np.ndarray:
    """Pull a pose gradient back onto the keypoints of the registration.

    The registered pose is parametrized by the keypoint mean `ȳ` and a
    body-frame rotation perturbation `R -> R (I + [ω]x)`. For the optimal
    rotation `P = Rᵀ M` is symmetric, differentiating gives
    `(tr(P) I - P) ω = vee(Rᵀ dM - dMᵀ R)`, which stays solvable for equal
    singular values.

    Parameters
    ----------
    y : numpy.ndarray
        The 3xN keypoints the pose was registered from
    b : numpy.ndarray
        The 3xN model keypoints
    pose : Pose
        `register(y, b)`
    grad_mean : numpy.ndarray
        The gradient of the scalar with respect to `ȳ`
    grad_omega : numpy.ndarray
        The gradient of the scalar with respect to `ω`

    Returns
    -------
    numpy.ndarray
        The 3xN gradient with respect to `y`
    """
    N = y.shape[1]
    b_centered = b - b.mean(axis=1)[:, None]
    M = (y - y.mean(axis=1)[:, None]) @ b_centered.T
    P = pose.rotation.T @ M
    P = 0.5 * (P + P.T)
    A = np.trace(P) * np.eye(3) - P

    try:
        h = np.linalg.solve(A, grad_omega)
    except np.linalg.LinAlgError:
        h = np.linalg.lstsq(A, grad_omega, rcond=None)[0]

    lever = np.cross(h[None, :], b_centered.T).T
    return grad_mean[:, None] / N + pose.rotation @ lever

def aligned_residual_loss(y: np.ndarray, b: np.ndarray, sources: np.ndarray,
                          targets: np.ndarray, weights: np.ndarray,
                          pose: typing.Optional[Pose]=None
                          ) -> typing.Tuple[float, np.ndarray]:
    """Evaluate `sum_i w_i |targets_i - T(y) sources_i|^2` and its gradient
    with respect to the keypoints `y`, with `T(y) = register(y, b)`.

    Correspondences are the given column pairs, so this is the frozen
    correspondence form used by the corrector and the training losses.

    Parameters
    ----------
    y : numpy.ndarray
        3xN keypoints
    b : numpy.ndarray
        3xN model keypoints
    sources : numpy.ndarray
        3xp model-frame points
    targets : numpy.ndarray
        3xp points the posed sources are compared against
    weights : numpy.ndarray
        p nonnegative weights
    pose : Pose, optional
        `register(y, b)` if already known, default: None

    Returns
    -------
    float, numpy.ndarray
        The value and the 3xN gradient
    """
    if pose is None:
        pose = register(y, b)
    rotation = pose.rotation
    y_mean = y.mean(axis=1)
    q = sources - b.mean(axis=1)[:, None]
    residuals = targets - (rotation @ q + y_mean[:, None])

    weights = np.asarray(weights, dtype=float)
    value = float(np.sum(weights * np.sum(residuals ** 2, axis=0)))

    weighted = residuals * weights[None, :]
    grad_mean = -2.0 * weighted.sum(axis=1)
    grad_omega = -2.0 * np.cross(q.T, (rotation.T @ weighted).T).sum(axis=0)

    return value, registration_differential(y, b, pose, grad_mean, grad_omega)

def tls(z: typing.Union[float, np.ndarray],
        c_bar: float) -> typing.Union[float, np.ndarray]:
    """The truncated least squares loss `min(z^2, c_bar^2)`.

    Raises
    ------
    ValueError
        When `c_bar` is not positive
    """
    if not c_bar > 0:
        raise ValueError("The TLS threshold must be positive, got {}.".format(c_bar))
    value = np.minimum(np.square(z), c_bar ** 2)
    if np.ndim(value) == 0:
        return float(value)
    return value

def _column_distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((x - y) ** 2, axis=0))

def nearest_distances(X: PointsLike, Y: PointsLike,
                      return_indices: typing.Optional[bool]=False
                      ) -> typing.Union[ScoreSet, typing.Tuple[ScoreSet, np.ndarray]]:
    """Compute `s_i = min_j |X[i] - Y[j]|` for every point of `X`.

    Small problems (at most `BRUTE_FORCE_PAIRS` pairs) are searched
    exhaustively, larger ones with a kd-tree. Both backends only choose the
    index, the distance is always evaluated by the same expression so the
    values do not depend on the backend.

    Parameters
    ----------
    X : PointCloud, KeypointSet or numpy.ndarray
        The query points
    Y : PointCloud, KeypointSet or numpy.ndarray
        The reference points
    return_indices : bool, optional
        Whether to return the index of the closest reference point too,
        default: False

    Returns
    -------
    numpy.ndarray or tuple
        The n distances, and the n indices if `return_indices` is True
    """
    x = as_points(X)
    y = as_points(Y)

    if x.shape[1] * y.shape[1] <= BRUTE_FORCE_PAIRS:
        squared = np.sum((x.T[:, None, :] - y.T[None, :, :]) ** 2, axis=2)
        indices = np.argmin(squared, axis=1)
    else:
        _, indices = cKDTree(y.T).query(x.T)

    distances = _column_distances(x, y[:, indices])
    if return_indices:
        return distances, indices
    return distances

def percentile(s: typing.Union[ScoreSet, typing.Sequence[float]],
               p: float) -> float:
    """The nearest-rank `p`-th percentile, the element at `ceil(p n) - 1` of
    the ascending scores.

    Raises
    ------
    ValueError
        When `s` is empty or `p` is not in (0, 1]
    """
    s = np.asarray(s, dtype=float).reshape(-1)
    if s.size == 0:
        raise ValueError("Cannot take the percentile of an empty score set.")
    if not 0 < p <= 1:
        raise ValueError("The percentile level must be in (0, 1], got {}.".format(p))

    # guard against p * n landing a rounding error above an integer
    k = int(math.ceil(p * s.size - 1e-9)) - 1
    k = min(max(k, 0), s.size - 1)
    return float(np.partition(s, k)[k])

def compute_diameter(points: PointsLike) -> float:
    """The maximum pairwise distance of the points.

    Only convex hull vertices can realize the maximum, so larger samples are
    reduced to their hull first.
    """
    pts = as_points(points).T
    if pts.shape[0] < 2:
        return 0.0
    if pts.shape[0] > 64:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            logger.debug("Convex hull failed, using all {} points for the "
                         "diameter".format(pts.shape[0]))
    return float(pdist(pts).max())

def adds_metric(T_hat: Pose, T_star: Pose, model: CadModel) -> float:
    """The ADD-S score, the mean distance from each point of the model posed
    at `T_hat` to the closest point of the model posed at `T_star`.
    """
    return float(np.mean(nearest_distances(
        apply_pose(T_hat, model.dense_points),
        apply_pose(T_star, model.dense_points))))

def add_metric(T_hat: Pose, T_star: Pose, model: CadModel) -> float:
    """The ADD score, the mean distance between corresponding model points."""
    return float(np.mean(_column_distances(
        apply_pose(T_hat, model.dense_points),
        apply_pose(T_star, model.dense_points))))

def adds_auc(per_instance: typing.Sequence[float], threshold: float,
             grid_size: typing.Optional[int]=1000) -> float:
    """The area under the accuracy-vs-threshold curve of ADD-S distances.

    The accuracy at `t` is the fraction of instances with a distance `<= t`,
    integrated with the trapezoidal rule over `grid_size` intervals of
    `[0, threshold]` and divided by `threshold`.

    Raises
    ------
    ValueError
        When there are no distances or the threshold is not positive

    Parameters
    ----------
    per_instance : sequence of float
        The ADD-S distance of every instance
    threshold : float
        The maximum threshold, usually 10% of the object diameter
    grid_size : int, optional
        The number of integration intervals, default: 1000

    Returns
    -------
    float
        The normalized area in [0, 1]
    """
    distances = np.sort(np.asarray(per_instance, dtype=float).reshape(-1))
    if distances.size == 0:
        raise ValueError("The AUC needs at least one distance.")
    if not threshold > 0:
        raise ValueError("The AUC threshold must be positive, got {}.".format(threshold))

    thresholds = np.linspace(0.0, threshold, int(grid_size) + 1)
    accuracy = np.searchsorted(distances, thresholds, side="right") / distances.size
    return float(trapezoid(accuracy, thresholds) / threshold)

def adds_threshold_accuracy(per_instance: typing.Sequence[float],
                            threshold: float) -> float:
    """The fraction of instances with a distance strictly below `threshold`."""
    distances = np.asarray(per_instance, dtype=float).reshape(-1)
    if distances.size == 0:
        raise ValueError("The accuracy needs at least one distance.")
    return float(np.mean(distances < threshold))

def rotation_error_deg(T_hat: Pose, T_star: Pose) -> float:
    """The geodesic angle between the two rotations in degrees."""
    cosine = (np.trace(T_hat.rotation.T @ T_star.rotation) - 1) / 2
    return float(np.degrees(np.arccos(np.clip(cosine, -1.0, 1.0))))

def translation_error(T_hat: Pose, T_star: Pose) -> float:
    return float(np.linalg.norm(T_hat.translation - T_star.translation))
