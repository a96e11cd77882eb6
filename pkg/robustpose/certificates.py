"""Observable correctness certificates.

A pose estimate is observably correct if the posed model explains the
observed points (3D check) and its rendered silhouette covers the detected
mask (2D check).
"""

import os
import typing
import logging
import dataclasses

import numpy as np
from scipy.ndimage import binary_dilation
from scipy.ndimage import binary_fill_holes

from .errors import DimensionMismatch
from .errors import EmptyDetectedMask
from .errors import EmptyProjection
from .formats import read_pgm
from .formats import write_pgm
from .geometry import Pose
from .geometry import CadModel
from .geometry import PointCloud
from .geometry import as_points
from .geometry import apply_pose
from .geometry import percentile
from .geometry import nearest_distances

__all__ = [
    "CameraIntrinsics",
    "BinaryMask",
    "CertificateConfig",
    "CertificateResult",
    "project_points",
    "cert_3d",
    "render_mask",
    "cert_2d",
    "observable_correctness",
]

logger = logging.getLogger(__name__)

@dataclasses.dataclass(frozen=True)
class CameraIntrinsics:
    """A pinhole camera, `u = fx x / z + cx`, `v = fy y / z + cy`."""

    fx: float = 500.0
    fy: float = 500.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("The focal lengths must be positive, got {} and {}.".format(
                self.fx, self.fy))
        if not (self.width >= 1 and self.height >= 1):
            raise ValueError("The image must have at least one pixel.")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(("The principal point ({}, {}) is outside the " +
                              "{}x{} image.").format(self.cx, self.cy,
                                                     self.width, self.height))

    @property
    def shape(self) -> typing.Tuple[int, int]:
        return (self.height, self.width)

    def toDict(self) -> dict:
        return dataclasses.asdict(self)

@dataclasses.dataclass(frozen=True, eq=False)
class BinaryMask:
    """A height x width boolean image."""

    grid: np.ndarray

    def __post_init__(self) -> None:
        grid = np.array(self.grid, dtype=bool)
        if grid.ndim != 2:
            raise ValueError("A mask must be two dimensional, got shape {}.".format(
                grid.shape))
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @classmethod
    def empty(cls, K: CameraIntrinsics) -> "BinaryMask":
        return cls(np.zeros(K.shape, dtype=bool))

    @classmethod
    def fromFile(cls, path: typing.Union[str, os.PathLike]) -> "BinaryMask":
        return cls(read_pgm(path))

    def save(self, path: typing.Union[str, os.PathLike]) -> None:
        """Save the mask as a P5 PGM with values 0 and 255."""
        write_pgm(path, self.grid)

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.grid))

    @property
    def shape(self) -> typing.Tuple[int, int]:
        return self.grid.shape

    def checkCamera(self, K: CameraIntrinsics) -> None:
        """Raise a `DimensionMismatch` if the mask does not fit the camera."""
        if self.shape != K.shape:
            raise DimensionMismatch("The mask does not fit the camera image",
                                    K.shape, self.shape)

    def __and__(self, other: "BinaryMask") -> "BinaryMask":
        return BinaryMask(self.grid & other.grid)

    def __or__(self, other: "BinaryMask") -> "BinaryMask":
        return BinaryMask(self.grid | other.grid)

@dataclasses.dataclass
class CertificateConfig:
    p: float = 0.9
    eps_3d: float = 0.01
    eps_2d: float = 0.1
    dilation_radius: int = 1

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Check the values.

        Raises
        ------
        ValueError
            When a threshold is out of range
        """
        if not 0 < self.p <= 1:
            raise ValueError("p must be in (0, 1], got {}.".format(self.p))
        if not self.eps_3d > 0:
            raise ValueError("eps_3d must be positive, got {}.".format(self.eps_3d))
        if not 0 < self.eps_2d < 1:
            raise ValueError("eps_2d must be in (0, 1), got {}.".format(self.eps_2d))
        if not (isinstance(self.dilation_radius, (int, np.integer)) and
                self.dilation_radius >= 0):
            raise ValueError("dilation_radius must be a nonnegative integer, " +
                             "got {}.".format(self.dilation_radius))

    @classmethod
    def forModel(cls, model: CadModel, **overrides) -> "CertificateConfig":
        """Get the defaults for the model, `eps_3d` is 4% of the diameter."""
        values = {"eps_3d": 0.04 * model.diameter}
        values.update(overrides)
        return cls(**values)

    def toDict(self) -> dict:
        return dataclasses.asdict(self)

@dataclasses.dataclass(frozen=True)
class CertificateResult:
    """The outcome of both checks, `oc` is their conjunction."""

    oc_3d: bool
    oc_2d: bool
    score_3d: float
    score_2d: float
    oc: bool = dataclasses.field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "oc_3d", bool(self.oc_3d))
        object.__setattr__(self, "oc_2d", bool(self.oc_2d))
        object.__setattr__(self, "oc", self.oc_3d and self.oc_2d)

    def toJson(self) -> dict:
        return {"oc": self.oc, "oc3d": self.oc_3d, "oc2d": self.oc_2d,
                "score3d": float(self.score_3d), "score2d": float(self.score_2d)}

def project_points(points: np.ndarray, K: CameraIntrinsics
                   ) -> typing.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project camera-frame points to the pixel grid.

    Pixel coordinates are rounded half up. Points at or behind the camera
    plane and points outside the image are marked invalid.

    Parameters
    ----------
    points : numpy.ndarray
        The 3xn points in the camera frame
    K : CameraIntrinsics
        The camera

    Returns
    -------
    numpy.ndarray, numpy.ndarray, numpy.ndarray
        The column indices `u`, the row indices `v` (both -1 where invalid)
        and the boolean validity of each point
    """
    points = as_points(points)
    z = points[2]
    in_front = z > 0
    safe_z = np.where(in_front, z, 1.0)

    u = np.floor(K.fx * points[0] / safe_z + K.cx + 0.5)
    v = np.floor(K.fy * points[1] / safe_z + K.cy + 0.5)
    valid = (in_front & np.isfinite(u) & np.isfinite(v) &
             (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height))

    u = np.where(valid, u, -1).astype(int)
    v = np.where(valid, v, -1).astype(int)
    return u, v, valid

def cert_3d(X: PointCloud, T_hat: Pose, model: CadModel,
            cfg: CertificateConfig) -> typing.Tuple[bool, float]:
    """Check that the `p`-th percentile of the closest-point distances of `X`
    to the posed model is below `eps_3d`.

    Returns
    -------
    bool, float
        The check result and the percentile distance
    """
    scores = nearest_distances(X, apply_pose(T_hat, model.dense_points))
    score = percentile(scores, cfg.p)
    return score < cfg.eps_3d, score

def render_mask(T_hat: Pose, model: CadModel, K: CameraIntrinsics,
                cfg: CertificateConfig) -> BinaryMask:
    """Render the silhouette of the posed model by splatting its dense sample.

    Every in-image point sets its pixel, the result is dilated with a square
    of side `2 * dilation_radius + 1`. Background regions enclosed by the
    splat are filled, the silhouette of a solid model has no holes.

    Raises
    ------
    EmptyProjection
        When no point of the posed model lands inside the image

    Parameters
    ----------
    T_hat : Pose
        The pose to render
    model : CadModel
        The object model
    K : CameraIntrinsics
        The camera
    cfg : CertificateConfig
        Provides the dilation radius

    Returns
    -------
    BinaryMask
        The rendered mask
    """
    u, v, valid = project_points(apply_pose(T_hat, model.dense_points), K)
    if not np.any(valid):
        raise EmptyProjection(("The posed model '{}' does not project into " +
                               "the image.").format(model.model_id))

    grid = np.zeros(K.shape, dtype=bool)
    grid[v[valid], u[valid]] = True

    radius = int(cfg.dilation_radius)
    if radius > 0:
        grid = binary_dilation(grid, structure=np.ones((2 * radius + 1, ) * 2,
                                                       dtype=bool))
    return BinaryMask(binary_fill_holes(grid))

def cert_2d(M: BinaryMask, M_hat: BinaryMask,
            cfg: CertificateConfig) -> typing.Tuple[bool, float]:
    """Check that the rendered mask covers more than `1 - eps_2d` of the
    detected mask.

    Raises
    ------
    DimensionMismatch
        When the masks differ in size
    EmptyDetectedMask
        When the detected mask is empty

    Returns
    -------
    bool, float
        The check result and the covered fraction of `M`
    """
    if M.shape != M_hat.shape:
        raise DimensionMismatch("The masks differ in size", M.shape, M_hat.shape)
    area = M.area
    if area == 0:
        raise EmptyDetectedMask("The detected mask has no pixels.")

    ratio = np.count_nonzero(M.grid & M_hat.grid) / area
    return ratio > 1 - cfg.eps_2d, float(ratio)

def observable_correctness(X: PointCloud, M: BinaryMask, T_hat: Pose,
                           model: CadModel, K: CameraIntrinsics,
                           cfg: CertificateConfig) -> CertificateResult:
    """Run both certificates on the pose estimate `T_hat`.

    A pose whose model does not project into the image fails the 2D check
    with a zero score.

    Raises
    ------
    EmptyDetectedMask
        When the detected mask is empty
    DimensionMismatch
        When the mask does not fit the camera
    """
    M.checkCamera(K)
    oc_3d, score_3d = cert_3d(X, T_hat, model, cfg)

    try:
        M_hat = render_mask(T_hat, model, K, cfg)
    except EmptyProjection:
        if M.area == 0:
            raise EmptyDetectedMask("The detected mask has no pixels.")
        logger.debug("Pose projects outside of the image, 2D check fails")
        return CertificateResult(oc_3d, False, score_3d, 0.0)

    oc_2d, score_2d = cert_2d(M, M_hat, cfg)
    return CertificateResult(oc_3d, oc_2d, score_3d, score_2d)
